"""Scheduling mathematics: batch-size curriculum, loss weight, learning rate,
and per-class confidence thresholds.

The batch-size curve is the bounded exponential

    u_t = u * (1 - (1 - t/T) / ((1 - alpha) + alpha * (1 - t/T)))

which starts at 0, ends at u, and spends most of its time low for alpha near
1.  Per-class thresholds follow the convex learning-status map x / (2 - x)
over cached confident-prediction counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScheduleConfig",
    "bexp",
    "unlabeled_batch_size",
    "mean_bexp_fraction",
    "overall_fraction_candidates",
    "lambda_coeff",
    "cosine_lr",
    "CplState",
    "cpl_record",
    "cpl_record_batch",
    "cpl_thresholds",
]


@dataclass(frozen=True)
class ScheduleConfig:
    """Batch-plan knobs shared by every training variant.

    ``u`` defaults to ``mu * l`` so the unlabeled/labeled ratio is the single
    source of truth; passing ``u`` explicitly must agree with ``mu * l``.
    """

    l: int = 64
    mu: int = 7
    u: int | None = None
    T: int = 1024
    alpha: float = 0.7
    cbs_enabled: bool = False
    base_lambda: float = 1.0

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("l must be at least 1")
        if self.mu < 1:
            raise ValueError("mu must be at least 1")
        if self.u is None:
            object.__setattr__(self, "u", self.mu * self.l)
        elif self.u != self.mu * self.l:
            raise ValueError(
                f"u={self.u} contradicts mu*l={self.mu * self.l}; set one or the other"
            )
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.T < 1:
            raise ValueError("T must be at least 1")


def bexp(u: float, t, T: int, alpha: float):
    """Bounded-exponential batch-size curve; accepts scalar or array t."""
    if T == 0:
        raise ValueError("T must be nonzero")
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    remaining = 1.0 - np.asarray(t, dtype=np.float64) / T
    value = u * (1.0 - remaining / ((1.0 - alpha) + alpha * remaining))
    if np.ndim(t) == 0:
        return float(value)
    return value


def unlabeled_batch_size(cfg: ScheduleConfig, t: int) -> int:
    """Integer u_t for iteration t: the rounded curve if the curriculum is on,
    else the full batch."""
    if not 0 <= t < cfg.T:
        raise ValueError(f"t={t} outside [0, {cfg.T})")
    if not cfg.cbs_enabled:
        return cfg.u
    value = int(round(bexp(cfg.u, t, cfg.T, cfg.alpha)))
    return min(max(value, 0), cfg.u)


def mean_bexp_fraction(alpha: float) -> float:
    """Continuous average of the curve over a full run, as a fraction of u.

    Closed form 1 - 1/alpha + ((1-alpha)/alpha^2) * ln(1/(1-alpha)).  The
    alpha -> 0 limit is 1/2 but is not computed here; alpha=0 is rejected.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly between 0 and 1")
    return 1.0 - 1.0 / alpha + ((1.0 - alpha) / alpha**2) * np.log(1.0 / (1.0 - alpha))


def overall_fraction_candidates(cfg: ScheduleConfig) -> dict[str, float]:
    """Candidate definitions of the whole-batch (labeled + unlabeled) average
    size as a fraction of the maximum l + u.

    No single published figure pins the definition down, so the plausible
    formulas are reported side by side rather than blessing one.
    """
    m = mean_bexp_fraction(cfg.alpha)
    return {
        "unlabeled_only": m,
        "batch_weighted": (cfg.l + m * cfg.u) / (cfg.l + cfg.u),
        "pass_weighted_full_conf": (2 * cfg.l + 3 * m * cfg.u) / (2 * cfg.l + 3 * cfg.u),
    }


def lambda_coeff(cfg: ScheduleConfig, u_t: int) -> float:
    """Unsupervised-loss weight, linear in the drawn unlabeled batch size."""
    return cfg.base_lambda * u_t / cfg.l


def cosine_lr(lr0: float, t: int, T: int) -> float:
    """Cosine decay lr0 * cos(7 pi t / (16 T)); never reaches zero."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return lr0 * float(np.cos(7.0 * np.pi * t / (16.0 * T)))


@dataclass
class CplState:
    """Per-class learning status for dynamic thresholds.

    ``sample_predictions[i]`` caches the last confident argmax class for
    unlabeled sample i (-1 until the first confident prediction); ``sigma``
    counts cached predictions per class.  The two are kept consistent by the
    update path and checked against a brute-force recount in the tests.
    """

    n_samples: int = 0
    n_classes: int = 10
    tau: float = 0.95
    cpl_enabled: bool = False
    sample_predictions: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.n_samples < 0 or self.n_classes < 1:
            raise ValueError("invalid CplState sizes")
        self.sample_predictions = np.full(self.n_samples, -1, dtype=np.int64)
        self.sigma = np.zeros(self.n_classes, dtype=np.int64)

    @property
    def unused_count(self) -> int:
        return int(self.n_samples - self.sigma.sum())


def cpl_record(
    state: CplState, sample_index: int, predicted_class: int, confidence: float
) -> CplState:
    """Cache one weak-pass prediction if its confidence clears the fixed tau.

    Returns the same (mutated) state for call chaining.
    """
    if not 0 <= sample_index < state.n_samples:
        raise IndexError(
            f"sample_index {sample_index} outside [0, {state.n_samples})"
        )
    if not 0 <= predicted_class < state.n_classes:
        raise ValueError(f"predicted_class {predicted_class} out of range")
    if confidence > state.tau:
        previous = state.sample_predictions[sample_index]
        if previous >= 0:
            state.sigma[previous] -= 1
        state.sample_predictions[sample_index] = predicted_class
        state.sigma[predicted_class] += 1
    return state


def cpl_record_batch(
    state: CplState,
    sample_indices: np.ndarray,
    predicted_classes: np.ndarray,
    confidences: np.ndarray,
) -> CplState:
    """Vectorized :func:`cpl_record` over one drawn batch.

    Matches the sequential semantics exactly; when a tiny pool wraps inside
    one batch an index can repeat, and the last update wins.
    """
    idx = np.asarray(sample_indices)
    hit = np.asarray(confidences) > state.tau
    if not hit.any():
        return state
    idx = idx[hit]
    cls = np.asarray(predicted_classes)[hit]
    if len(idx) > 1:
        _, first_in_reverse = np.unique(idx[::-1], return_index=True)
        keep = len(idx) - 1 - first_in_reverse
        idx, cls = idx[keep], cls[keep]
    previous = state.sample_predictions[idx]
    replaced = previous[previous >= 0]
    np.subtract.at(state.sigma, replaced, 1)
    state.sample_predictions[idx] = cls
    np.add.at(state.sigma, cls, 1)
    return state


def cpl_thresholds(state: CplState) -> np.ndarray:
    """Per-class thresholds T_c in [0, tau].

    Learning status beta_c = sigma(c) / max(max sigma, never-confident count)
    passes through the convex map M(x) = x / (2 - x); beta is defined as 1
    for every class while the denominator is zero.  Disabled state returns a
    flat tau vector.
    """
    if not state.cpl_enabled:
        return np.full(state.n_classes, state.tau)
    denom = max(int(state.sigma.max()), state.unused_count)
    if denom == 0:
        beta = np.ones(state.n_classes)
    else:
        beta = state.sigma / denom
    return (beta / (2.0 - beta)) * state.tau
