"""The semi-supervised training step and loop.

Per iteration: per-class thresholds come from the pseudo-label state, the
unlabeled batch size from the batch-size curriculum, the loss weight and
learning rate from their schedules; a no-gradient weak pass proposes pseudo
labels; confident samples get a strong pass whose cross entropy (normalized
by the drawn batch size u_t, not the survivor count) joins the supervised
loss; one backward pass, one optimizer step, one EMA update.

``train`` drives a :class:`Trainer` from iteration 0 to T; the federated and
streaming simulators drive the same stepper in slices, swapping weights or
the visible unlabeled pool between slices.

The run log is an append-only JSONL stream: a header object, one object per
iteration, and one object per evaluation, all with fixed key order so a
seeded rerun reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .accounting import PassLedger, epochs, record_iteration
from .augment import AugmentPolicy, strong_augment_batch, weak_augment_batch
from .data import BatchCursor, Dataset, SslSplit
from .nn import Model, SGDMomentum, ema_update
from .rng import derive_key
from .schedules import (
    CplState,
    ScheduleConfig,
    cosine_lr,
    cpl_record_batch,
    cpl_thresholds,
    lambda_coeff,
    unlabeled_batch_size,
)
from . import tensor as T

__all__ = [
    "TrainConfig",
    "StepStats",
    "PseudoBatch",
    "EvalRecord",
    "TrainResult",
    "Trainer",
    "flags_label",
    "fixmatch_step",
    "train",
    "evaluate",
    "step_record",
]


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on, seed included."""

    schedule: ScheduleConfig
    dataset: Dataset
    split: SslSplit
    test_dataset: Dataset | None = None
    tau: float = 0.95
    cpl_enabled: bool = False
    labeled_strong_aug: bool = False
    seed: int = 0
    eval_every: int = 250
    target_accuracy: float | None = None
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_decay: float = 0.999
    strong_policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    model_widths: tuple[int, ...] = (32, 64, 128)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.target_accuracy is not None and not 0 < self.target_accuracy <= 1:
            raise ValueError("target_accuracy must lie in (0, 1]")

    @property
    def flags(self) -> str:
        return flags_label(
            self.schedule.cbs_enabled, self.labeled_strong_aug, self.cpl_enabled
        )


@dataclass
class StepStats:
    t: int
    u_t: int
    n_confident: int
    n_correct_confident: int
    supervised_loss: float
    unsupervised_loss: float
    lambda_t: float


@dataclass
class PseudoBatch:
    """Outcome of the no-gradient weak pass over one unlabeled batch."""

    weak_logits: np.ndarray
    pseudo_labels: np.ndarray
    confidences: np.ndarray
    mask: np.ndarray
    rows: np.ndarray
    strong_inputs: np.ndarray


@dataclass
class EvalRecord:
    t: int
    epoch_equivalent: float
    accuracy: float


@dataclass
class TrainResult:
    config: TrainConfig
    stats: list
    evals: list
    ledger: PassLedger
    model: Model
    cpl: CplState
    stopped_early: bool

    @property
    def final_accuracy(self) -> float | None:
        return self.evals[-1].accuracy if self.evals else None


def flags_label(cbs: bool, strong_labeled: bool, cpl: bool) -> str:
    parts = [
        name
        for enabled, name in ((cbs, "cbs"), (strong_labeled, "strongaug"), (cpl, "cpl"))
        if enabled
    ]
    return "+".join(parts) if parts else "vanilla"


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fixmatch_step(
    model: Model,
    opt: SGDMomentum,
    labeled_inputs: np.ndarray,
    labeled_targets: np.ndarray,
    unlabeled_weak: np.ndarray,
    strong_for_rows,
    thresholds: np.ndarray,
    lambda_t: float,
    t: int = 0,
    ema_decay: float = 0.999,
    unlabeled_true_labels: np.ndarray | None = None,
) -> tuple[float, StepStats, PseudoBatch]:
    """One training update.

    ``unlabeled_weak`` is the weak-augmented unlabeled batch (may be empty);
    ``strong_for_rows(rows)`` supplies strong-augmented inputs for exactly the
    confident row positions, so unconfident samples never see a strong pass.
    Pseudo labels come from an evaluation-mode weak pass with no recorded
    graph.  The total loss is supervised + lambda_t * unsupervised; the
    unsupervised term divides by the drawn batch size u_t.
    """
    u_t = len(unlabeled_weak)
    if u_t:
        weak_logits = model.predict(unlabeled_weak)
        probs = _softmax(weak_logits)
        pseudo = probs.argmax(axis=1)
        conf = probs[np.arange(u_t), pseudo]
        mask = conf > thresholds[pseudo]
        rows = np.flatnonzero(mask)
    else:
        weak_logits = np.zeros((0, model.num_classes), dtype=np.float32)
        pseudo = np.zeros(0, dtype=np.int64)
        conf = np.zeros(0, dtype=np.float64)
        mask = np.zeros(0, dtype=bool)
        rows = np.zeros(0, dtype=np.int64)

    strong_inputs = (
        strong_for_rows(rows)
        if len(rows)
        else np.zeros((0,) + tuple(labeled_inputs.shape[1:]), dtype=np.float32)
    )
    batch = PseudoBatch(
        weak_logits=weak_logits,
        pseudo_labels=pseudo,
        confidences=conf,
        mask=mask,
        rows=rows,
        strong_inputs=strong_inputs,
    )

    logits_l = model.forward(labeled_inputs, train=True)
    loss_s = T.softmax_cross_entropy(logits_l, labeled_targets)
    if len(rows):
        logits_strong = model.forward(strong_inputs, train=True)
        loss_u = T.softmax_cross_entropy(logits_strong, pseudo[rows], denom=u_t)
        total = T.add(loss_s, T.scale(loss_u, lambda_t))
        loss_u_value = float(loss_u.data)
    else:
        total = loss_s
        loss_u_value = 0.0

    if not np.isfinite(total.data):
        raise RuntimeError(
            f"non-finite loss at iteration {t}: supervised={float(loss_s.data)}, "
            f"unsupervised={loss_u_value}"
        )

    T.backward(total, params=model.params.values())
    opt.step()
    ema_update(model, ema_decay)

    if unlabeled_true_labels is not None and len(rows):
        known = unlabeled_true_labels[rows] >= 0
        n_correct = int((pseudo[rows][known] == unlabeled_true_labels[rows][known]).sum())
    else:
        n_correct = 0

    stats = StepStats(
        t=t,
        u_t=u_t,
        n_confident=int(len(rows)),
        n_correct_confident=n_correct,
        supervised_loss=float(loss_s.data),
        unsupervised_loss=loss_u_value,
        lambda_t=float(lambda_t),
    )
    return float(total.data), stats, batch


def evaluate(
    model: Model,
    test_dataset: Dataset,
    use_ema: bool = True,
    batch_size: int = 500,
    normalize=None,
) -> float:
    """Top-1 accuracy under frozen statistics with no augmentation.

    ``normalize`` must match whatever preprocessing training used; raw
    pixels go straight in when it is None.
    """
    n = len(test_dataset)
    if n == 0:
        raise ValueError("test set is empty")
    correct = 0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        x = test_dataset.images[start:stop]
        if normalize is not None:
            x = normalize(x)
        logits = model.predict(x, use_ema=use_ema)
        correct += int((logits.argmax(axis=1) == test_dataset.labels[start:stop]).sum())
    return correct / n


def step_record(stats: StepStats, lr: float, ledger: PassLedger) -> dict:
    """The per-iteration JSONL object, in its canonical key order."""
    return {
        "t": stats.t,
        "u_t": stats.u_t,
        "lambda": stats.lambda_t,
        "lr": lr,
        "n_confident": stats.n_confident,
        "n_correct_confident": stats.n_correct_confident,
        "loss_s": stats.supervised_loss,
        "loss_u": stats.unsupervised_loss,
        "fwd_total": ledger.forward_total,
        "bwd_total": ledger.backward_total,
    }


class Trainer:
    """Stateful stepper: model, optimizer, threshold state, cursors, ledger.

    ``step(t)`` runs exactly one iteration with the schedules evaluated at
    global iteration t.  Callers own the iteration sequence, which is what
    lets the federated simulator interleave clients and the streaming
    simulator swap the unlabeled pool between slices.
    """

    def __init__(
        self,
        config: TrainConfig,
        unlabeled_pool: np.ndarray | None = None,
        cursor_namespace: str | int = "main",
        normalization: tuple[np.ndarray, np.ndarray] | None = None,
    ):
        self.config = config
        self.dataset = config.dataset
        if normalization is None:
            normalization = self.dataset.channel_stats()
        self.norm_mean, self.norm_std = normalization

        self.model = Model(
            in_channels=self.dataset.images.shape[1],
            num_classes=self.dataset.class_count,
            widths=config.model_widths,
            seed=derive_key(config.seed, "model"),
        )
        self.opt = SGDMomentum(
            self.model, config.lr, config.momentum, config.weight_decay
        )
        self.cpl = CplState(
            n_samples=len(config.split.unlabeled_indices),
            n_classes=self.dataset.class_count,
            tau=config.tau,
            cpl_enabled=config.cpl_enabled,
        )
        # dataset index -> position in the full unlabeled pool, for the cache
        self.pool_position = np.full(len(self.dataset), -1, dtype=np.int64)
        self.pool_position[config.split.unlabeled_indices] = np.arange(
            len(config.split.unlabeled_indices)
        )

        self.cursor_namespace = cursor_namespace
        self.labeled_cursor = BatchCursor(
            config.split.labeled_indices,
            derive_key(config.seed, "cursor", cursor_namespace, "labeled"),
        )
        pool = (
            config.split.unlabeled_indices if unlabeled_pool is None else unlabeled_pool
        )
        self.unlabeled_cursor = BatchCursor(
            pool, derive_key(config.seed, "cursor", cursor_namespace, "unlabeled", 0)
        )
        self._pool_swaps = 0
        self.weak_key = derive_key(config.seed, "augment", "weak")
        self.strong_key = derive_key(config.seed, "augment", "strong")
        self.ledger = PassLedger(dataset_size=len(self.dataset))
        self.stats: list[StepStats] = []
        self.evals: list[EvalRecord] = []

    def set_unlabeled_pool(self, indices: np.ndarray) -> None:
        """Replace the unlabeled pool (streaming expansion); reshuffles."""
        self._pool_swaps += 1
        self.unlabeled_cursor = BatchCursor(
            indices,
            derive_key(
                self.config.seed,
                "cursor",
                self.cursor_namespace,
                "unlabeled",
                self._pool_swaps,
            ),
        )

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.norm_mean[None, :, None, None]) / self.norm_std[
            None, :, None, None
        ]

    def load_weights_from(self, other: Model) -> None:
        """Adopt another model's parameters, EMA shadows, and buffers."""
        for name, p in self.model.params.items():
            p.data[...] = other.params[name].data
            self.model.ema[name][...] = other.ema[name]
        for name, buf in self.model.bufs.items():
            buf[...] = other.bufs[name]

    def step(self, t: int) -> StepStats:
        config = self.config
        sched = config.schedule
        thresholds = cpl_thresholds(self.cpl)
        u_t = unlabeled_batch_size(sched, t)
        lam = lambda_coeff(sched, u_t)
        self.opt.lr = cosine_lr(config.lr, t, sched.T)

        labeled_idx = self.labeled_cursor.next_batch(sched.l)
        unlabeled_idx = self.unlabeled_cursor.next_batch(u_t)

        labeled_raw = self.dataset.images[labeled_idx]
        if config.labeled_strong_aug:
            labeled_inputs = strong_augment_batch(
                labeled_raw, self.strong_key, t, labeled_idx, config.strong_policy
            )
        else:
            labeled_inputs = weak_augment_batch(
                labeled_raw, self.weak_key, t, labeled_idx
            )
        unlabeled_weak = weak_augment_batch(
            self.dataset.images[unlabeled_idx], self.weak_key, t, unlabeled_idx
        )

        def strong_for_rows(rows):
            chosen = unlabeled_idx[rows]
            return self.normalize(
                strong_augment_batch(
                    self.dataset.images[chosen],
                    self.strong_key,
                    t,
                    chosen,
                    config.strong_policy,
                )
            )

        _, stats, batch = fixmatch_step(
            self.model,
            self.opt,
            self.normalize(labeled_inputs),
            self.dataset.labels[labeled_idx],
            self.normalize(unlabeled_weak),
            strong_for_rows,
            thresholds,
            lam,
            t=t,
            ema_decay=config.ema_decay,
            unlabeled_true_labels=self.dataset.labels[unlabeled_idx],
        )

        if u_t:
            cpl_record_batch(
                self.cpl,
                self.pool_position[unlabeled_idx],
                batch.pseudo_labels,
                batch.confidences,
            )

        record_iteration(self.ledger, len(labeled_idx), u_t, stats.n_confident)
        self.stats.append(stats)
        return stats

    def eval_now(self, t: int) -> EvalRecord:
        if self.config.test_dataset is None:
            raise ValueError("no test dataset configured")
        try:
            accuracy = evaluate(
                self.model,
                self.config.test_dataset,
                use_ema=True,
                normalize=self.normalize,
            )
        except Exception as exc:
            raise RuntimeError(f"evaluation failed at iteration {t}: {exc}") from exc
        record = EvalRecord(t=t, epoch_equivalent=epochs(self.ledger), accuracy=accuracy)
        self.evals.append(record)
        return record


class JsonlWriter:
    """Single-writer JSONL stream; writes nothing when path is None."""

    def __init__(self, path):
        self._fh = open(path, "w") if path is not None else None

    def write(self, obj: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(obj, separators=(",", ":")) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def run_header(config: TrainConfig, extra: dict | None = None) -> dict:
    mean, std = config.dataset.channel_stats()
    header = {
        "flags": config.flags,
        "seed": config.seed,
        "T": config.schedule.T,
        "l": config.schedule.l,
        "u": config.schedule.u,
        "alpha": config.schedule.alpha,
        "tau": config.tau,
        "dataset": config.dataset.name,
        "dataset_size": len(config.dataset),
        "n_labeled": int(len(config.split.labeled_indices)),
        "target_accuracy": config.target_accuracy,
        "norm_mean": [float(v) for v in mean],
        "norm_std": [float(v) for v in std],
    }
    if extra:
        header.update(extra)
    return header


def train(config: TrainConfig, jsonl_path=None, progress=None) -> TrainResult:
    """Run the full loop; optionally stream records to ``jsonl_path``.

    ``progress``, if given, is called as progress(t, T) every 1000 iterations.
    """
    trainer = Trainer(config)
    sched = config.schedule
    stopped_early = False
    writer = JsonlWriter(jsonl_path)
    writer.write(run_header(config))
    try:
        for t in range(sched.T):
            stats = trainer.step(t)
            writer.write(step_record(stats, trainer.opt.lr, trainer.ledger))
            if progress is not None and (t + 1) % 1000 == 0:
                progress(t + 1, sched.T)
            if (t + 1) % config.eval_every == 0 or t == sched.T - 1:
                if config.test_dataset is not None:
                    record = trainer.eval_now(t)
                    writer.write(
                        {
                            "t": record.t,
                            "epoch_equivalent": record.epoch_equivalent,
                            "accuracy": record.accuracy,
                        }
                    )
                    if (
                        config.target_accuracy is not None
                        and record.accuracy >= config.target_accuracy
                    ):
                        stopped_early = True
                        break
    finally:
        writer.close()

    return TrainResult(
        config=config,
        stats=trainer.stats,
        evals=trainer.evals,
        ledger=trainer.ledger,
        model=trainer.model,
        cpl=trainer.cpl,
        stopped_early=stopped_early,
    )
