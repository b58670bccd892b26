"""Exact training-compute bookkeeping and data-utilization metrics.

The unit is the pass: one forward or backward traversal of the model for one
sample.  An iteration with l_t labeled and u_t unlabeled samples of which
n_confident cleared their thresholds costs

    forward  += l_t + u_t + n_confident
    backward += l_t + n_confident

(the strong pass is priced only for confident samples).  Epochs are passes
divided by 2x the dataset size, so the unit survives schedule changes.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

__all__ = [
    "PassLedger",
    "UtilizationReport",
    "record_iteration",
    "epochs",
    "merge_ledgers",
    "utilization",
    "write_summary_csv",
    "write_figure1_csv",
    "SUMMARY_FIELDS",
]

HISTORY_WINDOW = 10

SUMMARY_FIELDS = (
    "flags",
    "total_forward",
    "total_backward",
    "epochs",
    "total_utilization",
    "epochs_to_target",
)


@dataclass
class PassLedger:
    """Cumulative pass totals plus a short history for running metrics."""

    dataset_size: int
    forward_total: int = 0
    backward_total: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_WINDOW))

    def __post_init__(self):
        if self.dataset_size <= 0:
            raise ValueError("dataset_size must be positive")


def record_iteration(ledger: PassLedger, l_t: int, u_t: int, n_confident: int) -> PassLedger:
    """Charge one iteration to the ledger; returns it for chaining."""
    if n_confident > u_t:
        raise ValueError(f"n_confident={n_confident} exceeds u_t={u_t}")
    if min(l_t, u_t, n_confident) < 0:
        raise ValueError("pass counts must be non-negative")
    ledger.forward_total += l_t + u_t + n_confident
    ledger.backward_total += l_t + n_confident
    ledger.history.append((u_t, n_confident))
    return ledger


def epochs(ledger: PassLedger) -> float:
    """(forward + backward) / (2 * dataset size)."""
    return (ledger.forward_total + ledger.backward_total) / (2.0 * ledger.dataset_size)


def merge_ledgers(ledgers) -> PassLedger:
    """Sum pass totals across runs that share one dataset (order-free)."""
    ledgers = list(ledgers)
    if not ledgers:
        raise ValueError("nothing to merge")
    sizes = {ledger.dataset_size for ledger in ledgers}
    if len(sizes) > 1:
        raise ValueError(f"ledgers disagree on dataset_size: {sorted(sizes)}")
    merged = PassLedger(dataset_size=ledgers[0].dataset_size)
    for ledger in ledgers:
        merged.forward_total += ledger.forward_total
        merged.backward_total += ledger.backward_total
    return merged


@dataclass
class UtilizationReport:
    """Confidence rates at three granularities.

    ``batch`` is n_confident/u_t per iteration (None when u_t=0); ``running``
    averages the defined batch values over the trailing 10 iterations;
    ``total`` is the whole-run ratio of sums (None when no unlabeled sample
    was ever drawn).
    """

    batch: list
    running: list
    total: float | None


def _pair(entry) -> tuple[int, int]:
    u_t = getattr(entry, "u_t", None)
    if u_t is not None:
        return int(u_t), int(entry.n_confident)
    u_t, n_confident = entry[0], entry[1]
    return int(u_t), int(n_confident)


def utilization(stream) -> UtilizationReport:
    """Compute the three utilization figures from a stats stream.

    Entries may be any objects with ``u_t``/``n_confident`` attributes or
    (u_t, n_confident) pairs.
    """
    pairs = [_pair(entry) for entry in stream]
    if not pairs:
        raise ValueError("empty stats stream")
    batch = [(n / u if u else None) for u, n in pairs]
    running: list = []
    window: deque = deque(maxlen=HISTORY_WINDOW)
    for value in batch:
        window.append(value)
        defined = [v for v in window if v is not None]
        running.append(sum(defined) / len(defined) if defined else None)
    total_u = sum(u for u, _ in pairs)
    total_n = sum(n for _, n in pairs)
    return UtilizationReport(
        batch=batch,
        running=running,
        total=(total_n / total_u) if total_u else None,
    )


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_summary_row(
    flags: str,
    dataset_size: int,
    forward_total: int,
    backward_total: int,
    stats,
    evals,
    target_accuracy: float | None,
) -> dict:
    """The one-line-per-run summary, shared by live runs and post-hoc
    analysis of their streams so the two agree exactly.

    ``evals`` entries need ``accuracy`` and ``epoch_equivalent`` attributes;
    ``epochs_to_target`` is the first evaluation at or above the target.
    """
    stats = list(stats)
    epochs_to_target = None
    if target_accuracy is not None:
        for record in evals:
            if record.accuracy >= target_accuracy:
                epochs_to_target = record.epoch_equivalent
                break
    return {
        "flags": flags,
        "total_forward": forward_total,
        "total_backward": backward_total,
        "epochs": (forward_total + backward_total) / (2.0 * dataset_size),
        "total_utilization": utilization(stats).total if stats else None,
        "epochs_to_target": epochs_to_target,
    }


def write_summary_csv(path, rows) -> None:
    """One row per run: flags, pass totals, epochs, utilization, target cost."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            writer.writerow([_format(row[name]) for name in SUMMARY_FIELDS])


def write_figure1_csv(path, stats) -> None:
    """Per-iteration confident counts averaged over the trailing 10
    iterations, in the style of the utilization training curves."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "u_t", "n_confident_avg10", "n_correct_avg10"))
        confident: deque = deque(maxlen=HISTORY_WINDOW)
        correct: deque = deque(maxlen=HISTORY_WINDOW)
        for s in stats:
            confident.append(s.n_confident)
            correct.append(s.n_correct_confident)
            writer.writerow(
                (
                    s.t,
                    s.u_t,
                    _format(sum(confident) / len(confident)),
                    _format(sum(correct) / len(correct)),
                )
            )
