"""Streaming semi-supervised training: unlabeled data arrives in chunks.

The unlabeled pool is cut into class-balanced chunks from a seeded shuffle.
Only the first chunk is visible at the start; one more becomes visible each
time the iteration count crosses a multiple of T/n_chunks, so the last chunk
lands at the final threshold and the visible set ends at the full pool.  The
labeled set, schedules, and threshold state are those of the standard loop;
never-seen samples simply stay in the "never confident" bucket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accounting import PassLedger
from .data import Dataset
from .engine import (
    JsonlWriter,
    TrainConfig,
    Trainer,
    run_header,
    step_record,
)
from .rng import make_rng
from .schedules import CplState

__all__ = [
    "StreamPlan",
    "StreamResult",
    "make_chunks",
    "visible_chunks",
    "visible_count",
    "run_streaming",
]


@dataclass(frozen=True)
class StreamPlan:
    """Chunked visibility schedule for the unlabeled pool."""

    n_chunks: int = 10

    def __post_init__(self):
        if self.n_chunks < 1:
            raise ValueError("n_chunks must be at least 1")

    def thresholds(self, T: int) -> list[int]:
        """Iterations at which chunks 1..n-1 become visible."""
        return [(j * T) // self.n_chunks for j in range(1, self.n_chunks)]


def visible_chunks(plan: StreamPlan, T: int, t: int) -> int:
    """How many chunks are visible at iteration t (a step function)."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return 1 + sum(1 for threshold in plan.thresholds(T) if t >= threshold)


def make_chunks(
    plan: StreamPlan, dataset: Dataset, unlabeled_indices: np.ndarray, seed: int
) -> list[np.ndarray]:
    """Class-balanced chunks of the unlabeled pool.

    Per-class index lists are shuffled, interleaved class by class, and the
    interleaved sequence is sliced into n_chunks pieces with the ceil-sized
    pieces first, so chunk 0 has exactly ceil(U / n_chunks) samples.
    """
    rng = make_rng(seed, "stream-chunks")
    pool = np.asarray(unlabeled_indices, dtype=np.int64)
    labels = dataset.labels[pool]
    stacks = []
    for c in list(range(dataset.class_count)) + [-1]:
        members = pool[labels == c]
        if len(members):
            stacks.append(list(rng.permutation(members)))
    interleaved: list[int] = []
    while stacks:
        for stack in stacks:
            interleaved.append(stack.pop())
        stacks = [s for s in stacks if s]
    order = np.asarray(interleaved, dtype=np.int64)

    n = len(order)
    base, extra = divmod(n, plan.n_chunks)
    sizes = [base + (1 if j < extra else 0) for j in range(plan.n_chunks)]
    chunks, start = [], 0
    for size in sizes:
        chunks.append(order[start : start + size])
        start += size
    return chunks


def visible_count(plan: StreamPlan, T: int, U: int, t: int) -> int:
    """Visible-pool size at iteration t, matching the chunk construction."""
    k = visible_chunks(plan, T, t)
    base, extra = divmod(U, plan.n_chunks)
    return base * k + min(k, extra)


@dataclass
class StreamResult:
    config: TrainConfig
    plan: StreamPlan
    stats: list
    evals: list
    ledger: PassLedger
    model: object
    cpl: CplState
    visible_series: list
    stopped_early: bool

    @property
    def final_accuracy(self) -> float | None:
        return self.evals[-1].accuracy if self.evals else None


def run_streaming(
    config: TrainConfig,
    plan: StreamPlan | None = None,
    jsonl_path=None,
    progress=None,
) -> StreamResult:
    """The standard loop with chunked unlabeled visibility.

    Expansion thresholds, the visible-set series, and all training records go
    to the JSONL stream; the schedule runs over the global iteration index
    with no per-chunk reset.
    """
    plan = plan or StreamPlan()
    sched = config.schedule
    chunks = make_chunks(plan, config.dataset, config.split.unlabeled_indices, config.seed)
    thresholds = plan.thresholds(sched.T)

    trainer = Trainer(config, unlabeled_pool=chunks[0], cursor_namespace="stream")
    n_visible = 1
    visible_series: list[tuple[int, int]] = [(0, len(chunks[0]))]
    stopped_early = False

    writer = JsonlWriter(jsonl_path)
    writer.write(
        run_header(
            config,
            extra={"n_chunks": plan.n_chunks, "chunk_thresholds": thresholds},
        )
    )
    try:
        for t in range(sched.T):
            want_visible = visible_chunks(plan, sched.T, t)
            if want_visible > n_visible:
                n_visible = want_visible
                pool = np.concatenate(chunks[:n_visible])
                trainer.set_unlabeled_pool(pool)
                visible_series.append((t, len(pool)))
                writer.write({"t": t, "visible_unlabeled": len(pool)})

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

    return StreamResult(
        config=config,
        plan=plan,
        stats=trainer.stats,
        evals=trainer.evals,
        ledger=trainer.ledger,
        model=trainer.model,
        cpl=trainer.cpl,
        visible_series=visible_series,
        stopped_early=stopped_early,
    )
