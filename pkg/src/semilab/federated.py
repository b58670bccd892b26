"""Federated semi-supervised training over non-iid client shards.

Clients are split into groups; each group is dominated by a contiguous block
of classes (an 80/20 in-block/out-of-block mixture, subject to supply), and
every round samples one client per group.  Sampled clients copy the global
weights, run a slice of the shared iteration schedule locally, and the new
global model is the unweighted elementwise mean of what they send back.

Rounds may fan clients out across threads; everything a client touches is
its own, and aggregation happens in client order, so results are identical
whatever the interleaving.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .accounting import PassLedger, epochs, merge_ledgers
from .augment import AugmentPolicy
from .data import Dataset, SslSplit
from .engine import Trainer, TrainConfig, evaluate, JsonlWriter
from .nn import Model
from .rng import make_rng
from .schedules import ScheduleConfig

__all__ = [
    "FederatedConfig",
    "ClientState",
    "RoundRecord",
    "FederatedResult",
    "partition_noniid",
    "fedavg",
    "run_federated",
]


@dataclass(frozen=True)
class FederatedConfig:
    """Federation shape plus the per-client training knobs."""

    dataset: Dataset
    test_dataset: Dataset | None = None
    n_clients: int = 100
    n_groups: int = 4
    clients_per_round: int = 4
    rounds: int = 50
    local_iterations: int = 40
    labeled_per_client: int = 10
    in_block_fraction: float = 0.8
    seed: int = 0
    target_accuracy: float | None = None
    # engine knobs, shared by every client
    l: int = 64
    mu: int = 7
    alpha: float = 0.7
    cbs_enabled: bool = False
    base_lambda: float = 1.0
    tau: float = 0.95
    cpl_enabled: bool = False
    labeled_strong_aug: bool = False
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_decay: float = 0.999
    strong_policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    model_widths: tuple[int, ...] = (32, 64, 128)
    max_workers: int | None = None

    def __post_init__(self):
        if self.n_clients % self.n_groups:
            raise ValueError(
                f"n_clients={self.n_clients} not divisible by n_groups={self.n_groups}"
            )
        if self.clients_per_round != self.n_groups:
            raise ValueError("clients_per_round must equal n_groups (one per group)")
        if self.rounds < 1 or self.local_iterations < 0:
            raise ValueError("rounds must be >= 1 and local_iterations >= 0")
        if not 0 < self.in_block_fraction <= 1:
            raise ValueError("in_block_fraction must lie in (0, 1]")

    @property
    def total_iterations(self) -> int:
        return self.rounds * self.local_iterations


@dataclass
class ClientState:
    client_id: int
    group_id: int
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray
    trainer: Trainer | None = None


def class_blocks(n_classes: int, n_groups: int) -> list[np.ndarray]:
    """Contiguous class blocks, one per group, sizes within 1 of each other."""
    bounds = [(g * n_classes) // n_groups for g in range(n_groups + 1)]
    return [
        np.arange(bounds[g], bounds[g + 1], dtype=np.int64) for g in range(n_groups)
    ]


def partition_noniid(dataset: Dataset, cfg: FederatedConfig) -> list[ClientState]:
    """Disjoint, exhaustive unlabeled shards with group-skewed classes.

    Group g's clients draw from class block g first (up to the in-block
    target, capped by supply), the rest from other blocks with the largest
    remaining supply.  Each client's labeled indices are a uniform sample of
    its own unlabeled shard.
    """
    n = len(dataset)
    if n < cfg.n_clients:
        raise ValueError(f"dataset of {n} samples cannot feed {cfg.n_clients} clients")
    rng = make_rng(cfg.seed, "partition")
    blocks = class_blocks(dataset.class_count, cfg.n_groups)

    # per-block shuffled index pools; unlabeled (-1) samples go to block 0
    block_of_class = np.empty(dataset.class_count, dtype=np.int64)
    for g, members in enumerate(blocks):
        block_of_class[members] = g
    sample_block = np.where(
        dataset.labels >= 0, block_of_class[np.maximum(dataset.labels, 0)], 0
    )
    pools = [list(rng.permutation(np.flatnonzero(sample_block == g))) for g in range(cfg.n_groups)]
    supply = [len(p) for p in pools]

    base, extra = divmod(n, cfg.n_clients)
    shard_sizes = [base + (1 if i < extra else 0) for i in range(cfg.n_clients)]
    clients_per_group = cfg.n_clients // cfg.n_groups

    # Reserve every group's upcoming in-block demand so earlier clients'
    # out-of-block draws only consume genuine surplus.
    want_in = [round(cfg.in_block_fraction * s) for s in shard_sizes]
    reserved = [0] * cfg.n_groups
    for client_id in range(cfg.n_clients):
        reserved[client_id // clients_per_group] += want_in[client_id]
    reserved = [min(r, s) for r, s in zip(reserved, supply)]

    clients: list[ClientState] = []
    for client_id in range(cfg.n_clients):
        group_id = client_id // clients_per_group
        size = shard_sizes[client_id]
        take_in = min(want_in[client_id], supply[group_id])
        shard = [pools[group_id].pop() for _ in range(take_in)]
        supply[group_id] -= take_in
        reserved[group_id] = max(0, reserved[group_id] - take_in)
        need = size - take_in
        while need > 0:
            # largest unreserved surplus outside the own block; if every
            # surplus is spoken for, fall back to raw supply
            spare = [supply[g] - reserved[g] for g in range(cfg.n_groups)]
            order = sorted(
                (g for g in range(cfg.n_groups) if spare[g] > 0),
                key=lambda g: (g == group_id, -spare[g], g),
            )
            if order:
                g = order[0]
                take = min(need, spare[g])
            else:
                order = sorted(
                    (g for g in range(cfg.n_groups) if supply[g] > 0),
                    key=lambda g: (g == group_id, -supply[g], g),
                )
                if not order:
                    raise ValueError("ran out of samples while building shards")
                g = order[0]
                take = min(need, supply[g])
            for _ in range(take):
                shard.append(pools[g].pop())
            supply[g] -= take
            reserved[g] = min(reserved[g], supply[g])
            need -= take
        shard_arr = np.asarray(sorted(shard), dtype=np.int64)
        n_labeled = min(cfg.labeled_per_client, len(shard_arr))
        labeled = np.sort(rng.choice(shard_arr, size=n_labeled, replace=False))
        clients.append(
            ClientState(
                client_id=client_id,
                group_id=group_id,
                labeled_indices=labeled,
                unlabeled_indices=shard_arr,
            )
        )
    return clients


def fedavg(models: list[Model]) -> Model:
    """Unweighted elementwise mean of parameters, EMA shadows, and running
    statistics; returns a fresh model."""
    if not models:
        raise ValueError("fedavg needs at least one model")
    first = models[0]
    merged = Model(
        in_channels=first.in_channels,
        num_classes=first.num_classes,
        widths=first.widths,
        dtype=first.dtype,
    )
    k = len(models)
    for name, p in merged.params.items():
        stack = []
        for m in models:
            other = m.params[name].data
            if other.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {other.shape} != {p.data.shape}"
                )
            stack.append(other)
        p.data[...] = np.sum(stack, axis=0) / k
        merged.ema[name][...] = np.sum([m.ema[name] for m in models], axis=0) / k
    for name, buf in merged.bufs.items():
        buf[...] = np.sum([m.bufs[name] for m in models], axis=0) / k
    return merged


@dataclass
class RoundRecord:
    round: int
    sampled_clients: list[int]
    global_accuracy: float | None
    cumulative_epochs: float


@dataclass
class FederatedResult:
    config: FederatedConfig
    clients: list[ClientState]
    rounds: list[RoundRecord]
    model: Model
    ledger: PassLedger
    stopped_early: bool

    @property
    def final_accuracy(self) -> float | None:
        for record in reversed(self.rounds):
            if record.global_accuracy is not None:
                return record.global_accuracy
        return None


def _client_trainer(cfg: FederatedConfig, client: ClientState) -> Trainer:
    schedule = ScheduleConfig(
        l=cfg.l,
        mu=cfg.mu,
        T=max(cfg.total_iterations, 1),
        alpha=cfg.alpha,
        cbs_enabled=cfg.cbs_enabled,
        base_lambda=cfg.base_lambda,
    )
    config = TrainConfig(
        schedule=schedule,
        dataset=cfg.dataset,
        split=SslSplit(
            labeled_indices=client.labeled_indices,
            unlabeled_indices=client.unlabeled_indices,
            seed=cfg.seed,
        ),
        test_dataset=None,
        tau=cfg.tau,
        cpl_enabled=cfg.cpl_enabled,
        labeled_strong_aug=cfg.labeled_strong_aug,
        seed=cfg.seed,
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        ema_decay=cfg.ema_decay,
        strong_policy=cfg.strong_policy,
        model_widths=cfg.model_widths,
    )
    return Trainer(
        config,
        cursor_namespace=f"client{client.client_id}",
        normalization=cfg.dataset.channel_stats(),
    )


def run_federated(cfg: FederatedConfig, jsonl_path=None, progress=None) -> FederatedResult:
    """Round-based training: broadcast, local slices, average, evaluate."""
    clients = partition_noniid(cfg.dataset, cfg)
    global_model = Model(
        in_channels=cfg.dataset.images.shape[1],
        num_classes=cfg.dataset.class_count,
        widths=cfg.model_widths,
        seed=cfg.seed,
    )
    clients_per_group = cfg.n_clients // cfg.n_groups
    norm_mean, norm_std = cfg.dataset.channel_stats()

    def normalize(x: np.ndarray) -> np.ndarray:
        return (x - norm_mean[None, :, None, None]) / norm_std[None, :, None, None]

    writer = JsonlWriter(jsonl_path)
    writer.write(
        {
            "n_clients": cfg.n_clients,
            "n_groups": cfg.n_groups,
            "rounds": cfg.rounds,
            "local_iterations": cfg.local_iterations,
            "labeled_per_client": cfg.labeled_per_client,
            "seed": cfg.seed,
            "flags": f"cbs={cfg.cbs_enabled},strongaug={cfg.labeled_strong_aug},cpl={cfg.cpl_enabled}",
            "dataset": cfg.dataset.name,
            "dataset_size": len(cfg.dataset),
            "target_accuracy": cfg.target_accuracy,
        }
    )

    rounds: list[RoundRecord] = []
    stopped_early = False
    try:
        for r in range(cfg.rounds):
            sample_rng = make_rng(cfg.seed, "round", r)
            sampled = [
                g * clients_per_group + int(sample_rng.integers(clients_per_group))
                for g in range(cfg.n_groups)
            ]

            def run_local(client_id: int) -> Model:
                client = clients[client_id]
                if client.trainer is None:
                    client.trainer = _client_trainer(cfg, client)
                client.trainer.load_weights_from(global_model)
                # fresh local optimizer momentum each round
                for v in client.trainer.opt.velocity.values():
                    v[...] = 0.0
                start = r * cfg.local_iterations
                for j in range(cfg.local_iterations):
                    client.trainer.step(start + j)
                return client.trainer.model

            if cfg.max_workers == 1 or len(sampled) == 1:
                local_models = [run_local(cid) for cid in sampled]
            else:
                with ThreadPoolExecutor(
                    max_workers=cfg.max_workers or len(sampled)
                ) as pool:
                    local_models = list(pool.map(run_local, sampled))

            global_model = fedavg(local_models)

            ledger = merge_ledgers(
                [c.trainer.ledger for c in clients if c.trainer is not None]
            )
            accuracy = (
                evaluate(global_model, cfg.test_dataset, use_ema=True, normalize=normalize)
                if cfg.test_dataset is not None
                else None
            )
            record = RoundRecord(
                round=r,
                sampled_clients=sampled,
                global_accuracy=accuracy,
                cumulative_epochs=epochs(ledger),
            )
            rounds.append(record)
            writer.write(
                {
                    "round": record.round,
                    "sampled_clients": record.sampled_clients,
                    "global_accuracy": record.global_accuracy,
                    "cumulative_epochs": record.cumulative_epochs,
                }
            )
            if progress is not None:
                progress(r + 1, cfg.rounds)
            if (
                cfg.target_accuracy is not None
                and accuracy is not None
                and accuracy >= cfg.target_accuracy
            ):
                stopped_early = True
                break
    finally:
        writer.close()

    final_ledger = merge_ledgers(
        [c.trainer.ledger for c in clients if c.trainer is not None]
    ) if any(c.trainer is not None for c in clients) else PassLedger(
        dataset_size=len(cfg.dataset)
    )
    return FederatedResult(
        config=cfg,
        clients=clients,
        rounds=rounds,
        model=global_model,
        ledger=final_ledger,
        stopped_early=stopped_early,
    )
