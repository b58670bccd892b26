"""JSON run configuration: parsing, validation, and builders.

The file is a nested key/value tree with sections ``dataset``, ``schedule``,
``train``, ``federated``, and ``stream`` plus top-level ``seed`` and
``output_dir``.  Every key has a default (an empty file is the vanilla
baseline on synthetic data); unknown keys and out-of-range values are
rejected with the full key path, so typos cannot silently change a run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .augment import AugmentPolicy
from .data import Dataset, SslSplit, load_cifar10_binary, load_dataset, make_ssl_split, synth_generate
from .engine import TrainConfig
from .federated import FederatedConfig
from .schedules import ScheduleConfig
from .streaming import StreamPlan

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "parse_config_dict",
    "serialize_config",
    "build_problem",
    "build_train_config",
    "build_federated_config",
    "build_stream_plan",
]


class ConfigError(ValueError):
    """Invalid run configuration; message starts with the offending key path."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    path: str | None = None
    test_path: str | None = None
    data_seed: int = 7
    n: int = 4000
    classes: int = 10
    height: int = 8
    width: int = 8
    channels: int = 3
    noise: float = 0.28
    pattern_cells: int = 3
    jitter: int = 1
    test_n: int = 1000
    n_labeled: int = 40
    labeled_also_unlabeled: bool = True


@dataclass(frozen=True)
class TrainSpec:
    tau: float = 0.95
    cpl_enabled: bool = False
    labeled_strong_aug: bool = False
    eval_every: int = 250
    target_accuracy: float | None = None
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_decay: float = 0.999
    strong_op_count: int = 2
    strong_magnitude: int = 10
    cutout_fraction: float = 0.5
    model_widths: tuple = (32, 64, 128)


@dataclass(frozen=True)
class ScheduleSpec:
    l: int = 64
    mu: int = 7
    T: int = 1024
    alpha: float = 0.7
    cbs_enabled: bool = False
    base_lambda: float = 1.0


@dataclass(frozen=True)
class FederatedSpec:
    n_clients: int = 100
    n_groups: int = 4
    clients_per_round: int = 4
    rounds: int = 50
    local_iterations: int = 40
    labeled_per_client: int = 10
    in_block_fraction: float = 0.8
    max_workers: int | None = None


@dataclass(frozen=True)
class StreamSpec:
    n_chunks: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    federated: FederatedSpec = field(default_factory=FederatedSpec)
    stream: StreamSpec = field(default_factory=StreamSpec)


def _type_name(value) -> str:
    return type(value).__name__


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _take_int(raw: dict, key: str, default: int, path: str, lo=None, hi=None) -> int:
    value = raw.pop(key, default)
    where = _join(path, key)
    if type(value) is not int:
        raise ConfigError(f"{where}: expected an integer, got {_type_name(value)}")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{where}: must be <= {hi}, got {value}")
    return value


def _take_float(raw: dict, key: str, default: float, path: str, lo=None, hi=None,
                lo_open=False, hi_open=False) -> float:
    value = raw.pop(key, default)
    where = _join(path, key)
    if type(value) is bool or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {_type_name(value)}")
    value = float(value)
    if lo is not None and (value <= lo if lo_open else value < lo):
        bound = ">" if lo_open else ">="
        raise ConfigError(f"{where}: must be {bound} {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        bound = "<" if hi_open else "<="
        raise ConfigError(f"{where}: must be {bound} {hi}, got {value}")
    return value


def _take_bool(raw: dict, key: str, default: bool, path: str) -> bool:
    value = raw.pop(key, default)
    if type(value) is not bool:
        raise ConfigError(
            f"{_join(path, key)}: expected true/false, got {_type_name(value)}"
        )
    return value


def _take_str_or_none(raw: dict, key: str, default, path: str, choices=None):
    value = raw.pop(key, default)
    where = _join(path, key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {_type_name(value)}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{where}: expected one of {sorted(choices)}, got {value!r}")
    return value


def _take_opt_number(raw: dict, key: str, default, path: str, lo=None, hi=None,
                     lo_open=False):
    value = raw.pop(key, default)
    if value is None:
        return None
    raw[key] = value
    return _take_float(raw, key, default, path, lo=lo, hi=hi, lo_open=lo_open)


def _take_opt_int(raw: dict, key: str, default, path: str, lo=None):
    value = raw.pop(key, default)
    if value is None:
        return None
    raw[key] = value
    return _take_int(raw, key, default, path, lo=lo)


def _reject_unknown(raw: dict, path: str) -> None:
    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"{_join(path, key)}: unknown key")


def _section(tree: dict, key: str) -> dict:
    value = tree.pop(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object, got {_type_name(value)}")
    return dict(value)


def parse_config_dict(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError(f"top level: expected an object, got {_type_name(tree)}")
    tree = dict(tree)

    top = {"seed": tree.pop("seed", 0), "output_dir": tree.pop("output_dir", None)}
    seed = _take_int(top, "seed", 0, "", lo=0)
    output_dir = _take_str_or_none(top, "output_dir", None, "")

    raw = _section(tree, "dataset")
    dataset = DatasetSpec(
        kind=_take_str_or_none(
            raw, "kind", "synthetic", "dataset", choices={"synthetic", "cifar10", "file"}
        ),
        path=_take_str_or_none(raw, "path", None, "dataset"),
        test_path=_take_str_or_none(raw, "test_path", None, "dataset"),
        data_seed=_take_int(raw, "data_seed", 7, "dataset", lo=0),
        n=_take_int(raw, "n", 4000, "dataset", lo=1),
        classes=_take_int(raw, "classes", 10, "dataset", lo=2),
        height=_take_int(raw, "height", 8, "dataset", lo=4),
        width=_take_int(raw, "width", 8, "dataset", lo=4),
        channels=_take_int(raw, "channels", 3, "dataset", lo=1),
        noise=_take_float(raw, "noise", 0.28, "dataset", lo=0.0),
        pattern_cells=_take_int(raw, "pattern_cells", 3, "dataset", lo=1),
        jitter=_take_int(raw, "jitter", 1, "dataset", lo=0),
        test_n=_take_int(raw, "test_n", 1000, "dataset", lo=0),
        n_labeled=_take_int(raw, "n_labeled", 40, "dataset", lo=1),
        labeled_also_unlabeled=_take_bool(raw, "labeled_also_unlabeled", True, "dataset"),
    )
    _reject_unknown(raw, "dataset")
    if dataset.kind in ("cifar10", "file") and dataset.path is None:
        raise ConfigError(f"dataset.path: required for kind {dataset.kind!r}")

    raw = _section(tree, "schedule")
    schedule = ScheduleSpec(
        l=_take_int(raw, "l", 64, "schedule", lo=1),
        mu=_take_int(raw, "mu", 7, "schedule", lo=1),
        T=_take_int(raw, "T", 1024, "schedule", lo=1),
        alpha=_take_float(raw, "alpha", 0.7, "schedule", lo=0.0, hi=1.0, hi_open=True),
        cbs_enabled=_take_bool(raw, "cbs_enabled", False, "schedule"),
        base_lambda=_take_float(raw, "base_lambda", 1.0, "schedule", lo=0.0),
    )
    _reject_unknown(raw, "schedule")

    raw = _section(tree, "train")
    widths = raw.pop("model_widths", [32, 64, 128])
    if (
        not isinstance(widths, list)
        or not widths
        or any(type(w) is not int or w < 1 for w in widths)
    ):
        raise ConfigError("train.model_widths: expected a list of positive integers")
    train = TrainSpec(
        tau=_take_float(raw, "tau", 0.95, "train", lo=0.0, hi=1.0, lo_open=True),
        cpl_enabled=_take_bool(raw, "cpl_enabled", False, "train"),
        labeled_strong_aug=_take_bool(raw, "labeled_strong_aug", False, "train"),
        eval_every=_take_int(raw, "eval_every", 250, "train", lo=1),
        target_accuracy=_take_opt_number(
            raw, "target_accuracy", None, "train", lo=0.0, hi=1.0, lo_open=True
        ),
        lr=_take_float(raw, "lr", 0.03, "train", lo=0.0, lo_open=True),
        momentum=_take_float(raw, "momentum", 0.9, "train", lo=0.0, hi=1.0, hi_open=True),
        weight_decay=_take_float(raw, "weight_decay", 5e-4, "train", lo=0.0),
        ema_decay=_take_float(raw, "ema_decay", 0.999, "train", lo=0.0, hi=1.0),
        strong_op_count=_take_int(raw, "strong_op_count", 2, "train", lo=0),
        strong_magnitude=_take_int(raw, "strong_magnitude", 10, "train", lo=0, hi=30),
        cutout_fraction=_take_float(raw, "cutout_fraction", 0.5, "train", lo=0.0, hi=0.5),
        model_widths=tuple(widths),
    )
    _reject_unknown(raw, "train")

    raw = _section(tree, "federated")
    federated = FederatedSpec(
        n_clients=_take_int(raw, "n_clients", 100, "federated", lo=1),
        n_groups=_take_int(raw, "n_groups", 4, "federated", lo=1),
        clients_per_round=_take_int(raw, "clients_per_round", 4, "federated", lo=1),
        rounds=_take_int(raw, "rounds", 50, "federated", lo=1),
        local_iterations=_take_int(raw, "local_iterations", 40, "federated", lo=0),
        labeled_per_client=_take_int(raw, "labeled_per_client", 10, "federated", lo=1),
        in_block_fraction=_take_float(
            raw, "in_block_fraction", 0.8, "federated", lo=0.0, hi=1.0, lo_open=True
        ),
        max_workers=_take_opt_int(raw, "max_workers", None, "federated", lo=1),
    )
    _reject_unknown(raw, "federated")
    if federated.n_clients % federated.n_groups:
        raise ConfigError(
            f"federated.n_clients: {federated.n_clients} not divisible by "
            f"n_groups={federated.n_groups}"
        )
    if federated.clients_per_round != federated.n_groups:
        raise ConfigError(
            "federated.clients_per_round: must equal n_groups (one client per group)"
        )

    raw = _section(tree, "stream")
    stream = StreamSpec(n_chunks=_take_int(raw, "n_chunks", 10, "stream", lo=1))
    _reject_unknown(raw, "stream")

    _reject_unknown(tree, "")
    return RunConfig(
        seed=seed,
        output_dir=output_dir,
        dataset=dataset,
        schedule=schedule,
        train=train,
        federated=federated,
        stream=stream,
    )


def parse_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return RunConfig()
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config_dict(tree)


def serialize_config(config: RunConfig) -> str:
    tree = asdict(config)
    tree["train"]["model_widths"] = list(config.train.model_widths)
    return json.dumps(tree, indent=2)


def build_problem(config: RunConfig) -> tuple[Dataset, Dataset | None, SslSplit]:
    """Materialize (train set, test set, split) from the dataset section."""
    spec = config.dataset
    if spec.kind == "synthetic":
        full = synth_generate(
            spec.data_seed,
            spec.n + spec.test_n,
            spec.classes,
            spec.height,
            spec.width,
            channels=spec.channels,
            noise=spec.noise,
            pattern_cells=spec.pattern_cells,
            jitter=spec.jitter,
        )
        train_ds = Dataset(
            images=full.images[: spec.n],
            labels=full.labels[: spec.n],
            class_count=spec.classes,
            name=f"{full.name}-train",
        )
        test_ds = (
            Dataset(
                images=full.images[spec.n :],
                labels=full.labels[spec.n :],
                class_count=spec.classes,
                name=f"{full.name}-test",
            )
            if spec.test_n
            else None
        )
    elif spec.kind == "cifar10":
        train_ds = load_cifar10_binary(spec.path, split="train")
        test_ds = load_cifar10_binary(spec.path, split="test")
    else:
        train_ds = load_dataset(spec.path)
        test_ds = load_dataset(spec.test_path) if spec.test_path else None

    split = make_ssl_split(
        train_ds,
        spec.n_labeled,
        seed=spec.data_seed,
        labeled_also_unlabeled=spec.labeled_also_unlabeled,
    )
    return train_ds, test_ds, split


def _strong_policy(train: TrainSpec) -> AugmentPolicy:
    return AugmentPolicy(
        kind="strong",
        op_count=train.strong_op_count,
        magnitude=train.strong_magnitude,
        cutout_fraction=train.cutout_fraction,
    )


def build_train_config(
    config: RunConfig, train_ds: Dataset, test_ds: Dataset | None, split: SslSplit
) -> TrainConfig:
    s = config.schedule
    t = config.train
    return TrainConfig(
        schedule=ScheduleConfig(
            l=s.l,
            mu=s.mu,
            T=s.T,
            alpha=s.alpha,
            cbs_enabled=s.cbs_enabled,
            base_lambda=s.base_lambda,
        ),
        dataset=train_ds,
        split=split,
        test_dataset=test_ds,
        tau=t.tau,
        cpl_enabled=t.cpl_enabled,
        labeled_strong_aug=t.labeled_strong_aug,
        seed=config.seed,
        eval_every=t.eval_every,
        target_accuracy=t.target_accuracy,
        lr=t.lr,
        momentum=t.momentum,
        weight_decay=t.weight_decay,
        ema_decay=t.ema_decay,
        strong_policy=_strong_policy(t),
        model_widths=t.model_widths,
    )


def build_federated_config(
    config: RunConfig, train_ds: Dataset, test_ds: Dataset | None
) -> FederatedConfig:
    s = config.schedule
    t = config.train
    f = config.federated
    return FederatedConfig(
        dataset=train_ds,
        test_dataset=test_ds,
        n_clients=f.n_clients,
        n_groups=f.n_groups,
        clients_per_round=f.clients_per_round,
        rounds=f.rounds,
        local_iterations=f.local_iterations,
        labeled_per_client=f.labeled_per_client,
        in_block_fraction=f.in_block_fraction,
        seed=config.seed,
        target_accuracy=t.target_accuracy,
        l=s.l,
        mu=s.mu,
        alpha=s.alpha,
        cbs_enabled=s.cbs_enabled,
        base_lambda=s.base_lambda,
        tau=t.tau,
        cpl_enabled=t.cpl_enabled,
        labeled_strong_aug=t.labeled_strong_aug,
        lr=t.lr,
        momentum=t.momentum,
        weight_decay=t.weight_decay,
        ema_decay=t.ema_decay,
        strong_policy=_strong_policy(t),
        model_widths=t.model_widths,
        max_workers=f.max_workers,
    )


def build_stream_plan(config: RunConfig) -> StreamPlan:
    return StreamPlan(n_chunks=config.stream.n_chunks)
