"""Helpers shared between the unit suites and the acceptance suite."""

import json
import os

import numpy as np

from semilab.accounting import utilization
from semilab.config import (
    build_federated_config,
    build_problem,
    build_stream_plan,
    build_train_config,
    parse_config_dict,
)
from semilab.engine import train
from semilab.federated import run_federated
from semilab.nn import Model
from semilab.streaming import run_streaming
from semilab.tensor import backward, softmax_cross_entropy


def gradcheck_problem(dtype, batch=3, hw=8, widths=(3, 4), seed=11):
    """A small fixed classification problem: (model, inputs, targets)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(batch, 3, hw, hw)).astype(dtype)
    y = rng.integers(0, 10, size=batch).astype(np.int64)
    model = Model(in_channels=3, num_classes=10, widths=widths, seed=seed, dtype=dtype)
    return model, x, y


def loss_value(model, x, y) -> float:
    logits = model.forward(x, train=True)
    return float(softmax_cross_entropy(logits, y).data)


def autodiff_gradients(model, x, y) -> dict:
    logits = model.forward(x, train=True)
    loss = softmax_cross_entropy(logits, y)
    backward(loss, params=model.params.values())
    return {name: p.grad.copy() for name, p in model.params.items()}


def clone_as(model, dtype) -> Model:
    twin = Model(
        in_channels=model.in_channels,
        num_classes=model.num_classes,
        widths=model.widths,
        seed=0,
        dtype=dtype,
    )
    for name, p in model.params.items():
        twin.params[name].data = p.data.astype(dtype)
    for name, b in model.bufs.items():
        twin.bufs[name][...] = b.astype(dtype)
    return twin


def central_difference(model64, x64, y, name: str, flat_index: int, h: float) -> float:
    w = model64.params[name].data
    flat = w.reshape(-1)
    saved = flat[flat_index]
    flat[flat_index] = saved + h
    f_plus = loss_value(model64, x64, y)
    flat[flat_index] = saved - h
    f_minus = loss_value(model64, x64, y)
    flat[flat_index] = saved
    return (f_plus - f_minus) / (2.0 * h)


def sample_coordinates(model, count: int, seed: int):
    """(name, flat index) pairs drawn across every parameter tensor."""
    rng = np.random.default_rng(seed)
    names = list(model.params)
    sizes = np.array([model.params[n].data.size for n in names])
    total = int(sizes.sum())
    if count > total:
        chosen = rng.integers(0, total, size=count)
    else:
        chosen = rng.choice(total, size=count, replace=False)
    bounds = np.cumsum(sizes)
    coords = []
    for c in chosen:
        which = int(np.searchsorted(bounds, c, side="right"))
        offset = int(c - (bounds[which - 1] if which else 0))
        coords.append((names[which], offset))
    return coords


def max_gradcheck_error(dtype, n_coords=200, seed=11, h=1e-5, widths=(3, 4)) -> float:
    """Largest relative error between autodiff and central differences.

    Differences are always evaluated on a float64 twin so the reference
    itself is not the noise floor.
    """
    model, x, y = gradcheck_problem(dtype, seed=seed, widths=widths)
    grads = autodiff_gradients(model, x, y)
    model64 = model if dtype == np.float64 else clone_as(model, np.float64)
    x64 = x.astype(np.float64)
    worst = 0.0
    for name, flat_index in sample_coordinates(model, n_coords, seed=seed + 1):
        cd = central_difference(model64, x64, y, name, flat_index, h)
        ad = float(grads[name].reshape(-1)[flat_index])
        rel = abs(ad - cd) / (abs(cd) + 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Cached desk-scale runs shared by the slow acceptance criteria.  Results are
# stored under .acceptance_cache keyed by a recipe fingerprint, so editing a
# recipe invalidates its cache instead of silently reusing stale numbers.

CACHE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                         ".acceptance_cache")

DESK_VARIANTS = {
    "vanilla": (False, False, False),
    "cbs": (True, False, False),
    "cpl": (False, False, True),
    "cbs+cpl": (True, False, True),
    "fast": (True, True, True),
}

DESK_FINGERPRINT = "desk-v1:n4000:test1000:noise0.28:ds7:l16:mu7:a0.7:T20000:w32x64:ev500"
FED_FINGERPRINT = "fed-v1:n2000:test500:ds7:l8:mu3:a0.7:r50:li40:c20:g4:lpc10:w16x32"
STREAM_FINGERPRINT = "stream-v1:n2000:test500:ds7:l8:mu3:a0.7:T4000:ch10:w16x32:ev200"

DESK_DATASET_SIZE = 4000
SCENARIO_DATASET_SIZE = 2000


def _cache_load(name: str, fingerprint: str):
    path = os.path.join(CACHE_DIR, name)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        record = json.load(fh)
    return record if record.get("recipe") == fingerprint else None


def _cache_store(name: str, record: dict) -> dict:
    os.makedirs(CACHE_DIR, exist_ok=True)
    with open(os.path.join(CACHE_DIR, name), "w") as fh:
        json.dump(record, fh)
    return record


def desk_run(variant: str, seed: int) -> dict:
    """One full desk training run; evals are (t, epoch_equivalent, accuracy)."""
    name = f"desk-{variant}-s{seed}.json"
    cached = _cache_load(name, DESK_FINGERPRINT)
    if cached is not None:
        return cached
    cbs, strong, cpl = DESK_VARIANTS[variant]
    cfg = parse_config_dict({
        "seed": seed,
        "dataset": {"kind": "synthetic", "n": 4000, "test_n": 1000, "classes": 10,
                    "height": 8, "width": 8, "n_labeled": 40, "data_seed": 7},
        "train": {"eval_every": 500, "model_widths": [32, 64],
                  "labeled_strong_aug": strong, "cpl_enabled": cpl},
        "schedule": {"l": 16, "mu": 7, "T": 20000, "cbs_enabled": cbs, "alpha": 0.7},
    })
    train_ds, test_ds, split = build_problem(cfg)
    tc = build_train_config(cfg, train_ds, test_ds, split)
    res = train(tc)
    return _cache_store(name, {
        "recipe": DESK_FINGERPRINT,
        "flags": tc.flags,
        "seed": seed,
        "fwd": res.ledger.forward_total,
        "bwd": res.ledger.backward_total,
        "util": utilization(res.stats).total,
        "evals": [[e.t, e.epoch_equivalent, e.accuracy] for e in res.evals],
    })


def _scenario_tree(fast: bool, seed: int) -> dict:
    return {
        "seed": seed,
        "dataset": {"n": 2000, "test_n": 500, "n_labeled": 40, "data_seed": 7},
        "schedule": {"l": 8, "mu": 3, "alpha": 0.7, "cbs_enabled": fast},
        "train": {"model_widths": [16, 32], "cpl_enabled": fast,
                  "labeled_strong_aug": fast},
    }


def fed_run(fast: bool, seed: int) -> dict:
    """50-round federated desk run; evals are (round, passes, accuracy)."""
    name = f"fed-{'fast' if fast else 'vanilla'}-s{seed}.json"
    cached = _cache_load(name, FED_FINGERPRINT)
    if cached is not None:
        return cached
    tree = _scenario_tree(fast, seed)
    tree["federated"] = {"n_clients": 20, "n_groups": 4, "clients_per_round": 4,
                         "rounds": 50, "local_iterations": 40,
                         "labeled_per_client": 10}
    cfg = parse_config_dict(tree)
    train_ds, test_ds, _ = build_problem(cfg)
    res = run_federated(build_federated_config(cfg, train_ds, test_ds))
    ds = len(train_ds)
    return _cache_store(name, {
        "recipe": FED_FINGERPRINT,
        "seed": seed,
        "fwd": res.ledger.forward_total,
        "bwd": res.ledger.backward_total,
        "evals": [[r.round, r.cumulative_epochs * 2 * ds, r.global_accuracy]
                  for r in res.rounds],
    })


def stream_run(fast: bool, seed: int) -> dict:
    """10-chunk streaming desk run; evals are (t, passes, accuracy)."""
    name = f"stream-{'fast' if fast else 'vanilla'}-s{seed}.json"
    cached = _cache_load(name, STREAM_FINGERPRINT)
    if cached is not None:
        return cached
    tree = _scenario_tree(fast, seed)
    tree["schedule"]["T"] = 4000
    tree["train"]["eval_every"] = 200
    tree["stream"] = {"n_chunks": 10}
    cfg = parse_config_dict(tree)
    train_ds, test_ds, split = build_problem(cfg)
    tc = build_train_config(cfg, train_ds, test_ds, split)
    res = run_streaming(tc, build_stream_plan(cfg))
    ds = len(train_ds)
    return _cache_store(name, {
        "recipe": STREAM_FINGERPRINT,
        "seed": seed,
        "fwd": res.ledger.forward_total,
        "bwd": res.ledger.backward_total,
        "evals": [[e.t, e.epoch_equivalent * 2 * ds, e.accuracy] for e in res.evals],
    })


def passes_to_reach(evals, target: float, passes_of) -> float | None:
    """Passes consumed at the first evaluation scoring >= target."""
    for entry in evals:
        if entry[2] is not None and entry[2] >= target - 1e-12:
            return passes_of(entry)
    return None
