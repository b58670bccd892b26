"""Train the same small problem twice: vanilla FixMatch, then all speedups.

Takes a couple of minutes on one CPU core.  Run with:

    python3 demos/quick_ssl.py
"""

from semilab.accounting import utilization
from semilab.config import build_problem, build_train_config, parse_config_dict
from semilab.engine import train


def run(cbs: bool, strong: bool, cpl: bool):
    cfg = parse_config_dict({
        "seed": 1,
        "dataset": {"n": 1200, "test_n": 400, "n_labeled": 30, "data_seed": 7},
        "schedule": {"l": 12, "mu": 5, "T": 3000, "alpha": 0.7, "cbs_enabled": cbs},
        "train": {"model_widths": [16, 32], "eval_every": 600,
                  "labeled_strong_aug": strong, "cpl_enabled": cpl},
    })
    train_ds, test_ds, split = build_problem(cfg)
    tc = build_train_config(cfg, train_ds, test_ds, split)
    result = train(tc)
    return tc.flags, result


for flags_wanted in ((False, False, False), (True, True, True)):
    label, result = run(*flags_wanted)
    print(f"--- {label} ---")
    for record in result.evals:
        print(f"  t={record.t:>5}  epochs={record.epoch_equivalent:8.2f}  "
              f"accuracy={record.accuracy:.3f}")
    report = utilization(result.stats)
    passes = result.ledger.forward_total + result.ledger.backward_total
    print(f"  total passes: {passes:,}")
    print(f"  unlabeled-data utilization: {report.total:.3f}")
    print()

print("The curriculum run spends roughly half the passes: it trains on")
print("almost no unlabeled data while confidence is poor, and the dynamic")
print("thresholds let most of the batch through once confidence recovers.")
print("At this short horizon it trails slightly in accuracy; stretch T to")
print("see the gap close while the pass gap stays.")
