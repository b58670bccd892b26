"""Walk through the curriculum batch-size curve and its companions.

Run with:  python3 demos/schedule_curves.py
"""

import numpy as np

from semilab.schedules import (
    ScheduleConfig,
    bexp,
    cosine_lr,
    lambda_coeff,
    mean_bexp_fraction,
    unlabeled_batch_size,
)

u, T = 448, 1024

# The unlabeled batch starts empty and grows back to u following a curve
# whose knee is set by alpha: small alpha ramps up almost linearly, large
# alpha stays tiny until late.
print("unlabeled batch size u_t at a few checkpoints (u=448, T=1024)")
print(f"{'t':>6}  " + "  ".join(f"alpha={a:.1f}" for a in (0.5, 0.7, 0.9)))
for t in (0, 128, 256, 512, 768, 1024):
    row = [bexp(u, t, T, a) for a in (0.5, 0.7, 0.9)]
    print(f"{t:>6}  " + "  ".join(f"{v:9.1f}" for v in row))

# Averaged over the whole run, the curve has a closed-form mean fraction.
# The discrete average converges to it as T grows.
print("\nmean of u_t/u over the run vs the closed form")
for a in (0.5, 0.7, 0.9):
    ts = np.arange(T)
    discrete = float(np.mean(bexp(u, ts, T, a))) / u
    print(f"  alpha={a:.1f}: discrete {discrete:.4f}  closed {mean_bexp_fraction(a):.4f}")

# The unsupervised weight is tied to the drawn batch size so every sample,
# labeled or confident-unlabeled, carries the same per-sample weight 1/l.
cfg = ScheduleConfig(l=64, mu=7, T=T, alpha=0.7, cbs_enabled=True)
print("\nlambda_t tracks u_t/l (l=64):")
for t in (0, 256, 512, 1023):
    u_t = unlabeled_batch_size(cfg, t)
    print(f"  t={t:>4}: u_t={u_t:>3}  lambda={lambda_coeff(cfg, u_t):.4f}")

# Learning rate: cosine decay that ends at cos(7*pi/16), not at zero.
print("\ncosine learning rate (lr0=0.03):")
for t in (0, T // 2, T):
    print(f"  t={t:>4}: lr={cosine_lr(0.03, t, T):.5f}")
print(f"  final factor: {cosine_lr(1.0, T, T):.4f}")
