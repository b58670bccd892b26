"""Count forward and backward passes the way the training loop charges them.

Run with:  python3 demos/pass_accounting.py
"""

from semilab.accounting import PassLedger, epochs, record_iteration

# One iteration at l=64 labeled, u_t=448 unlabeled, all 448 confident:
#   forward  = 64 labeled + 448 weak + 448 strong = 960
#   backward = 64 labeled + 448 strong            = 512
ledger = PassLedger(dataset_size=50000)
record_iteration(ledger, l_t=64, u_t=448, n_confident=448)
print(f"full-confidence iteration: forward={ledger.forward_total} "
      f"backward={ledger.backward_total}")

# The same iteration with nothing confident only pays for the weak pass.
empty = PassLedger(dataset_size=50000)
record_iteration(empty, l_t=64, u_t=448, n_confident=0)
print(f"zero-confidence iteration: forward={empty.forward_total} "
      f"backward={empty.backward_total}")

# A long run priced with the half/half shorthand: half the iterations at
# the full-confidence cost, half at the forward-only cost, comes out near
# 7.7e8 passes, about 15400 passes-per-sample units on 50k images.
half_half = 2**19 * (960 + 512)
print(f"\n2^20 iterations, half/half pricing: {half_half:,} passes "
      f"({half_half / 50000:,.0f} per-dataset units)")

# The ledger itself never guesses: it accumulates the exact per-iteration
# counts, and the epoch equivalent divides by two passes per sample.
run = PassLedger(dataset_size=1000)
for t in range(100):
    confident = min(t * 4, 320)       # confidence ramps up as training settles
    record_iteration(run, l_t=64, u_t=320, n_confident=confident)
print(f"\n100 mixed iterations: forward={run.forward_total:,} "
      f"backward={run.backward_total:,} epochs={epochs(run):.1f}")
