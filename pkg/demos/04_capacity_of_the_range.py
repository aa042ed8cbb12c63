"""Estimating the capacity constant of the range.

Two estimators of lim Cap(R_n)/n on the example model:

* direct: simulate n steps and solve for Cap(R_n) exactly, averaged over replicas;
* regeneration: cut one long walk at regeneration times and divide the summed exact
  block capacities by the summed block durations.

Both run on independent seeds and their 95% intervals should overlap.  The decomposition
audit then checks, on one trajectory, that the capacity of the range up to an exit time
equals the sum of its cone pieces.
"""

from freewalk import chat_direct, chat_regen, decomposition_audit, exit_times, fixture, free_product_from_spec
from freewalk import regen_blocks, run_walk, sigma2_hat

fp = free_product_from_spec(fixture("exampleA"))

direct = chat_direct(fp, [1000, 5000], 20, seed=10)
for row in direct.extra["checkpoints"]:
    print(f"direct  n = {row['n']:>5}: {row['mean']:.5f} +- {row['stderr']:.5f}")

blocks = regen_blocks(fp, 50_000, 2, seed=11)
regen = chat_regen(fp, 50_000, 2, seed=11, blocks=blocks)
print(f"regeneration:     {regen.point:.5f} +- {regen.stderr:.5f} ({regen.n_samples} blocks)")
print("intervals overlap:", direct.overlaps(regen))
print(f"sigma^2 estimate:  {sigma2_hat(blocks).point:.5f}")

tr = run_walk(fp, 1500, seed=12)
ex = exit_times(tr, guard=500)
for k in (1, 5, 10):
    a = decomposition_audit(fp, tr, k, ex)
    print(f"k = {k:>2}: Cap(R_e_k) = {a['lhs']:.6f}, pieces sum to {a['rhs']:.6f}")
