"""The ray product: a walk that never comes back.

Each factor is a one-way ray, so every step lands on a new word and half of the
range escapes from each vertex.  The capacity of the range after n steps is exactly
n/2 + 1, the regeneration estimator returns 1/2, and the fluctuation variance is zero,
so the CLT check is refused.
"""

from freewalk import DegenerateError, capacity, chat_regen, clt_experiment, fixture, free_product_from_spec
from freewalk import regen_blocks, run_walk, sigma2_hat

fp = free_product_from_spec(fixture("ray"))
for n in (10, 100, 1000):
    tr = run_walk(fp, n, seed=1)
    print(f"n = {n:>5}: Cap(R_n) = {capacity(fp, tr.words()):.1f}   n/2 + 1 = {n / 2 + 1:.1f}")

blocks = regen_blocks(fp, 10_000, 2, seed=2)
est = chat_regen(fp, 10_000, 2, seed=2, blocks=blocks)
s2 = sigma2_hat(blocks)
print(f"regeneration estimate {est.point:.6f} from {est.n_samples} blocks, sigma^2 = {s2.point:.2e}")
try:
    clt_experiment(fp, 10, 100, 3, est, s2)
except DegenerateError as exc:
    print("CLT check refused:", exc)
