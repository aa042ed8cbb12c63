"""Return weights, substitution variables and the Green function radius.

Builds the three-state example model, prints the return weights u_i and the exit
probabilities xi_i at z = 1, then brackets the radius of convergence of G(o,o|z) for
the example, the null-recurrent star product and the ray product.
"""

from freewalk import fixture, free_product_from_spec, green_at_root, radius_estimate, return_weights

fp = free_product_from_spec(fixture("exampleA"))
rw = return_weights(fp, 1.0)
for i, table in ((1, rw.u1), (2, rw.u2)):
    g = fp.factor(i)
    for state, value in table.items():
        print(f"u{i}({g.state_name(state)}) = {value:.6f}")
print(f"xi1 = {rw.xi1:.6f}  xi2 = {rw.xi2:.6f}")
print(f"G(o,o|1) = {green_at_root(fp, 1.0):.6f}  (expected number of visits to o)")

for name in ("exampleA", "null", "ray"):
    bracket = radius_estimate(free_product_from_spec(fixture(name)))
    verdict = "transient" if bracket.transient else "fails the transience gate"
    print(f"{name:>9}: radius in {bracket.as_list()}  -> {verdict}")
