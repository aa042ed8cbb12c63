"""Exact capacities on an infinite tree of copies.

A finite set of words is enough to pin down escape probabilities: the solver works on
the prefix closure of the set plus one layer of boundary words.  Here we grow a set
one word at a time and watch the capacity increase by at most one per word, then
compare a hitting probability with a quick Monte Carlo run.
"""

import numpy as np

from freewalk import capacity, fixture, free_product_from_spec, hitting_probability, step_distribution
from freewalk.core import ROOT

fp = free_product_from_spec(fixture("exampleA"))
words = ["o", "1:a", "1:a/2:b", "1:a/2:c", "2:b", "2:b/1:a/2:c"]
A = []
for text in words:
    before = capacity(fp, A)
    A.append(fp.parse_word(text))
    after = capacity(fp, A)
    print(f"add {text:<12} Cap = {after:.6f}  (increase {after - before:+.4f})")

target = [fp.parse_word("1:a/2:c/1:a")]
exact = hitting_probability(fp, target, ROOT)

rng = np.random.default_rng(0)
hits, runs = 0, 4000
for _ in range(runs):
    w = ROOT
    for _ in range(400):
        ys, ps = zip(*step_distribution(fp, w))
        w = ys[rng.choice(len(ys), p=ps)]
        if w == target[0]:
            hits += 1
            break
print(f"P_o[hit 1:a/2:c/1:a] exact {exact:.4f}, Monte Carlo {hits / runs:.4f} ({runs} walks, 400 steps)")
