import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import importlib

capmod = importlib.import_module("freewalk.capacity")
from freewalk.capacity import (
    avoid_cone_after_start,
    avoid_initial_factor,
    block_capacity,
    block_capacity_parts,
    build_hull,
    capacity,
    capacity_report,
    constrained_escape_u0,
    constrained_escape_u1,
    escape_probability,
    hitting_probability,
    stay_in,
)
from freewalk.config import fixture
from freewalk.core import ROOT, Word, free_product_from_spec, step_distribution
from freewalk.errors import ModelError, TransienceError
from freewalk.genfun import return_weights
from freewalk.sim import run_walk
from oracles import enumerate_words, mc_hit_escape, sandwich_hitting

FP_A = free_product_from_spec(fixture("exampleA"))
WORDS_A = enumerate_words(FP_A, 4)


def _within(mc_count, n, exact, k=4.0):
    p = mc_count / n
    se = math.sqrt(max(exact * (1 - exact), 1e-12) / n)
    return abs(p - exact) <= k * se + 1e-12


def test_root_capacity_is_one_minus_return(fix_a):
    assert capacity(fix_a, [ROOT]) == pytest.approx(1 - return_weights(fix_a, 1.0).U, abs=1e-12)


def test_empty_and_singleton(fix_a):
    assert capacity(fix_a, []) == 0.0
    w = fix_a.word((1, "a"), (2, "b"))
    assert 0 < capacity(fix_a, [w]) <= 1


def test_duplicates_ignored(fix_a):
    a = fix_a.word((1, "a"))
    assert capacity(fix_a, [a, a, ROOT]) == pytest.approx(capacity(fix_a, [a, ROOT]), abs=1e-14)


def test_hull_shape(fix_a):
    h = build_hull(fix_a, [fix_a.word((1, "a"), (2, "b"))])
    assert set(map(tuple, h.T)) == {(), tuple(fix_a.word((1, "a"))), tuple(fix_a.word((1, "a"), (2, "b")))}
    assert all(w not in set(h.T) for w in h.boundary)
    assert all(w.parent() in set(h.T) for w in h.boundary)


def test_escape_needs_member(fix_a):
    with pytest.raises(ModelError):
        escape_probability(fix_a, [ROOT], fix_a.word((1, "a")))


def test_null_model_refused(fix_null):
    with pytest.raises(TransienceError):
        capacity(fix_null, [ROOT])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, len(WORDS_A) - 1), min_size=1, max_size=5, unique=True),
       st.integers(0, len(WORDS_A) - 1))
def test_first_step_decomposition(idx, start_idx):
    A = [WORDS_A[i] for i in idx]
    x = A[0]
    lhs = escape_probability(FP_A, A, x)
    rhs = 1.0 - sum(p * (1.0 if y in set(A) else hitting_probability(FP_A, A, y)) for y, p in step_distribution(FP_A, x))
    assert lhs == pytest.approx(rhs, abs=1e-10)
    s = WORDS_A[start_idx]
    if s not in set(A):
        h = hitting_probability(FP_A, A, s)
        rhs = sum(p * (1.0 if y in set(A) else hitting_probability(FP_A, A, y)) for y, p in step_distribution(FP_A, s))
        assert h == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, len(WORDS_A) - 1), min_size=0, max_size=6, unique=True),
       st.lists(st.integers(0, len(WORDS_A) - 1), min_size=0, max_size=4, unique=True))
def test_capacity_monotone_and_subadditive_step(small, extra):
    A = [WORDS_A[i] for i in small]
    B = list({*A, *(WORDS_A[i] for i in extra)})
    ca, cb = capacity(FP_A, A), capacity(FP_A, B)
    assert ca <= len(set(A)) + 1e-12
    assert ca - 1e-10 <= cb <= ca + len(set(B) - set(A)) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, len(WORDS_A) - 1), min_size=1, max_size=5, unique=True),
       st.integers(0, len(WORDS_A) - 1))
def test_hitting_inside_sandwich(idx, start_idx):
    A = [WORDS_A[i] for i in idx]
    s = WORDS_A[start_idx]
    h = hitting_probability(FP_A, A, s)
    for L in (6, 8):
        lo, hi = sandwich_hitting(FP_A, A, s, L)
        assert lo - 1e-10 <= h <= hi + 1e-10


def test_hitting_against_monte_carlo(fix_a):
    A = [fix_a.word((1, "a")), fix_a.word((1, "a"), (2, "b")), fix_a.word((2, "c"), (1, "a"))]
    start = fix_a.word((2, "b"))
    n = 20_000
    hit, _, _ = mc_hit_escape(fix_a, A, start, n, seed=5)
    assert _within(hit, n, hitting_probability(fix_a, A, start))
    x = A[1]
    _, _, esc = mc_hit_escape(fix_a, A, x, n, seed=6, first_return=True)
    assert _within(esc, n, escape_probability(fix_a, A, x))


@pytest.mark.parametrize(
    "kind",
    ["stay_in", "avoid_cone", "avoid_initial_factor"],
)
def test_constrained_against_monte_carlo(fix_a, kind):
    w = fix_a.word
    A = [w((1, "a"), (2, "b")), w((1, "a"), (2, "c"), (1, "a")), w((2, "b"))]
    n = 20_000
    if kind == "stay_in":
        anchor = w((1, "a"))
        con, mc_con, start = stay_in(anchor), ("stay_in", anchor), anchor
    elif kind == "avoid_cone":
        anchor = w((2, "b"))
        con, mc_con, start = avoid_cone_after_start(anchor), ("avoid_cone", anchor), w((1, "a"))
    else:
        con, mc_con, start = avoid_initial_factor(2), ("avoid_initial_factor", 2), ROOT
    hit, blocked, esc = mc_hit_escape(fix_a, A, start, n, seed=7, constraint=mc_con)
    assert _within(hit, n, hitting_probability(fix_a, A, start, con))
    members = [a for a in A if a == start]
    if not members:
        B = A + [start]
        _, _, esc = mc_hit_escape(fix_a, B, start, n, seed=8, first_return=True, constraint=mc_con)
        assert _within(esc, n, escape_probability(fix_a, B, start, con))


def test_ray_range_capacity(fix_ray):
    for n, seed in ((10, 1), (100, 2), (1000, 3)):
        tr = run_walk(fix_ray, n, seed)
        rep = capacity_report(fix_ray, tr.words())
        assert rep["capacity"] == pytest.approx(n / 2 + 1, abs=1e-12)


def test_ray_block_parts(fix_ray):
    g = (1, 1)
    R = [ROOT, fix_ray.word((2, 1))]
    assert constrained_escape_u0(fix_ray, R, g) == pytest.approx(0.0, abs=1e-14)
    assert constrained_escape_u1(fix_ray, R, fix_ray.word((2, 1)), g) == pytest.approx(0.5, abs=1e-14)
    R3 = [ROOT, fix_ray.word((2, 1)), fix_ray.word((2, 2))]
    assert block_capacity(fix_ray, R3, fix_ray.word((2, 2)), g) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_block_parts_match_constrained_solves(fix_a, seed):
    # block ranges taken from simulated walks; first-step restriction vs an explicit constrained solve
    from freewalk.sim import regeneration_blocks

    tr = run_walk(fix_a, 3000, seed)
    rg = regeneration_blocks(tr)
    g = rg.letter
    for b in rg.blocks[:8]:
        R = sorted(b.R_norm)
        parts = block_capacity_parts(fix_a, R, b.increment, g)
        assert parts["u0"] == pytest.approx(constrained_escape_u0(fix_a, R, g), abs=1e-10)
        assert parts["u1"] == pytest.approx(constrained_escape_u1(fix_a, R, b.increment, g), abs=1e-10)
        assert parts["interior"] + parts["u0"] + parts["u1"] <= b.duration + 1 + 1e-9


def test_dense_and_sparse_paths_agree(fix_a, monkeypatch):
    tr = run_walk(fix_a, 400, 9)
    words = tr.words()
    dense = capacity(fix_a, words)
    monkeypatch.setattr(capmod, "DENSE_LIMIT", 0)
    sparse = capacity(fix_a, words)
    assert dense == pytest.approx(sparse, abs=1e-10)


def test_report_fields(fix_a):
    rep = capacity_report(fix_a, [ROOT, fix_a.word((1, "a"))])
    assert rep["residual"] <= capmod.RESIDUAL_TOL
    assert rep["hull_size"] >= 2
    assert sum(rep["per_vertex"].values()) == pytest.approx(rep["capacity"])
