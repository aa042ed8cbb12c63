import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freewalk.capacity import block_capacity
from freewalk.config import fixture
from freewalk.errors import DegenerateError, ModelError, NumericError
from freewalk.estimators import (
    BlockSample,
    EstimateReport,
    _with_parameter,
    chat_direct,
    chat_regen,
    clt_experiment,
    decomposition_audit,
    exact_block_capacity,
    ratio_estimate,
    regen_blocks,
    short_cycle,
    sigma2_hat,
    sweep_diagnostics,
)
from freewalk.sim import exit_times, regeneration_blocks, run_walk


def _sample(C, T):
    C, T = np.asarray(C, float), np.asarray(T, float)
    return BlockSample(T, C, np.zeros(len(T), int), (1, 1), [])


def test_ratio_estimate_by_hand():
    C = np.array([1.0, 2.0, 3.0, 4.0])
    T = np.array([2.0, 3.0, 7.0, 8.0])
    r, se = ratio_estimate(C, T)
    assert r == pytest.approx(10 / 20)
    z = C - 0.5 * T
    assert se == pytest.approx(math.sqrt(z @ z / 12) / 5.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 10.0), st.integers(1, 30)), min_size=4, max_size=40))
def test_sigma2_jackknife_matches_loop(pairs):
    C = np.array([p[0] for p in pairs])
    T = np.array([p[1] for p in pairs], float)
    rep = sigma2_hat(_sample(C, T))

    def estimate(c, t):
        chat = c.sum() / t.sum()
        return (c - chat * t).var(ddof=1) / t.mean()

    assert rep.point == pytest.approx(estimate(C, T), rel=1e-9, abs=1e-12)
    # the fast jackknife holds the centering fixed at the full-sample ratio
    chat = C.sum() / T.sum()
    D = C - chat * T
    theta = np.array([np.delete(D, i).var(ddof=1) / np.delete(T, i).mean() for i in range(len(T))])
    n = len(T)
    jk = math.sqrt((n - 1) / n * ((theta - theta.mean()) ** 2).sum())
    assert rep.stderr == pytest.approx(jk, rel=1e-7, abs=1e-12)


def test_sigma2_needs_blocks():
    with pytest.raises(NumericError):
        sigma2_hat(_sample([1.0, 2.0], [1.0, 2.0]))


def test_report_interval():
    r = EstimateReport("x", 1.0, 0.1, 10, {}, "m")
    assert r.ci95[0] == pytest.approx(1 - 0.196, abs=1e-4)
    assert r.overlaps(EstimateReport("y", 1.3, 0.1, 10, {}, "m"))
    assert not r.overlaps(EstimateReport("y", 1.5, 0.1, 10, {}, "m"))


def test_ray_estimators(fix_ray):
    direct = chat_direct(fix_ray, [100, 1000], 3, seed=1)
    assert direct.point == pytest.approx((1000 / 2 + 1) / 1000, abs=1e-12)
    assert direct.stderr == pytest.approx(0.0, abs=1e-15)
    blocks = regen_blocks(fix_ray, 5000, 2, seed=1)
    regen = chat_regen(fix_ray, 5000, 2, seed=1, blocks=blocks)
    assert regen.point == pytest.approx(0.5, abs=1e-12)
    assert sigma2_hat(blocks).point <= 1e-10
    with pytest.raises(DegenerateError):
        clt_experiment(fix_ray, 10, 100, 3, regen, sigma2_hat(blocks))


def test_chat_direct_rejects_bad_schedule(fix_a):
    with pytest.raises(ModelError):
        chat_direct(fix_a, [0, 10], 2, seed=1)


def test_worker_count_does_not_change_results(fix_a):
    one = chat_direct(fix_a, [200, 400], 6, seed=4, workers=1)
    many = chat_direct(fix_a, [200, 400], 6, seed=4, workers=3)
    assert one.to_dict() == many.to_dict()
    b1 = regen_blocks(fix_a, 3000, 3, seed=4, workers=1)
    b3 = regen_blocks(fix_a, 3000, 3, seed=4, workers=3)
    assert np.array_equal(b1.capacities, b3.capacities)
    assert np.array_equal(b1.durations, b3.durations)


def test_exact_block_memo_matches_direct_solve(fix_a):
    tr = run_walk(fix_a, 4000, 21)
    rg = regeneration_blocks(tr)
    for b in rg.blocks[:10]:
        want = block_capacity(fix_a, sorted(b.R_norm), b.increment, rg.letter)
        assert exact_block_capacity(fix_a, b.R_norm, b.increment, rg.letter) == want
        assert want <= b.duration + 1 + 1e-9


def test_chat_regen_needs_two_blocks(fix_a):
    with pytest.raises(NumericError, match="regeneration"):
        chat_regen(fix_a, 5, 1, seed=1)


@pytest.mark.parametrize("replica", [0, 1, 2])
def test_decomposition_identity(fix_a, replica):
    tr = run_walk(fix_a, 1500, 31, replica)
    ex = exit_times(tr, guard=500)
    assert ex.n_confirmed >= 5
    for k in range(1, min(12, ex.n_confirmed) + 1):
        audit = decomposition_audit(fix_a, tr, k, ex)
        assert audit["error"] <= 1e-9
        assert audit["depth_check"]


def test_decomposition_rejects_unconfirmed(fix_a):
    tr = run_walk(fix_a, 200, 1)
    ex = exit_times(tr, guard=1000)
    with pytest.raises(ModelError):
        decomposition_audit(fix_a, tr, 1, ex)


def test_short_cycle(fix_a, fix_ray):
    x0, kappa = short_cycle(fix_a)
    assert kappa == 2
    assert short_cycle(fix_ray) is None


def test_with_parameter():
    spec = fixture("exampleA")
    out = _with_parameter(spec, "alpha", 0.3)
    assert out["alpha"] == 0.3 and spec["alpha"] == 0.5
    edge = _with_parameter(spec, "factor2:c->o2", 0.7)
    row = {e[1]: e[2] for e in edge["factor2"]["edges"] if e[0] == "c"}
    assert row == {"o2": 0.7, "b": pytest.approx(0.3)}
    with pytest.raises(ModelError):
        _with_parameter(spec, "factor1:a->o1", 0.5)


def _points(values, noise, se):
    return [{"value": float(x), "chat": float(y), "stderr": se} for x, y in zip(values, noise)]


def test_sweep_diagnostics_smooth_and_spiky():
    x = np.linspace(0.2, 0.8, 13)
    rng = np.random.default_rng(0)
    smooth = 0.03 - 0.1 * (x - 0.45) ** 2 + rng.normal(0, 1e-4, len(x))
    assert sweep_diagnostics(_points(x, smooth, 1e-4))["status"] == "pass"
    spiky = smooth.copy()
    spiky[6] += 3e-3
    rep = sweep_diagnostics(_points(x, spiky, 1e-4))
    assert rep["status"] == "fail"
    assert 0.5 in [round(s, 10) for s in rep["spikes"]] or not rep["fit_ok"]


def test_sweep_diagnostics_needs_points():
    assert sweep_diagnostics(_points([0.1, 0.2], [1, 2], 0.1))["status"] == "inconclusive"
