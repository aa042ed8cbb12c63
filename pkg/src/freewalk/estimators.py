"""Estimators of the asymptotic capacity and related characteristic numbers.

Two routes to the capacity constant are provided: ``Cap(R_n)/n`` on simulated ranges,
and the regeneration ratio ``E[C_block] / E[duration]`` where every block capacity is
computed exactly (no Monte Carlo error inside a block).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.stats

from .capacity import (
    UNCONSTRAINED,
    avoid_cone_after_start,
    avoid_initial_factor,
    block_capacity,
    capacity_on_trie,
    solve_on_trie,
    stay_in,
)
from .core import FreeProduct, Letter, Word, first_factor1_letter, free_product_from_spec, step_distribution, validate
from .errors import DegenerateError, FreewalkError, ModelError, NumericError
from .genfun import transience_check
from .parallel import ordered_map
from .sim import DEFAULT_GUARD, _euler_intervals, exit_times, regeneration_blocks, run_walk

Z95 = 1.959963984540054
#: sigma^2 at or below this is treated as degenerate
DEGENERATE_SIGMA2 = 1e-10


@dataclass
class EstimateReport:
    name: str
    point: float
    stderr: float
    n_samples: int
    seeds: dict
    method: str
    extra: dict = field(default_factory=dict)
    ci95: tuple = ()

    def __post_init__(self):
        self.stderr = max(float(self.stderr), 0.0)
        self.point = float(self.point)
        self.ci95 = (self.point - Z95 * self.stderr, self.point + Z95 * self.stderr)

    def overlaps(self, other: "EstimateReport") -> bool:
        return self.ci95[0] <= other.ci95[1] and other.ci95[0] <= self.ci95[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return (float(v.mean()) if len(v) else math.nan), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _seeds(seed, replicas, offset=0) -> dict:
    return {"master_seed": int(seed), "replicas": [int(offset), int(offset + replicas)]}


# ---------------------------------------------------------------------------
# exact block capacities, memoized by block identity

_BLOCK_MEMO: dict = {}


def exact_block_capacity(fp: FreeProduct, R_norm, increment: Word, letter: Letter) -> float:
    """Block capacity keyed by ``(model, letter, set, increment)``.

    The set is sorted first so the value does not depend on which replica computed it.
    """
    key = (fp.fingerprint, tuple(letter), frozenset(R_norm), increment)
    hit = _BLOCK_MEMO.get(key)
    if hit is None:
        hit = block_capacity(fp, sorted(R_norm), increment, letter)
        _BLOCK_MEMO.setdefault(key, hit)
    return hit


# ---------------------------------------------------------------------------
# replica tasks (top level so worker processes can import them)


def _direct_task(args):
    fp, schedule, seed, replica = args
    tr = run_walk(fp, max(schedule), seed, replica)
    fv = np.asarray(tr.first_visit)
    caps = [capacity_on_trie(fp, tr.trie, np.flatnonzero(fv <= n)) for n in schedule]
    return {"caps": caps}


def _walk_task(args):
    fp, n, seed, replica = args
    tr = run_walk(fp, n, seed, replica)
    return {"norm": tr.trie.depth[int(tr.path[-1])], "range": len(tr.trie)}


def _regen_task(args):
    fp, horizon, seed, replica, letter, guard, with_cbar = args
    tr = run_walk(fp, horizon, seed, replica)
    ex = exit_times(tr, guard)
    rg = regeneration_blocks(tr, letter, ex)
    blocks = []
    for b in rg.blocks:
        cap = exact_block_capacity(fp, b.R_norm, b.increment, rg.letter)
        blocks.append((b.duration, cap, len(b.R_norm)))
    out = {"blocks": blocks, "n_regen": len(rg.times), "k": ex.n_confirmed, "e_k": int(ex.times[ex.n_confirmed])}
    if with_cbar and ex.n_confirmed > 0:
        fv = np.asarray(tr.first_visit)
        out["cap_ek"] = capacity_on_trie(fp, tr.trie, np.flatnonzero(fv <= out["e_k"]))
    return out


# ---------------------------------------------------------------------------
# estimators


def chat_direct(fp: FreeProduct, n_schedule, replicas: int, seed: int, workers: int = 1) -> EstimateReport:
    """``Cap(R_n)/n`` averaged over replicas; the report is for the largest ``n``."""
    schedule = sorted(int(n) for n in n_schedule)
    if not schedule or schedule[0] <= 0:
        raise ModelError("checkpoints must be positive step counts")
    if replicas < 1:
        raise ModelError("replicas must be >= 1")
    transience_check(fp)
    res = ordered_map(_direct_task, [(fp, schedule, seed, r) for r in range(replicas)], workers)
    table = np.array([r["caps"] for r in res]) / np.array(schedule)
    rows = []
    for j, n in enumerate(schedule):
        m, se = _mean_se(table[:, j])
        rows.append({"n": n, "mean": m, "stderr": se})
    m, se = rows[-1]["mean"], rows[-1]["stderr"]
    if replicas == 1:
        se = 0.0
    return EstimateReport(
        "chat_direct", m, se, replicas, _seeds(seed, replicas), "Cap(R_n)/n replica mean",
        {"checkpoints": rows, "per_replica": table[:, -1].tolist()},
    )


@dataclass
class BlockSample:
    durations: np.ndarray
    capacities: np.ndarray
    replica: np.ndarray
    letter: Letter
    per_replica: list

    def __len__(self):
        return len(self.durations)


def regen_blocks(
    fp: FreeProduct, horizon: int, replicas: int, seed: int, workers: int = 1, letter=None,
    guard: int = DEFAULT_GUARD, with_cbar: bool = False, replica_offset: int = 0,
) -> BlockSample:
    """Simulate replicas and collect (duration, exact capacity) for every confirmed block."""
    transience_check(fp)
    letter = first_factor1_letter(fp) if letter is None else Letter(*letter)
    tasks = [(fp, horizon, seed, replica_offset + r, letter, guard, with_cbar) for r in range(replicas)]
    res = ordered_map(_regen_task, tasks, workers)
    d, c, rep = [], [], []
    for r, out in enumerate(res):
        for dur, cap, _ in out["blocks"]:
            d.append(dur)
            c.append(cap)
            rep.append(r)
    return BlockSample(np.array(d, dtype=float), np.array(c, dtype=float), np.array(rep), letter, res)


def ratio_estimate(C, T) -> tuple[float, float]:
    """``sum C / sum T`` with a delta-method standard error."""
    C = np.asarray(C, float)
    T = np.asarray(T, float)
    n = len(T)
    r = C.sum() / T.sum()
    if n < 2:
        return float(r), math.nan
    z = C - r * T
    se = math.sqrt((z @ z) / (n * (n - 1))) / T.mean()
    return float(r), float(se)


def chat_regen(
    fp: FreeProduct, horizon: int, replicas: int, seed: int, workers: int = 1, letter=None,
    guard: int = DEFAULT_GUARD, blocks: BlockSample | None = None,
) -> EstimateReport:
    """Regeneration ratio estimator ``mean(C_block) / mean(duration)``."""
    if blocks is None:
        blocks = regen_blocks(fp, horizon, replicas, seed, workers, letter, guard)
    if len(blocks) < 2:
        raise NumericError(
            f"estimators: fewer than two confirmed regeneration blocks with letter {tuple(blocks.letter)} "
            f"and horizon {horizon}; increase the horizon"
        )
    r, se = ratio_estimate(blocks.capacities, blocks.durations)
    return EstimateReport(
        "chat_regen", r, se, len(blocks), _seeds(seed, replicas), "regeneration ratio, delta method",
        {
            "mean_block_capacity": float(blocks.capacities.mean()),
            "mean_duration": float(blocks.durations.mean()),
            "letter": list(blocks.letter),
            "horizon": horizon,
        },
    )


def _walk_stats(fp, horizon, replicas, seed, workers):
    if horizon <= 0 or replicas < 1:
        raise ModelError("horizon and replicas must be positive")
    return ordered_map(_walk_task, [(fp, horizon, seed, r) for r in range(replicas)], workers)


def ell_hat(fp: FreeProduct, horizon: int, replicas: int, seed: int, workers: int = 1, stats=None) -> EstimateReport:
    """Rate of escape ``|X_n| / n`` at the terminal time."""
    stats = stats or _walk_stats(fp, horizon, replicas, seed, workers)
    m, se = _mean_se([s["norm"] / horizon for s in stats])
    return EstimateReport("ell_hat", m, 0.0 if replicas == 1 else se, replicas, _seeds(seed, replicas), "terminal |X_n|/n")


def range_hat(fp: FreeProduct, horizon: int, replicas: int, seed: int, workers: int = 1, stats=None) -> EstimateReport:
    """Asymptotic range ``|R_n| / n`` at the terminal time."""
    stats = stats or _walk_stats(fp, horizon, replicas, seed, workers)
    m, se = _mean_se([s["range"] / horizon for s in stats])
    return EstimateReport("range_hat", m, 0.0 if replicas == 1 else se, replicas, _seeds(seed, replicas), "terminal |R_n|/n")


def cbar_relation_check(blocks: BlockSample, chat: EstimateReport) -> dict:
    """``cbar = lim Cap(R_{e_k})/k`` times ``ell = lim k/e_k`` against the capacity estimate.

    ``blocks`` must come from :func:`regen_blocks` with ``with_cbar=True``.
    """
    per = [r for r in blocks.per_replica if "cap_ek" in r]
    ks = [r["k"] for r in per]
    if len(per) < 2 or min(ks) < 5:
        return {"status": "inconclusive", "reason": "fewer than 5 confirmed exit times or 2 replicas"}
    cb = np.array([r["cap_ek"] / r["k"] for r in per])
    el = np.array([r["k"] / r["e_k"] for r in per])
    n = len(per)
    c_m, l_m = cb.mean(), el.mean()
    cov = np.cov(np.vstack([cb, el]), ddof=1) / n
    prod = c_m * l_m
    se = math.sqrt(max(l_m**2 * cov[0, 0] + c_m**2 * cov[1, 1] + 2 * c_m * l_m * cov[0, 1], 0.0))
    diff = prod - chat.point
    joint = math.sqrt(se**2 + chat.stderr**2)
    return {
        "status": "pass" if abs(diff) <= Z95 * joint else "fail",
        "cbar": float(c_m),
        "cbar_stderr": float(math.sqrt(cov[0, 0])),
        "ell": float(l_m),
        "ell_stderr": float(math.sqrt(cov[1, 1])),
        "product": float(prod),
        "product_stderr": float(se),
        "chat": chat.point,
        "difference": float(diff),
        "joint_stderr": float(joint),
    }


def sigma2_hat(blocks: BlockSample, chat=None, seed=None) -> EstimateReport:
    """``Var(D) / mean(duration)`` with ``D_i = C_i - chat * duration_i``; jackknife standard error.

    ``chat`` defaults to the ratio estimate on the same blocks.  When an independent
    estimate (float or report) is given, ``extra`` also carries ``mean(D)`` with a
    standard error that includes the uncertainty of ``chat``.
    """
    C, T = blocks.capacities, blocks.durations
    n = len(T)
    if n < 3:
        raise NumericError("estimators: sigma2_hat needs at least three blocks")
    if chat is None:
        c, c_se = ratio_estimate(C, T)[0], 0.0
    elif isinstance(chat, EstimateReport):
        c, c_se = chat.point, chat.stderr
    else:
        c, c_se = float(chat), 0.0
    D = C - c * T
    s1, s2, st = D.sum(), (D * D).sum(), T.sum()
    point = (s2 - s1 * s1 / n) / (n - 1) / (st / n)
    # leave-one-out replicates from running sums
    s1_i = s1 - D
    s2_i = s2 - D * D
    var_i = (s2_i - s1_i * s1_i / (n - 1)) / (n - 2)
    theta = var_i / ((st - T) / (n - 1))
    jk = math.sqrt((n - 1) / n * float(((theta - theta.mean()) ** 2).sum()))
    mean_D = float(D.mean())
    se_D = math.sqrt(float(D.var(ddof=1)) / n + (T.mean() * c_se) ** 2)
    return EstimateReport(
        "sigma2_hat", point, jk, n, {"master_seed": seed}, "Var(D)/mean(duration), jackknife",
        {"chat": c, "mean_D": mean_D, "mean_D_stderr": se_D},
    )


def prop57_check(blocks: BlockSample, chat_direct_report: EstimateReport) -> dict:
    """Mean exact block capacity against ``chat_direct * mean(duration)``."""
    if len(blocks) < 2:
        return {"status": "inconclusive", "reason": "no blocks"}
    C, T = blocks.capacities, blocks.durations
    n = len(T)
    c = chat_direct_report.point
    a, se_a = _mean_se(C)
    tbar, se_t = _mean_se(T)
    b = c * tbar
    se_b = math.sqrt((tbar * chat_direct_report.stderr) ** 2 + (c * se_t) ** 2)
    D = C - c * T
    joint = math.sqrt(float(D.var(ddof=1)) / n + (tbar * chat_direct_report.stderr) ** 2)
    return {
        "status": "pass" if abs(a - b) <= Z95 * joint else "fail",
        "mean_block_capacity": a,
        "mean_block_capacity_stderr": se_a,
        "chat_times_mean_duration": b,
        "chat_times_mean_duration_stderr": se_b,
        "difference": a - b,
        "joint_stderr": joint,
    }


# ---------------------------------------------------------------------------
# decomposition of Cap(R_{e_k})


def decomposition_audit(fp: FreeProduct, tr, k: int, exits=None) -> dict:
    """Evaluate every term of ``Cap(R_{e_k}) = C0* + sum_{i<k} C_i + O_k`` on one trajectory."""
    exits = exit_times(tr) if exits is None else exits
    if not 1 <= k <= exits.n_confirmed:
        raise ModelError(f"exit time e_{k} is not confirmed (confirmed up to {exits.n_confirmed})")
    trie = tr.trie
    fv = np.asarray(tr.first_visit)
    e, P = exits.times, [int(x) for x in exits.nodes]
    tin, tout = _euler_intervals(trie)
    depth = np.asarray(trie.depth)

    def R(t):
        return np.flatnonzero(fv <= t)

    def in_cone(nodes, anchor):
        return (tin[nodes] >= tin[anchor]) & (tin[nodes] < tout[anchor])

    def esc_sum(targets, xs):
        if len(xs) == 0:
            return 0.0
        sol = solve_on_trie(fp, trie, targets)
        esc = sol.escapes()
        return float(sum(esc[sol.hull.of_trie[int(x)]] for x in xs))

    def esc(targets, x, constraint=UNCONSTRAINED):
        sol = solve_on_trie(fp, trie, targets, (), constraint)
        return sol.escape_from(sol.hull.of_trie[x])

    lhs = capacity_on_trie(fp, trie, R(e[k]))
    t1 = trie.factor[P[1]]
    Re1 = R(e[1])
    first_factor = np.array([trie.factor[trie.ancestor(int(x), 1)] if x else 0 for x in Re1])
    inC0 = (Re1 == 0) | (first_factor == t1)
    R0I = Re1[inC0 & ~in_cone(Re1, P[1]) & (Re1 != 0)]
    R0 = np.union1d(R0I, [0, P[1]])
    terms = []
    c0 = (
        esc_sum(R0, R0I)
        + esc(R0, 0, avoid_initial_factor(3 - t1))
        + esc(R0, P[1], avoid_cone_after_start(P[1]))
    )
    terms.append(c0)
    for i in range(1, k):
        Rn = R(e[i + 1])
        RiI = Rn[in_cone(Rn, P[i]) & ~in_cone(Rn, P[i + 1]) & (Rn != P[i])]
        Ri = np.union1d(RiI, [P[i], P[i + 1]])
        terms.append(
            esc_sum(Ri, RiI) + esc(Ri, P[i], stay_in(P[i])) + esc(Ri, P[i + 1], avoid_cone_after_start(P[i + 1]))
        )
    c0_star = esc_sum(Re1, Re1[~inC0]) + esc(Re1, 0, avoid_initial_factor(t1))
    Rk = R(e[k])
    Ok_set = Rk[in_cone(Rk, P[k]) & (Rk != P[k])]
    o_k = esc_sum(Rk, Ok_set) + esc(Rk, P[k], stay_in(P[k]))
    rhs = c0_star + sum(terms) + o_k
    return {
        "k": k,
        "e_k": int(e[k]),
        "lhs": lhs,
        "rhs": rhs,
        "error": abs(lhs - rhs),
        "C0_star": c0_star,
        "C": terms,
        "O_k": o_k,
        "depth_check": bool(depth[P[k]] == k),
    }


# ---------------------------------------------------------------------------
# central limit theorem


def short_cycle(fp: FreeProduct, max_len: int = 6, radius: int = 2):
    """A word ``x0`` within ``radius`` steps of ``o`` and ``kappa <= max_len`` with ``p^(kappa)(x0,x0) > 0``."""
    near = [Word()]
    seen = {Word()}
    frontier = [Word()]
    for _ in range(radius):
        nxt = []
        for w in frontier:
            for y, p in step_distribution(fp, w):
                if p > 0 and y not in seen:
                    seen.add(y)
                    nxt.append(y)
        near.extend(nxt)
        frontier = nxt
    for x0 in near:
        layer = {x0}
        for kappa in range(1, max_len + 1):
            layer = {y for w in layer for y, p in step_distribution(fp, w) if p > 0}
            if x0 in layer:
                return x0, kappa
    return None


def _clt_task(args):
    fp, n, seed, replica = args
    tr = run_walk(fp, n, seed, replica)
    return capacity_on_trie(fp, tr.trie, range(len(tr.trie)))


@dataclass
class CltReport:
    m_walks: int
    n_steps: int
    sample: np.ndarray
    ks_distance: float
    ks_pvalue: float
    chat: float
    sigma: float
    seeds: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self, with_sample: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "sample"}
        if with_sample:
            d["sample"] = self.sample.tolist()
        return d


def clt_experiment(
    fp: FreeProduct, m_walks: int, n_steps: int, seed: int, chat, sigma2, workers: int = 1, chat_alt=None
) -> CltReport:
    """Standardize ``Cap(R_n)`` over ``m_walks`` independent walks and measure the KS distance to N(0,1).

    ``chat`` and ``sigma2`` (floats or reports) must come from an independent seed.
    ``chat_alt`` optionally gives a second centering whose KS distance is reported in ``extra``.
    """
    if m_walks < 1 or n_steps < 1:
        raise ModelError("m_walks and n_steps must be positive")
    c = chat.point if isinstance(chat, EstimateReport) else float(chat)
    s2 = sigma2.point if isinstance(sigma2, EstimateReport) else float(sigma2)
    if not s2 > DEGENERATE_SIGMA2:
        raise DegenerateError(
            f"estimators: sigma^2 estimate {s2:.3g} is degenerate (<= {DEGENERATE_SIGMA2:g}); the "
            "fluctuations of Cap(R_n) vanish, as for deterministic ray factors, so the CLT check is refused"
        )
    cyc = short_cycle(fp)
    if cyc is None:
        raise DegenerateError("estimators: no positive-probability cycle of length <= 6 near o; CLT check refused")
    transience_check(fp)
    caps = np.array(ordered_map(_clt_task, [(fp, n_steps, seed, r) for r in range(m_walks)], workers))
    sigma = math.sqrt(s2)
    z = (caps - n_steps * c) / (sigma * math.sqrt(n_steps))
    ks = scipy.stats.kstest(z, "norm")
    extra = {"cycle": [fp.format_word(cyc[0]), cyc[1]], "mean_z": float(z.mean()), "std_z": float(z.std(ddof=1))}
    if chat_alt is not None:
        ca = chat_alt.point if isinstance(chat_alt, EstimateReport) else float(chat_alt)
        z2 = (caps - n_steps * ca) / (sigma * math.sqrt(n_steps))
        extra["alt_chat"] = ca
        extra["alt_ks_distance"] = float(scipy.stats.kstest(z2, "norm").statistic)
    return CltReport(m_walks, n_steps, z, float(ks.statistic), float(ks.pvalue), c, sigma, _seeds(seed, m_walks), extra)


# ---------------------------------------------------------------------------
# parameter sweep


@dataclass
class SweepReport:
    parameter: str
    grid: list
    points: list
    skipped: list
    diagnostics: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _with_parameter(spec: dict, parameter: str, value: float) -> dict:
    spec = {k: (dict(v) if isinstance(v, dict) else v) for k, v in spec.items()}
    if parameter == "alpha":
        spec["alpha"] = value
        return spec
    # "factorN:x->y" sets one edge probability and puts the remainder on the row's other edge
    fac, _, edge = parameter.partition(":")
    x, _, y = edge.partition("->")
    if fac not in ("factor1", "factor2") or not x or not y:
        raise ModelError(f"unknown sweep parameter {parameter!r}")
    f = dict(spec[fac])
    if f.get("kind") != "explicit":
        raise ModelError("edge sweeps need an explicit factor")
    edges = [list(e) for e in f["edges"]]
    row = [e for e in edges if e[0] == x]
    if len(row) != 2 or not any(e[1] == y for e in row):
        raise ModelError("edge sweeps need a row with exactly two edges including the swept one")
    for e in row:
        e[2] = value if e[1] == y else 1.0 - value
    f["edges"] = edges
    spec[fac] = f
    return spec


def sweep(
    base_spec: dict, parameter: str, grid, horizon: int, replicas: int, seed: int, workers: int = 1, degree: int = 4
) -> SweepReport:
    """Regeneration estimate of the capacity constant at every admissible grid point, plus smoothness diagnostics."""
    grid = [float(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ModelError("sweep grid must be strictly increasing")
    points, skipped = [], []
    for j, value in enumerate(grid):
        if parameter == "alpha" and not 0.0 < value < 1.0:
            skipped.append({"value": value, "reason": "alpha must lie in (0,1)"})
            continue
        try:
            fp = free_product_from_spec(_with_parameter(base_spec, parameter, value))
            problems = validate(fp)
            if problems:
                skipped.append({"value": value, "reason": "; ".join(problems)})
                continue
            blocks = regen_blocks(fp, horizon, replicas, seed, workers, replica_offset=j * replicas)
            rep = chat_regen(fp, horizon, replicas, seed, blocks=blocks)
        except FreewalkError as exc:
            skipped.append({"value": value, "reason": str(exc)})
            continue
        points.append({"value": value, "chat": rep.point, "stderr": rep.stderr, "ci95": list(rep.ci95),
                       "blocks": rep.n_samples, "replicas": [j * replicas, (j + 1) * replicas]})
    diag = sweep_diagnostics(points, degree)
    return SweepReport(parameter, grid, points, skipped, diag)


def sweep_diagnostics(points, degree: int = 4) -> dict:
    """Weighted polynomial fit residual against pooled noise, and second differences against the fit."""
    if len(points) < degree + 2:
        return {"status": "inconclusive", "reason": "too few admissible points"}
    x = np.array([p["value"] for p in points])
    y = np.array([p["chat"] for p in points])
    se = np.array([p["stderr"] for p in points])
    coef = np.polyfit(x, y, degree, w=1.0 / se)
    fit = np.polyval(coef, x)
    rms = float(np.sqrt(np.mean((y - fit) ** 2)))
    pooled = float(np.sqrt(np.mean(se**2)))
    d2 = y[:-2] - 2 * y[1:-1] + y[2:]
    d2_fit = fit[:-2] - 2 * fit[1:-1] + fit[2:]
    se_d2 = np.sqrt(se[:-2] ** 2 + 4 * se[1:-1] ** 2 + se[2:] ** 2)
    score = np.abs(d2 - d2_fit) / se_d2
    spikes = [float(x[j + 1]) for j in np.flatnonzero(score > 3.0)]
    fit_ok = rms <= 2 * pooled
    return {
        "status": "pass" if fit_ok and not spikes else "fail",
        "degree": degree,
        "fit_rms": rms,
        "pooled_stderr": pooled,
        "fit_ok": fit_ok,
        "max_abs_second_difference": float(np.max(np.abs(d2))),
        "max_second_difference_score": float(score.max()),
        "spikes": spikes,
        "coefficients": coef.tolist(),
    }
