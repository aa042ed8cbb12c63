"""Generating functions of the free-product walk and of its factors.

``u_i(x, z)`` is the generating function of the first visit to ``o`` from a one-letter
word ``x`` of factor ``i``.  It is the minimal nonnegative solution of

    u_i(x) = alpha_i z p_i(x, o_i) + alpha_i z sum_y p_i(x, y) u_i(y) + abar_j u_i(x),
    abar_i = alpha_i z sum_s p_i(o_i, s) u_i(s),

obtained by monotone iteration from zero.  From it,
``xi_i(z) = alpha_i z / (1 - abar_j(z))`` and ``G(o,o|z) = 1 / (1 - abar_1 - abar_2)``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .core import FactorGraph, FreeProduct, Letter
from .errors import ModelError, NumericError, TransienceError

_LOCK = threading.Lock()
# memo shared by all models with the same fingerprint; single writer per key
_MEMO: dict = {}

#: the transience gate requires radius >= 1 + TRANSIENCE_MARGIN
TRANSIENCE_MARGIN = 1e-3


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-12
    max_iterations: int = 1_000_000
    radii: tuple = (8, 16, 32, 64, 128, 256, 512, 1024)
    stall_window: int = 10_000
    blowup: float = 1e12

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ModelError("tolerance must be positive")


DEFAULT_CONFIG = FixedPointConfig()


@dataclass
class ReturnWeights:
    z: float
    u1: dict
    u2: dict
    abar1: float
    abar2: float
    xi1: float
    xi2: float
    iterations: int = 0
    residual: float = 0.0
    factors: tuple = field(default=(), repr=False)

    @property
    def U(self) -> float:
        """First-return generating function ``U(o,o|z)``."""
        return self.abar1 + self.abar2

    def xi(self, i: int) -> float:
        return self.xi1 if i == 1 else self.xi2

    def abar(self, i: int) -> float:
        return self.abar1 if i == 1 else self.abar2

    def u(self, letter) -> float:
        f, s = letter
        table = self.u1 if f == 1 else self.u2
        if s in table:
            return table[s]
        if self.factors and self.factors[f - 1].can_reach(s, (0,)) is False:
            return 0.0
        raise KeyError(f"no return weight stored for letter {letter}")


class _Divergence(Exception):
    pass


class _FactorSystem:
    """Linear data of one factor restricted to a finite state list."""

    def __init__(self, g: FactorGraph, radius: int | None):
        if g.is_finite:
            states = list(range(1, g.n_states))
        else:
            states = [s for s in g.ball(radius) if s != 0]
        # states that provably never reach the root carry weight exactly 0
        active = [s for s in states if g.can_reach(s, (0,)) is not False]
        self.zero_states = [s for s in states if s not in set(active)]
        self.states = active
        pos = {s: k for k, s in enumerate(active)}
        n = len(active)
        self.Q = np.zeros((n, n))
        self.to_root = np.zeros(n)
        self.outside = np.zeros(n)
        for k, s in enumerate(active):
            for t, p in zip(*g.row(s)):
                if t == 0:
                    self.to_root[k] += p
                elif t in pos:
                    self.Q[k, pos[t]] += p
                elif g.can_reach(t, (0,)) is not False:
                    self.outside[k] += p
        self.root_row = np.zeros(n)
        for t, p in zip(*g.row(0)):
            if t in pos:
                self.root_row[pos[t]] += p
        self.root_outside = sum(
            p for t, p in zip(*g.row(0)) if t not in pos and t != 0 and g.can_reach(t, (0,)) is not False
        )
        self.exact = g.is_finite or not self.outside.any() and self.root_outside == 0


def _iterate(systems, fp: FreeProduct, z: float, cfg: FixedPointConfig, boundary: float):
    a = (fp.alpha * z, (1.0 - fp.alpha) * z)
    u = [np.zeros(len(s.states)) for s in systems]
    const = [a[i] * (systems[i].to_root + boundary * systems[i].outside) for i in (0, 1)]
    root_const = [a[i] * boundary * systems[i].root_outside for i in (0, 1)]
    best = math.inf
    checkpoint = math.inf
    prev_res = math.inf
    rate = 0.0
    for it in range(1, cfg.max_iterations + 1):
        ab = [a[i] * (systems[i].root_row @ u[i]) + root_const[i] for i in (0, 1)]
        new = [const[i] + a[i] * (systems[i].Q @ u[i]) + ab[1 - i] * u[i] for i in (0, 1)]
        res = max((float(np.max(np.abs(new[i] - u[i]))) if len(u[i]) else 0.0) for i in (0, 1))
        u = new
        if not math.isfinite(res) or any(len(x) and x.max() > cfg.blowup for x in u):
            raise _Divergence(f"iterates exceed {cfg.blowup:g} at z={z}")
        if prev_res > 0 and math.isfinite(prev_res):
            rate = min(res / prev_res, 1.0)
        prev_res = res
        # stop once the geometric tail bound is below tolerance
        if res <= max(cfg.tolerance * (1.0 - rate), 1e-16) or res == 0.0:
            ab = [a[i] * (systems[i].root_row @ u[i]) + root_const[i] for i in (0, 1)]
            return u, ab, it, res
        best = min(best, res)
        if it % cfg.stall_window == 0:
            if best > checkpoint / 2:
                raise _Divergence(f"residual failed to halve over {cfg.stall_window} iterations at z={z}")
            checkpoint = best
    raise _Divergence(f"no convergence within {cfg.max_iterations} iterations at z={z}")


def _solve_return_weights(fp: FreeProduct, z: float, cfg: FixedPointConfig) -> ReturnWeights:
    g1, g2 = fp.factor1, fp.factor2
    if g1.is_finite and g2.is_finite:
        radii = [None]
    else:
        radii = list(cfg.radii)
    last_gap = None
    for r in radii:
        systems = [_FactorSystem(g1, r), _FactorSystem(g2, r)]
        lo_u, lo_ab, it, res = _iterate(systems, fp, z, cfg, 0.0)
        if all(s.exact for s in systems):
            hi_u, hi_ab = lo_u, lo_ab
        else:
            hi_u, hi_ab, it2, _ = _iterate(systems, fp, z, cfg, 1.0)
            it = max(it, it2)
        gap = max(abs(hi_ab[0] - lo_ab[0]), abs(hi_ab[1] - lo_ab[1]))
        last_gap = gap
        if gap < cfg.tolerance:
            u_maps = []
            for s, lo, hi in zip(systems, lo_u, hi_u):
                m = {st: float(0.5 * (x + y)) for st, x, y in zip(s.states, lo, hi)}
                m.update({st: 0.0 for st in s.zero_states})
                u_maps.append(m)
            ab = [0.5 * (lo_ab[i] + hi_ab[i]) for i in (0, 1)]
            xi = []
            for i in (0, 1):
                denom = 1.0 - ab[1 - i]
                if denom <= 0:
                    raise _Divergence(f"abar_{2 - i} >= 1 at z={z}")
                xi.append(fp.weight(i + 1) * z / denom)
            return ReturnWeights(z, u_maps[0], u_maps[1], ab[0], ab[1], xi[0], xi[1], it, res, (g1, g2))
    raise NumericError(f"implicit-factor truncation budget exhausted at z={z} (sandwich gap {last_gap:g})")


def return_weights(fp: FreeProduct, z: float, cfg: FixedPointConfig = DEFAULT_CONFIG) -> ReturnWeights:
    """Return weights at ``z``; memoized per model.

    Raises :class:`NumericError` when the iteration diverges (``z`` at or beyond the radius).
    """
    if not z >= 0:
        raise ModelError("z must be nonnegative")
    key = (fp.fingerprint, "rw", float(z), cfg)
    cache = _MEMO
    hit = cache.get(key)
    if hit is not None:
        return hit
    try:
        rw = _solve_return_weights(fp, float(z), cfg)
    except _Divergence as exc:
        raise NumericError(f"return-weight iteration diverged: {exc}") from None
    with _LOCK:
        cache.setdefault(key, rw)
    return cache[key]


def green_at_root(fp: FreeProduct, z: float, cfg: FixedPointConfig = DEFAULT_CONFIG) -> float:
    """``G(o,o|z) = 1 / (1 - U(o,o|z))``."""
    if z == 0:
        return 1.0
    rw = return_weights(fp, z, cfg)
    if rw.U >= 1.0:
        raise NumericError(f"U(o,o|{z}) = {rw.U:.6g} >= 1: z is not below the radius")
    return 1.0 / (1.0 - rw.U)


# ---------------------------------------------------------------------------
# factor generating functions


def _spectral_check(M: np.ndarray, what: str) -> None:
    if M.size and max(abs(np.linalg.eigvals(M))) >= 1.0 - 1e-14:
        raise NumericError(f"{what}: argument at or beyond the factor radius (singular system)")


def _factor_states(g: FactorGraph, radius):
    return list(range(g.n_states)) if g.is_finite else g.ball(radius)


def _first_visit_system(g, x, y, w, radius, boundary):
    states = [s for s in _factor_states(g, radius) if s != y and g.can_reach(s, (y,)) is not False]
    pos = {s: k for k, s in enumerate(states)}
    n = len(states)
    Q = np.zeros((n, n))
    rhs = np.zeros(n)
    for k, s in enumerate(states):
        for t, p in zip(*g.row(s)):
            if t == y:
                rhs[k] += w * p
            elif t in pos:
                Q[k, pos[t]] += w * p
            elif g.can_reach(t, (y,)) is not False:
                rhs[k] += w * p * boundary
    _spectral_check(Q, "factor_first_visit")
    sol = np.linalg.solve(np.eye(n) - Q, rhs)
    if (sol < -1e-12).any():
        raise NumericError("factor_first_visit: negative solution")
    return sol[pos[x]] if x in pos else 0.0


def _last_visit_system(g, x, y, w, radius, boundary):
    # K(v) = 1[v=y] + w sum_{u != x} p(v,u) K(u);  L = w sum_{v != x} p(x,v) K(v)
    states = [s for s in _factor_states(g, radius) if s != x and g.can_reach(s, (y,)) is not False]
    pos = {s: k for k, s in enumerate(states)}
    n = len(states)
    Q = np.zeros((n, n))
    rhs = np.zeros(n)
    for k, s in enumerate(states):
        if s == y:
            rhs[k] = 1.0
        for t, p in zip(*g.row(s)):
            if t in pos:
                Q[k, pos[t]] += w * p
            elif t != x and g.can_reach(t, (y,)) is not False:
                rhs[k] += w * p * boundary
    _spectral_check(Q, "factor_last_visit")
    K = np.linalg.solve(np.eye(n) - Q, rhs)
    if (K < -1e-12).any():
        raise NumericError("factor_last_visit: negative solution")
    total = 0.0
    for t, p in zip(*g.row(x)):
        if t in pos:
            total += w * p * K[pos[t]]
        elif t != x and g.can_reach(t, (y,)) is not False:
            total += w * p * boundary
    return total


def _sandwich(fn, g, x, y, w, cfg):
    if g.is_finite:
        return fn(g, x, y, w, None, 0.0)
    gap = None
    for r in cfg.radii:
        lo = fn(g, x, y, w, r, 0.0)
        hi = fn(g, x, y, w, r, 1.0)
        gap = hi - lo
        if gap < cfg.tolerance:
            return 0.5 * (lo + hi)
    raise NumericError(f"truncation budget exhausted (gap {gap:g})")


def factor_first_visit(g: FactorGraph, x: int, y: int, w: float, cfg: FixedPointConfig = DEFAULT_CONFIG) -> float:
    """First-visit generating function ``F_i(x, y | w)`` of a factor chain."""
    if x == y:
        return 1.0
    if g.can_reach(x, (y,)) is False:
        return 0.0
    return float(_sandwich(_first_visit_system, g, x, y, w, cfg))


def factor_last_visit(g: FactorGraph, x: int, y: int, w: float, cfg: FixedPointConfig = DEFAULT_CONFIG) -> float:
    """Last-visit generating function ``L_i(x, y | w)``: paths from ``x`` to ``y`` never returning to ``x``."""
    if x == y:
        return 1.0
    if g.can_reach(x, (y,)) is False:
        return 0.0
    return float(_sandwich(_last_visit_system, g, x, y, w, cfg))


# ---------------------------------------------------------------------------
# radius and the transience gate


@dataclass(frozen=True)
class RadiusBracket:
    lo: float
    hi: float

    @property
    def estimate(self) -> float:
        return self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    @property
    def transient(self) -> bool:
        return self.lo >= 1.0 + TRANSIENCE_MARGIN

    def as_list(self) -> list:
        return [self.lo, None if math.isinf(self.hi) else self.hi]


def _converges(fp: FreeProduct, z: float, cfg: FixedPointConfig) -> bool:
    try:
        rw = return_weights(fp, z, cfg)
    except NumericError:
        return False
    return rw.U < 1.0


def radius_estimate(
    fp: FreeProduct, cfg: FixedPointConfig = DEFAULT_CONFIG, z_max: float = 4.0, width: float = 1e-4
) -> RadiusBracket:
    """Bracket ``[lo, hi]`` around the radius of convergence of ``G(o,o|z)``.

    ``lo`` is the largest probed ``z`` at which the return-weight iteration converges
    with ``U < 1``; ``hi = inf`` when every probe up to ``z_max`` converged.
    """
    key = (fp.fingerprint, "radius", cfg, z_max, width)
    hit = _MEMO.get(key)
    if hit is not None:
        return hit
    lo, hi = 0.0, None
    z = 1.0
    while z <= z_max:
        if _converges(fp, z, cfg):
            lo = z
            if z == z_max:
                break
            z = min(2 * z, z_max)
        else:
            hi = z
            break
    if hi is None:
        out = RadiusBracket(lo, math.inf)
    else:
        while hi - lo > width:
            mid = 0.5 * (lo + hi)
            if _converges(fp, mid, cfg):
                lo = mid
            else:
                hi = mid
        out = RadiusBracket(lo, hi)
    with _LOCK:
        _MEMO.setdefault(key, out)
    return _MEMO[key]


def transience_check(fp: FreeProduct, cfg: FixedPointConfig = DEFAULT_CONFIG) -> RadiusBracket:
    """Raise :class:`TransienceError` unless the radius estimate is at least ``1 + 1e-3``."""
    bracket = radius_estimate(fp, cfg)
    if not bracket.transient:
        raise TransienceError(
            "genfun: basic assumption rho < 1 violated: the Green function radius is "
            f"not above 1 (bracket [{bracket.lo:.6f}, {bracket.hi:.6f}])"
        )
    return bracket


def l_product_check(fp: FreeProduct, rho0: float, cfg: FixedPointConfig = DEFAULT_CONFIG, budget: int = 64) -> dict:
    """Evaluate ``L(o, x | rho0) = L_i(o_i, x | xi_i(rho0))`` over letters.

    Letters of implicit factors are enumerated up to ``budget`` factor steps.
    """
    if not rho0 > 1.0:
        raise ModelError("rho0 must exceed 1")
    try:
        rw = return_weights(fp, rho0, cfg)
    except NumericError as exc:
        raise ModelError(f"rho0={rho0} outside the convergent range: {exc}") from None
    if rw.U >= 1:
        raise ModelError(f"rho0={rho0} outside the convergent range (U >= 1)")
    values = {}
    maxima = []
    for i in (1, 2):
        g = fp.factor(i)
        states = list(range(1, g.n_states)) if g.is_finite else [s for s in g.ball(budget) if s]
        vals = {s: factor_last_visit(g, 0, s, rw.xi(i), cfg) for s in states}
        values[i] = vals
        maxima.append(max(vals.values()) if vals else 0.0)
    return {
        "rho0": rho0,
        "xi": [rw.xi1, rw.xi2],
        "max_product": maxima[0] * maxima[1],
        "sup_L": max(maxima),
        "values": values,
    }
