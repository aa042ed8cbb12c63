"""Independent reference computations used by the tests.

Nothing here calls the library's solvers: Monte Carlo works on raw letter stacks and
the truncation sandwich enumerates words by brute force.
"""

from __future__ import annotations

import itertools

import numpy as np

from freewalk.core import FreeProduct, Word, step_distribution


class _Tables:
    """Letter codes and sampling tables for a model with explicit factors."""

    def __init__(self, fp: FreeProduct):
        self.fp = fp
        self.letters = [None]
        for i in (1, 2):
            g = fp.factor(i)
            for s in range(1, g.n_states):
                self.letters.append((i, s))
        self.code = {l: k for k, l in enumerate(self.letters)}
        n = len(self.letters)
        self.fac = np.array([0] + [l[0] for l in self.letters[1:]])
        width = max(max(len(fp.factor(i).row(s)[0]) for s in range(fp.factor(i).n_states)) for i in (1, 2))
        # own-factor move of a letter: target code (0 = pop)
        self.own_t = np.zeros((n, width), dtype=np.int64)
        self.own_c = np.ones((n, width))
        for k in range(1, n):
            i, s = self.letters[k]
            cols, probs = fp.factor(i).row(s)
            cum = np.cumsum(probs)
            for m, (c, q) in enumerate(zip(cols, cum)):
                self.own_t[k, m] = 0 if c == 0 else self.code[(i, c)]
                self.own_c[k, m] = q
            self.own_c[k, len(cols) - 1 :] = 1.0
            self.own_t[k, len(cols) :] = self.own_t[k, len(cols) - 1]
        # appending a fresh letter of factor j
        self.app_t = np.zeros((3, width), dtype=np.int64)
        self.app_c = np.ones((3, width))
        for j in (1, 2):
            cols, probs = fp.factor(j).row(0)
            cum = np.cumsum(probs)
            for m, (c, q) in enumerate(zip(cols, cum)):
                self.app_t[j, m] = self.code[(j, c)]
                self.app_c[j, m] = q
            self.app_c[j, len(cols) - 1 :] = 1.0
            self.app_t[j, len(cols) :] = self.app_t[j, len(cols) - 1]
        self.weight = np.array([0.0, fp.alpha, 1.0 - fp.alpha])

    def encode(self, w) -> np.ndarray:
        return np.array([self.code[(l[0], l[1])] for l in w], dtype=np.int64)


def _pick(cum: np.ndarray, targets: np.ndarray, u: np.ndarray) -> np.ndarray:
    k = (u[:, None] >= cum).sum(axis=1)
    k = np.minimum(k, cum.shape[1] - 1)
    return targets[np.arange(len(u)), k]


def _step(tab: _Tables, stack, depth, rng):
    m = len(depth)
    top = np.where(depth > 0, stack[np.arange(m), np.maximum(depth - 1, 0)], 0)
    t = tab.fac[top]
    u1 = rng.random(m)
    u2 = rng.random(m)
    own = (t > 0) & (u1 < tab.weight[t])
    # appended factor: the other one, or chosen by alpha at the root
    app_f = np.where(t == 0, np.where(u1 < tab.fp.alpha, 1, 2), 3 - t)
    prev_depth = depth.copy()
    new_depth = depth.copy()
    if own.any():
        r = np.flatnonzero(own)
        nxt = _pick(tab.own_c[top[r]], tab.own_t[top[r]], u2[r])
        pop = nxt == 0
        new_depth[r[pop]] -= 1
        keep = r[~pop]
        stack[keep, depth[keep] - 1] = nxt[~pop]
    app = np.flatnonzero(~own)
    if len(app):
        f = app_f[app]
        nxt = _pick(tab.app_c[f], tab.app_t[f], u2[app])
        stack[app, depth[app]] = nxt
        new_depth[app] += 1
    return new_depth, prev_depth


def _matches(stack, depth, code: np.ndarray) -> np.ndarray:
    n = len(code)
    if n == 0:
        return depth == 0
    return (depth == n) & (stack[:, :n] == code).all(axis=1)


def _in_cone(stack, depth, code: np.ndarray) -> np.ndarray:
    n = len(code)
    if n == 0:
        return np.ones(len(depth), dtype=bool)
    return (depth >= n) & (stack[:, :n] == code).all(axis=1)


def mc_hit_escape(
    fp: FreeProduct,
    A,
    start,
    n_rep: int,
    seed: int,
    first_return: bool = False,
    constraint: tuple | None = None,
    depth_margin: int = 30,
    max_steps: int = 50_000,
):
    """Monte Carlo counts ``(hit, blocked, escaped)`` for walks from ``start``.

    ``hit``: entered ``A`` (at time >= 1 if ``first_return``) before any blocked move.
    ``escaped``: climbed ``depth_margin`` levels beyond every relevant word without
    hitting or being blocked.  ``constraint`` is ``("stay_in", w)``,
    ``("avoid_cone", w)`` or ``("avoid_initial_factor", i)``.
    """
    tab = _Tables(fp)
    rng = np.random.default_rng(seed)
    codes = [tab.encode(a) for a in A]
    anchor = tab.encode(constraint[1]) if constraint and constraint[0] in ("stay_in", "avoid_cone") else None
    lens = [len(c) for c in codes] + [len(start)] + ([len(anchor)] if anchor is not None else [])
    escape_depth = max(lens) + depth_margin
    width = escape_depth + 2
    stack = np.zeros((n_rep, width), dtype=np.int64)
    sc = tab.encode(start)
    stack[:, : len(sc)] = sc
    depth = np.full(n_rep, len(sc), dtype=np.int64)
    hit = blocked = escaped = 0
    if not first_return:
        at = np.zeros(n_rep, dtype=bool)
        for c in codes:
            at |= _matches(stack, depth, c)
        hit += int(at.sum())
        stack, depth = stack[~at], depth[~at]
    for _ in range(max_steps):
        if len(depth) == 0:
            break
        old_stack = stack.copy() if constraint else None
        depth, prev = _step(tab, stack, depth, rng)
        bad = np.zeros(len(depth), dtype=bool)
        if constraint:
            kind = constraint[0]
            if kind == "stay_in":
                bad = ~_in_cone(stack, depth, anchor)
            elif kind == "avoid_cone":
                bad = _in_cone(stack, depth, anchor)
            else:
                bad = (prev == 0) & (depth == 1) & (tab.fac[stack[:, 0]] == constraint[1])
        at = np.zeros(len(depth), dtype=bool)
        for c in codes:
            at |= _matches(stack, depth, c)
        at &= ~bad
        gone = depth > escape_depth
        hit += int(at.sum())
        blocked += int(bad.sum())
        escaped += int((gone & ~at & ~bad).sum())
        keep = ~(at | bad | gone)
        stack, depth = stack[keep], depth[keep]
    # survivors at the step cap are counted as escaped; tests keep max_steps large
    escaped += len(depth)
    return hit, blocked, escaped


def mc_root_visits(fp: FreeProduct, n_rep: int, seed: int, horizon: int = 10_000, depth_margin: int = 30):
    """Per-walk numbers of visits to ``o`` in times ``0..horizon`` (early exit once far away)."""
    tab = _Tables(fp)
    rng = np.random.default_rng(seed)
    stack = np.zeros((n_rep, depth_margin + 2), dtype=np.int64)
    depth = np.zeros(n_rep, dtype=np.int64)
    visits = np.ones(n_rep)
    alive = np.arange(n_rep)
    for _ in range(horizon):
        if len(alive) == 0:
            break
        depth, _ = _step(tab, stack, depth, rng)
        visits[alive[depth == 0]] += 1
        keep = depth <= depth_margin
        stack, depth, alive = stack[keep], depth[keep], alive[keep]
    return visits


def enumerate_words(fp: FreeProduct, max_len: int) -> list:
    """All words of length ``<= max_len`` (explicit factors only)."""
    letters = {i: [(i, s) for s in range(1, fp.factor(i).n_states)] for i in (1, 2)}
    out = [Word()]
    layer = [Word()]
    for _ in range(max_len):
        nxt = []
        for w in layer:
            for i in (1, 2):
                if w and w[-1][0] == i:
                    continue
                for l in letters[i]:
                    nxt.append(w.append(l))
        out.extend(nxt)
        layer = nxt
    return out


def sandwich_hitting(fp: FreeProduct, A, start, max_len: int) -> tuple[float, float]:
    """Bracket for ``P_start[hit A]`` from the walk truncated at word length ``max_len``.

    Leaving the truncated region counts as a miss (lower bound) or a hit (upper bound).
    """
    A = {Word(a) for a in A}
    words = enumerate_words(fp, max_len)
    index = {w: k for k, w in enumerate(words)}
    n = len(words)
    Q = np.zeros((n, n))
    out_mass = np.zeros(n)
    hit_mass = np.zeros(n)
    for w in words:
        k = index[w]
        if w in A:
            continue
        for y, p in step_distribution(fp, w):
            if y in A:
                hit_mass[k] += p
            elif y in index:
                Q[k, index[y]] += p
            else:
                out_mass[k] += p
    M = np.eye(n) - Q
    lo = np.linalg.solve(M, hit_mass)
    hi = np.linalg.solve(M, hit_mass + out_mass)
    s = Word(start)
    if s in A:
        return 1.0, 1.0
    return float(lo[index[s]]), float(hi[index[s]])


def path_sum_last_visit(P: np.ndarray, x: int, y: int, w: float, max_len: int) -> float:
    """``sum_n w^n P_x[X_n = y, X_k != x for 1 <= k <= n]`` over ``n <= max_len`` by dynamic programming."""
    n = P.shape[0]
    dist = np.zeros(n)
    dist[x] = 1.0
    total = 1.0 if x == y else 0.0
    for m in range(1, max_len + 1):
        dist = dist @ P
        dist[x] = 0.0
        total += w**m * dist[y]
    return total


def brute_exit_times(words: list) -> dict:
    """Exit times from the literal definition: smallest ``m`` after which the length-k prefix never changes."""
    N = len(words) - 1
    out = {}
    final = words[-1]
    for k in range(1, len(final) + 1):
        target = tuple(final[:k])
        m = N
        while m > 0 and len(words[m - 1]) >= k and tuple(words[m - 1][:k]) == target:
            m -= 1
        out[k] = m
    return out


def all_subsets(items, max_size):
    for r in range(max_size + 1):
        yield from itertools.combinations(items, r)
