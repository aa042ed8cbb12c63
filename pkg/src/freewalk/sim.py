"""Trajectory simulation, exit times, regeneration blocks and range curves.

Visited words live in a :class:`~freewalk.core.WordTrie`; the range ``R_n`` is always
prefix-closed, so a trie node is created exactly at the first visit of its word.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .core import FreeProduct, Letter, Word, WordTrie, first_factor1_letter
from .errors import ModelError

#: default guard window: exit times within this many steps of the horizon are not trusted
DEFAULT_GUARD = 1000
_CHUNK = 1 << 16


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Counter-based stream for ``(master_seed, replica)``; independent of scheduling."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Trajectory:
    fp: FreeProduct
    seed: tuple
    trie: WordTrie
    first_visit: list
    path: np.ndarray

    @property
    def n(self) -> int:
        return len(self.path) - 1

    def word(self, t: int) -> Word:
        return self.trie.word(int(self.path[t]))

    def words(self) -> list:
        return [self.trie.word(int(x)) for x in self.path]

    def first_visit_time(self, w) -> int:
        node = self.trie.find(w)
        return self.first_visit[node] if node >= 0 else -1

    def range_nodes(self, t: int) -> np.ndarray:
        """Trie nodes of ``R_t`` (first visit at or before ``t``)."""
        fv = np.asarray(self.first_visit)
        return np.flatnonzero(fv <= t)


class _Rows:
    """Cumulative sampling rows of one factor, built lazily for implicit factors."""

    def __init__(self, g):
        self.g = g
        self.cache = {}

    def get(self, s):
        row = self.cache.get(s)
        if row is None:
            cols, probs = self.g.row(s)
            pairs = [(c, p) for c, p in zip(cols, probs) if p > 0]
            cols = tuple(c for c, _ in pairs)
            cum = tuple(np.cumsum([p for _, p in pairs]).tolist())
            row = (cols, cum, len(cols) == 1)
            self.cache[s] = row
        return row


def run_walk(fp: FreeProduct, n: int, seed: int = 0, replica: int = 0) -> Trajectory:
    """Simulate ``n`` steps from ``o``; reproducible from ``(seed, replica)``."""
    if n < 0:
        raise ModelError("number of steps must be nonnegative")
    rng = replica_rng(seed, replica)
    trie = WordTrie()
    par, fac, sta, dep = trie.parent, trie.factor, trie.state, trie.depth
    children = trie.children
    first = [0]
    rows = (None, _Rows(fp.factor1), _Rows(fp.factor2))
    root_rows = (None, rows[1].get(0), rows[2].get(0))
    a1 = fp.alpha
    a2 = 1.0 - a1
    weight = (None, a1, a2)
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = 0
    cur = 0
    k = 0
    while k < n:
        m = min(_CHUNK, n - k)
        us = rng.random(m).tolist()
        out = [0] * m
        for idx in range(m):
            u = us[idx]
            f = fac[cur]
            if f == 0:
                if u < a1:
                    j, uu = 1, u / a1
                else:
                    j, uu = 2, (u - a1) / a2
                cols, cum, single = root_rows[j]
                s = cols[0] if single else cols[min(bisect_right(cum, uu), len(cols) - 1)]
                base = cur
            else:
                ai = weight[f]
                if u < ai:
                    cols, cum, single = rows[f].get(sta[cur])
                    uu = u / ai
                    v = cols[0] if single else cols[min(bisect_right(cum, uu), len(cols) - 1)]
                    base = par[cur]
                    if v == 0:
                        cur = base
                        out[idx] = cur
                        continue
                    j, s = f, v
                else:
                    j = 3 - f
                    uu = (u - ai) / (1.0 - ai)
                    cols, cum, single = root_rows[j]
                    s = cols[0] if single else cols[min(bisect_right(cum, uu), len(cols) - 1)]
                    base = cur
            key = (base, j, s)
            nxt = children.get(key)
            if nxt is None:
                nxt = len(par)
                children[key] = nxt
                par.append(base)
                fac.append(j)
                sta.append(s)
                dep.append(dep[base] + 1)
                first.append(k + idx + 1)
            cur = nxt
            out[idx] = cur
        path[k + 1 : k + 1 + m] = out
        k += m
    return Trajectory(fp, (int(seed), int(replica)), trie, first, path)


def trajectory_from_words(fp: FreeProduct, words) -> Trajectory:
    """Build a trajectory from an explicit word sequence starting at ``o`` (used for hand traces)."""
    trie = WordTrie()
    first = [0]
    path = []
    for t, w in enumerate(words):
        w = w if isinstance(w, Word) else Word(w)
        if t == 0 and w:
            raise ModelError("trajectories start at o")
        before = len(trie)
        node = trie.insert(w)
        first.extend([t] * (len(trie) - before))
        path.append(node)
    return Trajectory(fp, (None, None), trie, first, np.array(path, dtype=np.int64))


# ---------------------------------------------------------------------------
# exit times


@dataclass
class ExitRecord:
    times: np.ndarray
    nodes: np.ndarray
    horizon: int
    guard: int
    n_confirmed: int
    readings_agree: bool | None = None

    def letter(self, trie: WordTrie, k: int) -> Letter:
        node = int(self.nodes[k])
        return Letter(trie.factor[node], trie.state[node])

    def k_of(self, t) -> np.ndarray | int:
        """``k(t) = max{k : e_k <= t}`` over confirmed exit times."""
        conf = self.times[: self.n_confirmed + 1]
        return np.searchsorted(conf, t, side="right") - 1


def _euler_intervals(trie: WordTrie):
    n = len(trie)
    parent = np.asarray(trie.parent)
    kids = [[] for _ in range(n)]
    for c in range(1, n):
        kids[parent[c]].append(c)
    tin = np.zeros(n, dtype=np.int64)
    tout = np.zeros(n, dtype=np.int64)
    clock = 0
    stack = [(0, False)]
    while stack:
        node, done = stack.pop()
        if done:
            tout[node] = clock
            continue
        tin[node] = clock
        clock += 1
        stack.append((node, True))
        stack.extend((c, False) for c in reversed(kids[node]))
    return tin, tout


def exit_times(tr: Trajectory, guard: int = DEFAULT_GUARD, check_readings: bool = False) -> ExitRecord:
    """Exit times ``e_k`` of the depth-k ancestors of the final position.

    ``e_k`` is the last entry into the subtree of that ancestor, i.e. the last time the
    walk stood on it coming from its parent or a sibling.  Only ``e_k <= n - guard``
    are confirmed.
    """
    X = tr.path
    N = len(X) - 1
    trie = tr.trie
    parent = np.asarray(trie.parent, dtype=np.int64)
    chain = [int(X[-1])]
    while chain[-1] != 0:
        chain.append(int(parent[chain[-1]]))
    chain = np.array(chain[::-1], dtype=np.int64)
    L = len(chain) - 1
    onpath = np.full(len(trie), -1, dtype=np.int64)
    onpath[chain] = np.arange(L + 1)
    times = np.full(L + 1, -1, dtype=np.int64)
    times[0] = 0
    if N > 0:
        d = onpath[X[1:]]
        entry = (d > 0) & (parent[X[:-1]] != X[1:])
        idx = np.flatnonzero(entry) + 1
        np.maximum.at(times, onpath[X[idx]], idx)
    n_conf = int(np.searchsorted(times, N - guard, side="right") - 1) if N - guard >= 0 else 0
    rec = ExitRecord(times, chain, N, guard, max(n_conf, 0))
    if check_readings:
        rec.readings_agree = _second_reading_agrees(tr, rec)
    return rec


def _second_reading_agrees(tr: Trajectory, rec: ExitRecord) -> bool:
    """Check ``e_k = inf{m : |X_m| = k, X_n in C(X_m) for all n >= m}`` against ``rec``."""
    tin, tout = _euler_intervals(tr.trie)
    X = tr.path
    tx = tin[X]
    depth = np.asarray(tr.trie.depth)[X]
    for k in range(1, len(rec.times)):
        p = rec.nodes[k]
        outside = (tx < tin[p]) | (tx >= tout[p])
        last_out = np.flatnonzero(outside)
        m = int(last_out[-1]) + 1 if len(last_out) else 0
        if depth[m] != k or X[m] != p or m != rec.times[k]:
            return False
    return True


# ---------------------------------------------------------------------------
# regeneration blocks


@dataclass
class RegenBlock:
    index: int
    start: int
    end: int
    R_norm: tuple
    increment: Word
    capacity: float | None = None

    @property
    def duration(self) -> int:
        return self.end - self.start

    def key(self):
        return (frozenset(self.R_norm), self.increment)


@dataclass
class RegenResult:
    letter: Letter
    tau: list
    times: list
    blocks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return len(self.times) >= 2


def regeneration_blocks(tr: Trajectory, g=None, exits: ExitRecord | None = None) -> RegenResult:
    """Regeneration indices ``tau`` (confirmed exits whose last letter is ``g`` and
    whose exit vertex is visited for the first time) and the blocks between them."""
    fp = tr.fp
    g = first_factor1_letter(fp) if g is None else Letter(*g)
    if g.factor != 1:
        raise ModelError("the regeneration letter must belong to factor 1")
    exits = exit_times(tr) if exits is None else exits
    trie = tr.trie
    fac, sta, first = trie.factor, trie.state, tr.first_visit
    tau = []
    for k in range(1, exits.n_confirmed + 1):
        node = int(exits.nodes[k])
        if fac[node] == 1 and sta[node] == g.state and exits.times[k] == first[node]:
            tau.append(k)
    times = [int(exits.times[k]) for k in tau]
    res = RegenResult(g, tau, times)
    X = tr.path
    for i in range(1, len(tau)):
        t0, t1 = times[i - 1], times[i]
        d0 = trie.depth[int(exits.nodes[tau[i - 1]])]
        seen = dict.fromkeys(X[t0 : t1 + 1].tolist())
        R = tuple(trie.suffix(node, d0) for node in seen)
        inc = trie.suffix(int(exits.nodes[tau[i]]), d0)
        res.blocks.append(RegenBlock(i, t0, t1, R, inc))
    return res


def range_curve(tr: Trajectory) -> np.ndarray:
    """``|R_t|`` for ``t = 0..n``."""
    counts = np.bincount(np.asarray(tr.first_visit), minlength=tr.n + 1)
    return np.cumsum(counts)
