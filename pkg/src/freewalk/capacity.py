"""Exact hitting and escape probabilities of finite word sets.

The walk is confined to a finite stage: a prefix-closed set ``T`` holding the targets,
plus boundary words ``b = s.g`` (``s`` in ``T``, ``g`` a letter) outside ``T``.  Inside
the cone ``C(b)`` nothing is ever hit, and the walk leaves ``C(b)`` through a move of the
last letter.  Starting at ``b`` with ``g`` in factor ``i``, it exits at ``s.g'`` with
probability ``xi_i(1) p_i(g, g')`` and never exits with probability ``1 - xi_i(1)``.
Boundary words whose factor chain cannot reach any word of ``T`` again are absorbed as
"escaped" outright.

Two right-hand sides share one factorization:

* ``e(y)``: never enter the targets and never take a blocked transition,
* ``h(y)``: enter the targets before taking a blocked transition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .core import FreeProduct, Letter, Word, WordTrie
from .errors import ModelError, NumericError
from .genfun import return_weights, transience_check

#: solver residual tolerance
RESIDUAL_TOL = 1e-10
#: hull sizes up to this many unknowns use a dense LU, larger ones a sparse LU
DENSE_LIMIT = 1000
#: boundary hops kept when a factor cannot decide reachability (error <= xi^cap)
HOP_CAP = 400

_T, _BOUNDARY, _FREE = 0, 1, 2


@dataclass(frozen=True)
class ConeConstraint:
    """Restriction on the paths counted by a hitting or escape probability.

    ``variant`` is one of ``"none"``, ``"stay_in"`` (never leave ``C(anchor)``),
    ``"avoid_cone_after_start"`` (never be in ``C(anchor)`` at times ``n >= 1``) or
    ``"avoid_initial_factor"`` (the first step from ``o`` never enters a one-letter
    word of factor ``factor``).  ``anchor`` is a :class:`Word` or, for trie-level
    calls, a trie node id.
    """

    variant: str = "none"
    anchor: object = None
    factor: int = 0

    def __post_init__(self):
        if self.variant not in ("none", "stay_in", "avoid_cone_after_start", "avoid_initial_factor"):
            raise ModelError(f"unknown constraint variant {self.variant!r}")
        if self.variant in ("stay_in", "avoid_cone_after_start") and self.anchor is None:
            raise ModelError(f"{self.variant} needs an anchor word")
        if self.variant == "avoid_initial_factor" and self.factor not in (1, 2):
            raise ModelError("avoid_initial_factor needs factor 1 or 2")


UNCONSTRAINED = ConeConstraint()


def stay_in(w) -> ConeConstraint:
    return ConeConstraint("stay_in", w)


def avoid_cone_after_start(w) -> ConeConstraint:
    return ConeConstraint("avoid_cone_after_start", w)


def avoid_initial_factor(i: int) -> ConeConstraint:
    return ConeConstraint("avoid_initial_factor", factor=i)


class Hull:
    """Finite stage of a hitting problem.

    Nodes ``0 .. n_T-1`` form ``T`` (node 0 is the root); the rest are boundary
    words.  ``kind`` is 0 for ``T``, 1 for a boundary word that can re-enter ``T``
    and 2 for a boundary word that provably never does.
    """

    def __init__(self, fp: FreeProduct, trie: WordTrie, t_nodes: Sequence[int]):
        self.fp = fp
        self.trie = trie
        rw = return_weights(fp, 1.0)
        xi = (None, rw.xi1, rw.xi2)
        alpha = (None, fp.alpha, 1.0 - fp.alpha)
        factors = (None, fp.factor1, fp.factor2)

        # T in trie order guarantees parents precede children
        self.trie_ids = list(t_nodes)
        of_trie = {n: k for k, n in enumerate(self.trie_ids)}
        self.of_trie = of_trie
        n_t = len(self.trie_ids)
        self.n_t = n_t
        parent = [of_trie.get(trie.parent[n], -1) for n in self.trie_ids]
        fac = [trie.factor[n] for n in self.trie_ids]
        state = [trie.state[n] for n in self.trie_ids]
        kind = [_T] * n_t
        hops = [0] * n_t
        tchildren: dict = {}
        for k in range(1, n_t):
            tchildren.setdefault((parent[k], fac[k]), set()).add(state[k])
        boundary_of: dict = {}
        self.approximate = False

        def node_for(p_idx: int, f: int, s: int, hop: int) -> int:
            tn = self.trie_ids[p_idx]
            c = trie.children.get((tn, f, s), -1)
            if c >= 0:
                k = of_trie.get(c)
                if k is not None:
                    return k
            key = (p_idx, f, s)
            k = boundary_of.get(key)
            if k is not None:
                return k
            k = len(parent)
            boundary_of[key] = k
            parent.append(p_idx)
            fac.append(f)
            state.append(s)
            hops.append(hop)
            targets = tchildren.get((p_idx, f), set()) | {0}
            reach = factors[f].can_reach(s, targets)
            if reach is False:
                kind.append(_FREE)
            elif reach is None and hop > HOP_CAP:
                kind.append(_FREE)
                self.approximate = True
            else:
                kind.append(_BOUNDARY)
                queue.append(k)
            return k

        queue: list = []
        # transitions: src, dst, prob, child_move flag
        src_l, dst_l, p_l, child_l = [], [], [], []
        deficit = {}
        for k in range(n_t):
            i = fac[k]
            if i:
                a = alpha[i]
                cols, probs = factors[i].row(state[k])
                for v, p in zip(cols, probs):
                    if p <= 0:
                        continue
                    d = parent[k] if v == 0 else node_for(parent[k], i, v, 1)
                    src_l.append(k)
                    dst_l.append(d)
                    p_l.append(a * p)
                    child_l.append(False)
            for j in (1, 2):
                if j == i:
                    continue
                cols, probs = factors[j].row(0)
                for s, p in zip(cols, probs):
                    if p <= 0:
                        continue
                    src_l.append(k)
                    dst_l.append(node_for(k, j, s, 1))
                    p_l.append(alpha[j] * p)
                    child_l.append(True)
        head = 0
        while head < len(queue):
            b = queue[head]
            head += 1
            i = fac[b]
            x = xi[i]
            cols, probs = factors[i].row(state[b])
            for v, p in zip(cols, probs):
                if p <= 0:
                    continue
                d = parent[b] if v == 0 else node_for(parent[b], i, v, hops[b] + 1)
                src_l.append(b)
                dst_l.append(d)
                p_l.append(x * p)
                child_l.append(False)
            if x < 1.0:
                deficit[b] = 1.0 - x

        self.parent = np.array(parent, dtype=np.int64)
        self.factor = np.array(fac, dtype=np.int64)
        self.state = np.array(state, dtype=np.int64)
        self.kind = np.array(kind, dtype=np.int8)
        self.src = np.array(src_l, dtype=np.int64)
        self.dst = np.array(dst_l, dtype=np.int64)
        self.prob = np.array(p_l, dtype=float)
        self.child_move = np.array(child_l, dtype=bool)
        self.deficit = deficit
        # start offsets of each T node's outgoing transitions (T nodes come first, in order)
        self.t_offsets = np.searchsorted(self.src, np.arange(n_t + 1))

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def boundary_size(self) -> int:
        return len(self) - self.n_t

    def word(self, k: int) -> Word:
        letters = []
        while k > 0:
            letters.append(Letter(int(self.factor[k]), int(self.state[k])))
            k = int(self.parent[k])
        return Word._raw(tuple(reversed(letters)))

    @property
    def T(self) -> list:
        return [self.word(k) for k in range(self.n_t)]

    @property
    def boundary(self) -> list:
        return [self.word(k) for k in range(self.n_t, len(self))]

    def node(self, w: Sequence) -> int:
        tn = self.trie.find(w)
        return self.of_trie.get(tn, -1) if tn >= 0 else -1


def _prefix_closure(trie: WordTrie, nodes: Iterable[int]) -> list:
    keep = {0}
    for n in nodes:
        while n not in keep:
            keep.add(n)
            n = trie.parent[n]
    return sorted(keep)


def _blocked_mask(hull: Hull, constraint: ConeConstraint, anchor: int) -> np.ndarray:
    src, dst = hull.src, hull.dst
    v = constraint.variant
    if v == "none":
        return np.zeros(len(src), dtype=bool)
    if v == "stay_in":
        return (src == anchor) & ~hull.child_move
    if v == "avoid_cone_after_start":
        return (dst == anchor) | ((src == anchor) & hull.child_move)
    # avoid_initial_factor: from the root into a one-letter word of that factor
    return (src == 0) & (hull.factor[dst] == constraint.factor)


class EscapeSolution:
    """Solved hitting/escape values on a hull.

    ``e[k]``: probability of never entering the targets and never taking a blocked
    transition from node ``k``; ``h[k]``: probability of entering the targets before
    any blocked transition.  Targets have ``e = 0, h = 1``.
    """

    def __init__(self, hull: Hull, target_mask: np.ndarray, blocked: np.ndarray, e, h, residual: float):
        self.hull = hull
        self.target_mask = target_mask
        self.blocked = blocked
        self.e = e
        self.h = h
        self.residual = residual

    @property
    def hull_size(self) -> int:
        return len(self.hull)

    def _step_sum(self, k: int, values: np.ndarray, moves: str = "all") -> float:
        lo, hi = self.hull.t_offsets[k], self.hull.t_offsets[k + 1]
        sel = ~self.blocked[lo:hi]
        if moves == "child":
            sel &= self.hull.child_move[lo:hi]
        elif moves == "nonchild":
            sel &= ~self.hull.child_move[lo:hi]
        return float(np.dot(self.hull.prob[lo:hi][sel], values[self.hull.dst[lo:hi][sel]]))

    def escape_from(self, k: int, moves: str = "all") -> float:
        """``P_k[S_A = infinity]`` (first-return version), restricted to first moves of the given kind."""
        return self._step_sum(k, self.e, moves)

    def hitting_from(self, k: int) -> float:
        if self.target_mask[k]:
            return 1.0
        return float(self.h[k])

    def capacity(self) -> float:
        idx = np.flatnonzero(self.target_mask[: self.hull.n_t])
        return float(sum(self.escape_from(int(k)) for k in idx))

    def escapes(self) -> np.ndarray:
        """Escape probability for every target node, vectorized."""
        hull = self.hull
        nt = hull.n_t
        sel = (hull.src < nt) & ~self.blocked
        contrib = np.zeros(nt)
        np.add.at(contrib, hull.src[sel], hull.prob[sel] * self.e[hull.dst[sel]])
        return contrib


def solve_hull(
    hull: Hull, target_nodes: Iterable[int], constraint: ConeConstraint = UNCONSTRAINED, anchor: int = -1
) -> EscapeSolution:
    n = len(hull)
    target = np.zeros(n, dtype=bool)
    target[list(target_nodes)] = True
    blocked = _blocked_mask(hull, constraint, anchor)
    kind = hull.kind
    unknown = ~target & (kind != _FREE)
    idx = np.full(n, -1, dtype=np.int64)
    unk = np.flatnonzero(unknown)
    idx[unk] = np.arange(len(unk))
    m = len(unk)

    src, dst, prob = hull.src, hull.dst, hull.prob
    live = unknown[src] & ~blocked
    r_e = np.zeros(m)
    r_h = np.zeros(m)
    to_free = live & (kind[dst] == _FREE)
    np.add.at(r_e, idx[src[to_free]], prob[to_free])
    for b, d in hull.deficit.items():
        if unknown[b]:
            r_e[idx[b]] += d
    to_target = live & target[dst]
    np.add.at(r_h, idx[src[to_target]], prob[to_target])
    inner = live & unknown[dst]
    Q = scipy.sparse.csr_matrix((prob[inner], (idx[src[inner]], idx[dst[inner]])), shape=(m, m))
    M = (scipy.sparse.identity(m, format="csr") - Q).tocsc()
    rhs = np.column_stack([r_e, r_h])
    if m == 0:
        sol = np.zeros((0, 2))
    elif m <= DENSE_LIMIT:
        try:
            sol = scipy.linalg.solve(M.toarray(), rhs)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"capacity: dense solve failed: {exc}") from None
    else:
        try:
            lu = scipy.sparse.linalg.splu(M)
        except RuntimeError as exc:
            raise NumericError(f"capacity: sparse factorization failed: {exc}") from None
        sol = lu.solve(rhs)
    residual = float(np.max(np.abs(M @ sol - rhs))) if m else 0.0
    if not residual < RESIDUAL_TOL or not np.isfinite(sol).all():
        raise NumericError(f"capacity: linear solve residual {residual:.3g} above {RESIDUAL_TOL:g}")
    lo_bad = sol.min() if m else 0.0
    hi_bad = sol.max() if m else 0.0
    if lo_bad < -1e-9 or hi_bad > 1 + 1e-9:
        raise NumericError("capacity: solution left [0, 1]")
    e = np.zeros(n)
    h = np.zeros(n)
    e[kind == _FREE] = 1.0
    h[target] = 1.0
    e[unk] = np.clip(sol[:, 0], 0.0, 1.0)
    h[unk] = np.clip(sol[:, 1], 0.0, 1.0)
    return EscapeSolution(hull, target, blocked, e, h, residual)


# ---------------------------------------------------------------------------
# trie-level entry points (used by simulation-based estimators)


def hull_on_trie(fp: FreeProduct, trie: WordTrie, nodes: Iterable[int], extra: Iterable[int] = ()) -> Hull:
    transience_check(fp)
    return Hull(fp, trie, _prefix_closure(trie, list(nodes) + list(extra)))


def solve_on_trie(
    fp: FreeProduct,
    trie: WordTrie,
    targets: Iterable[int],
    extra: Iterable[int] = (),
    constraint: ConeConstraint = UNCONSTRAINED,
) -> EscapeSolution:
    targets = list(targets)
    extra = list(extra)
    anchor_trie = constraint.anchor if constraint.variant in ("stay_in", "avoid_cone_after_start") else None
    if anchor_trie is not None:
        extra.append(anchor_trie)
    hull = hull_on_trie(fp, trie, targets, extra)
    anchor = hull.of_trie[anchor_trie] if anchor_trie is not None else -1
    return solve_hull(hull, [hull.of_trie[t] for t in targets], constraint, anchor)


def capacity_on_trie(fp: FreeProduct, trie: WordTrie, nodes: Iterable[int]) -> float:
    nodes = list(nodes)
    if not nodes:
        return 0.0
    sol = solve_on_trie(fp, trie, nodes)
    return float(sol.escapes()[[sol.hull.of_trie[t] for t in nodes]].sum())


# ---------------------------------------------------------------------------
# word-level API


def _as_words(A) -> list:
    out = []
    seen = set()
    for w in A:
        w = w if isinstance(w, Word) else Word(w)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _resolve(fp, A, extra, constraint):
    A = _as_words(A)
    extra = _as_words(extra)
    trie = WordTrie()
    a_nodes = [trie.insert(w) for w in A]
    e_nodes = [trie.insert(w) for w in extra]
    c = constraint
    if c.variant in ("stay_in", "avoid_cone_after_start"):
        w = c.anchor if isinstance(c.anchor, Word) else Word(c.anchor)
        c = ConeConstraint(c.variant, trie.insert(w), c.factor)
    return trie, a_nodes, e_nodes, c


def build_hull(fp: FreeProduct, A, extra=()) -> Hull:
    """Prefix closure of ``A`` and ``extra`` plus its boundary words."""
    trie, a_nodes, e_nodes, _ = _resolve(fp, A, extra, UNCONSTRAINED)
    return hull_on_trie(fp, trie, a_nodes, e_nodes)


def solve_escape(fp: FreeProduct, A, extra=(), constraint: ConeConstraint = UNCONSTRAINED):
    """Solve once; returns ``(solution, node lookup)`` for repeated queries."""
    trie, a_nodes, e_nodes, c = _resolve(fp, A, extra, constraint)
    sol = solve_on_trie(fp, trie, a_nodes, e_nodes, c)
    return sol, (lambda w: sol.hull.of_trie[trie.find(w)])


def hitting_probability(fp: FreeProduct, A, start, constraint: ConeConstraint = UNCONSTRAINED) -> float:
    """``P_start[enter A at some time n >= 0, no blocked transition before]``."""
    A = _as_words(A)
    start = start if isinstance(start, Word) else Word(start)
    if start in set(A):
        return 1.0
    if not A:
        return 0.0
    sol, node = solve_escape(fp, A, [start], constraint)
    return sol.hitting_from(node(start))


def escape_probability(fp: FreeProduct, A, x, constraint: ConeConstraint = UNCONSTRAINED) -> float:
    """``P_x[S_A = infinity]`` with ``S_A`` the first return time (``S_A >= 1``)."""
    A = _as_words(A)
    x = x if isinstance(x, Word) else Word(x)
    if x not in set(A):
        raise ModelError("escape_probability needs x in A")
    sol, node = solve_escape(fp, A, (), constraint)
    return sol.escape_from(node(x))


def capacity(fp: FreeProduct, A) -> float:
    """``Cap(A) = sum_{x in A} P_x[S_A = infinity]``; duplicates are ignored."""
    return capacity_report(fp, A)["capacity"]


def capacity_report(fp: FreeProduct, A) -> dict:
    A = _as_words(A)
    if not A:
        return {"capacity": 0.0, "per_vertex": {}, "hull_size": 0, "residual": 0.0}
    sol, node = solve_escape(fp, A)
    esc = sol.escapes()
    per = {w: float(esc[node(w)]) for w in A}
    return {
        "capacity": float(sum(per.values())),
        "per_vertex": per,
        "hull_size": sol.hull_size,
        "residual": sol.residual,
    }


def _shifted(fp: FreeProduct, R, g) -> tuple:
    g = Letter(*g)
    if g.factor != 1:
        raise ModelError("the regeneration letter must belong to factor 1")
    R = _as_words(R)
    if Word() not in set(R):
        raise ModelError("R must contain the root o")
    gw = Word([g])
    shifted = []
    for r in R:
        if r and r[0].factor == 1:
            raise ModelError("words of R must start with a factor-2 letter")
        shifted.append(gw.concat(r))
    return gw, R, shifted


def constrained_escape_u0(fp: FreeProduct, R, g) -> float:
    """``P_g[S_{gR} = infinity, X_n in C(g) for all n >= 1]``."""
    gw, R, shifted = _shifted(fp, R, g)
    trie, a_nodes, _, c = _resolve(fp, shifted, (), stay_in(gw))
    sol = solve_on_trie(fp, trie, a_nodes, (), c)
    return sol.escape_from(sol.hull.of_trie[trie.find(gw)])


def constrained_escape_u1(fp: FreeProduct, R, x1, g) -> float:
    """``P_{g x1}[S_{gR} = infinity, X_n not in C(g x1) for all n >= 1]``."""
    gw, R, shifted = _shifted(fp, R, g)
    x1 = x1 if isinstance(x1, Word) else Word(x1)
    if x1 not in set(R):
        raise ModelError("x1 must belong to R")
    anchor = gw.concat(x1)
    trie, a_nodes, _, c = _resolve(fp, shifted, (), avoid_cone_after_start(anchor))
    sol = solve_on_trie(fp, trie, a_nodes, (), c)
    return sol.escape_from(sol.hull.of_trie[trie.find(anchor)])


def block_capacity_parts(fp: FreeProduct, R, x1, g) -> dict:
    """Interior sum, ``U0bar`` and ``U1bar`` of a block, from one unconstrained solve.

    With ``g`` and ``g x1`` both targets, staying in ``C(g)`` without hitting ``gR``
    is the same as a first move into ``C(g)`` followed by escape, and avoiding
    ``C(g x1)`` after the start is a first move out of the cone followed by escape.
    """
    gw, R, shifted = _shifted(fp, R, g)
    x1 = x1 if isinstance(x1, Word) else Word(x1)
    if x1 not in set(R):
        raise ModelError("x1 must belong to R")
    trie = WordTrie()
    nodes = [trie.insert(w) for w in shifted]
    sol = solve_on_trie(fp, trie, nodes)
    esc = sol.escapes()
    k_g = sol.hull.of_trie[trie.find(gw)]
    k_x = sol.hull.of_trie[trie.find(gw.concat(x1))]
    interior = float(sum(esc[sol.hull.of_trie[t]] for t in nodes) - esc[k_g] - esc[k_x]) if k_g != k_x else None
    u0 = sol.escape_from(k_g, "child")
    u1 = sol.escape_from(k_x, "nonchild")
    if interior is None:
        raise ModelError("x1 must differ from the root")
    return {"interior": interior, "u0": u0, "u1": u1, "residual": sol.residual}


def block_capacity(fp: FreeProduct, R, x1, g) -> float:
    """Exact capacity contribution of a regeneration block with normalized range ``R`` and increment ``x1``."""
    parts = block_capacity_parts(fp, R, x1, g)
    return parts["interior"] + parts["u0"] + parts["u1"]
