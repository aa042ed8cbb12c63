"""Free products of two rooted graphs: words, cones, factor graphs and the step kernel.

A vertex of ``V = V1 * V2`` is a finite word of letters ``(factor, state)`` in which
consecutive letters come from different factors.  The empty word is the common root
``o``.  Factor states are interned to integers with the factor root always ``0``, so a
letter never carries state ``0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ModelError

#: tolerance used for every probability equality check in validation
PROB_TOL = 1e-12


class Letter(NamedTuple):
    factor: int
    state: int


class Word(tuple):
    """Alternating tuple of :class:`Letter`; the empty word is the root ``o``."""

    __slots__ = ()

    def __new__(cls, letters: Iterable = ()):
        out = []
        prev = 0
        for item in letters:
            factor, state = int(item[0]), int(item[1])
            if factor not in (1, 2):
                raise ModelError(f"letter factor must be 1 or 2, got {factor}")
            if state <= 0:
                raise ModelError("a letter cannot be the factor root")
            if factor == prev:
                raise ModelError("consecutive letters must come from different factors")
            out.append(Letter(factor, state))
            prev = factor
        return tuple.__new__(cls, out)

    @classmethod
    def _raw(cls, letters) -> "Word":
        return tuple.__new__(cls, letters)

    @property
    def length(self) -> int:
        return len(self)

    @property
    def type(self) -> int:
        """Factor of the last letter, 0 for the root."""
        return self[-1].factor if self else 0

    def append(self, letter) -> "Word":
        letter = Letter(int(letter[0]), int(letter[1]))
        if letter.factor not in (1, 2) or letter.state <= 0:
            raise ModelError(f"invalid letter {letter}")
        if self and self[-1].factor == letter.factor:
            raise ModelError("append would put two letters of the same factor side by side")
        return Word._raw(tuple(self) + (letter,))

    def concat(self, other: "Word") -> "Word":
        if self and other and self[-1].factor == other[0].factor:
            raise ModelError("concatenation breaks alternation")
        return Word._raw(tuple(self) + tuple(other))

    def parent(self) -> "Word":
        if not self:
            raise ModelError("the root has no parent")
        return Word._raw(self[:-1])

    def replace_last(self, state: int) -> "Word":
        """Swap the last letter's state; replacing by the factor root gives the parent."""
        if not self:
            raise ModelError("the root has no last letter")
        if state == 0:
            return self.parent()
        return Word._raw(self[:-1] + (Letter(self[-1].factor, int(state)),))

    def __repr__(self) -> str:
        if not self:
            return "Word(o)"
        return "Word(" + "/".join(f"{l.factor}:{l.state}" for l in self) + ")"


ROOT = Word()


def cone_contains(x: Sequence, y: Sequence) -> bool:
    """True iff ``y`` lies in the cone ``C(x)``, i.e. ``x`` is a prefix of ``y``."""
    return len(x) <= len(y) and tuple(y[: len(x)]) == tuple(x)


def common_prefix(x: Sequence, y: Sequence) -> Word:
    n = 0
    for a, b in zip(x, y):
        if a != b:
            break
        n += 1
    return Word._raw(tuple(x[:n]))


# ---------------------------------------------------------------------------
# factor graphs


class FactorGraph:
    """Rooted transition structure on one factor.  State ``0`` is the root."""

    root = 0
    kind = "abstract"
    is_finite = False

    def row(self, state: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
        raise NotImplementedError

    def state_name(self, state: int) -> str:
        raise NotImplementedError

    def state_id(self, name: str) -> int:
        raise NotImplementedError

    def ball(self, radius: int) -> list[int]:
        """All states within ``radius`` steps of the root, in BFS order (root first)."""
        seen = {0: None}
        frontier = [0]
        for _ in range(radius):
            nxt = []
            for s in frontier:
                for t, p in zip(*self.row(s)):
                    if p > 0 and t not in seen:
                        seen[t] = None
                        nxt.append(t)
            frontier = nxt
        return list(seen)

    def can_reach(self, src: int, targets) -> bool | None:
        """Whether the factor chain started at ``src`` can ever visit ``targets``.

        ``None`` means unknown; callers then fall back to depth-limited truncation.
        """
        return None

    def violations(self) -> list[str]:
        return []

    def spec(self) -> dict:
        raise NotImplementedError


class ExplicitFactor(FactorGraph):
    """Finite factor given by a dense transition matrix and state names."""

    kind = "explicit"
    is_finite = True

    def __init__(self, names: Sequence[str], matrix):
        self.names = tuple(str(n) for n in names)
        if len(set(self.names)) != len(self.names):
            raise ModelError("duplicate state names")
        self.matrix = np.array(matrix, dtype=float)
        n = len(self.names)
        if self.matrix.shape != (n, n):
            raise ModelError("transition matrix shape does not match the state list")
        self._index = {name: i for i, name in enumerate(self.names)}
        self._rows = []
        for i in range(n):
            cols = np.flatnonzero(self.matrix[i] != 0)
            self._rows.append((tuple(int(c) for c in cols), tuple(float(self.matrix[i, c]) for c in cols)))
        # reach[i, j]: j reachable from i in >= 0 steps
        adj = self.matrix > 0
        reach = np.eye(n, dtype=bool) | adj
        while True:
            nxt = reach | ((reach.astype(np.int64) @ adj.astype(np.int64)) > 0)
            if (nxt == reach).all():
                break
            reach = nxt
        self.reach = reach

    @classmethod
    def from_edges(cls, root: str, edges: Iterable) -> "ExplicitFactor":
        names = [str(root)]
        index = {str(root): 0}
        triples = []
        for edge in edges:
            if len(edge) != 3:
                raise ModelError(f"edge must be [from, to, probability], got {edge!r}")
            x, y, p = str(edge[0]), str(edge[1]), edge[2]
            if not isinstance(p, (int, float)) or isinstance(p, bool):
                raise ModelError(f"edge probability must be a number, got {p!r}")
            for name in (x, y):
                if name not in index:
                    index[name] = len(names)
                    names.append(name)
            triples.append((index[x], index[y], float(p)))
        mat = np.zeros((len(names), len(names)))
        for i, j, p in triples:
            mat[i, j] += p
        return cls(names, mat)

    @property
    def n_states(self) -> int:
        return len(self.names)

    def row(self, state):
        return self._rows[state]

    def state_name(self, state):
        return self.names[state]

    def state_id(self, name):
        try:
            return self._index[str(name)]
        except KeyError:
            raise ModelError(f"unknown state {name!r}") from None

    def ball(self, radius):
        return super().ball(radius)

    def can_reach(self, src, targets):
        return any(self.reach[src, t] for t in targets)

    def violations(self) -> list[str]:
        out = []
        mat = self.matrix
        if (mat < 0).any():
            out.append("negative transition probability")
        sums = mat.sum(axis=1)
        for i, s in enumerate(sums):
            if abs(s - 1.0) > PROB_TOL:
                out.append(f"row sum of state {self.names[i]!r} is {s:.15g}, rows must sum up to 1")
        for i in range(len(self.names)):
            if mat[i, i] != 0:
                out.append(f"self-loop at state {self.names[i]!r}")
        for i in range(1, len(self.names)):
            if not self.reach[0, i]:
                out.append(f"state {self.names[i]!r} unreachable from the root")
        if len(self.names) < 2:
            out.append("factor needs at least one non-root state")
        return out

    def spec(self) -> dict:
        edges = []
        for i, (cols, probs) in enumerate(self._rows):
            for j, p in zip(cols, probs):
                edges.append([self.names[i], self.names[j], p])
        return {"kind": "explicit", "root": self.names[0], "edges": edges}


class RayFactor(FactorGraph):
    """Infinite deterministic ray ``o -> s1 -> s2 -> ...`` (implicit rows)."""

    kind = "implicit"
    is_finite = False

    def __init__(self, prefix: str = "g", root_name: str = "o"):
        self.prefix = prefix
        self.root_name = root_name

    def row(self, state):
        return (state + 1,), (1.0,)

    def state_name(self, state):
        return self.root_name if state == 0 else f"{self.prefix}{state}"

    def state_id(self, name):
        name = str(name)
        if name == self.root_name:
            return 0
        if name.startswith(self.prefix) and name[len(self.prefix):].isdigit():
            value = int(name[len(self.prefix):])
            if value > 0:
                return value
        raise ModelError(f"unknown ray state {name!r}")

    def ball(self, radius):
        return list(range(radius + 1))

    def can_reach(self, src, targets):
        return any(t >= src for t in targets)

    def spec(self) -> dict:
        return {"kind": "builtin", "name": "ray"}

    def __eq__(self, other):
        return isinstance(other, RayFactor) and (self.prefix, self.root_name) == (other.prefix, other.root_name)

    def __hash__(self):
        return hash(("ray", self.prefix, self.root_name))


class TwoLeafStar(ExplicitFactor):
    """Root joined to two leaves; from the root each leaf has probability 1/2."""

    def __init__(self, prefix: str = "a", root_name: str = "o"):
        mat = [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        super().__init__([root_name, f"{prefix}1", f"{prefix}2"], mat)

    def spec(self) -> dict:
        return {"kind": "builtin", "name": "two_leaf_star"}


BUILTIN_LETTERS = {"ray": ("g", "h"), "two_leaf_star": ("a", "b")}


def builtin_factor(name: str, factor_index: int) -> FactorGraph:
    if name not in BUILTIN_LETTERS:
        raise ModelError(f"unknown builtin factor {name!r}")
    prefix = BUILTIN_LETTERS[name][factor_index - 1]
    root = f"o{factor_index}"
    return RayFactor(prefix, root) if name == "ray" else TwoLeafStar(prefix, root)


def factor_from_spec(spec: dict, factor_index: int) -> FactorGraph:
    if not isinstance(spec, dict):
        raise ModelError("factor spec must be an object")
    kind = spec.get("kind")
    if kind == "explicit":
        extra = set(spec) - {"kind", "root", "edges"}
        if extra:
            raise ModelError(f"unknown keys in explicit factor: {sorted(extra)}")
        if "root" not in spec or "edges" not in spec:
            raise ModelError("explicit factor needs 'root' and 'edges'")
        return ExplicitFactor.from_edges(spec["root"], spec["edges"])
    if kind == "builtin":
        extra = set(spec) - {"kind", "name"}
        if extra:
            raise ModelError(f"unknown keys in builtin factor: {sorted(extra)}")
        return builtin_factor(spec.get("name"), factor_index)
    raise ModelError(f"factor kind must be 'explicit' or 'builtin', got {kind!r}")


# ---------------------------------------------------------------------------
# free product


@dataclass(frozen=True, eq=False)
class FreeProduct:
    """Random walk ``P = alpha * P1_lifted + (1 - alpha) * P2_lifted`` on ``V1 * V2``."""

    factor1: FactorGraph
    factor2: FactorGraph
    alpha: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def factor(self, i: int) -> FactorGraph:
        return self.factor1 if i == 1 else self.factor2

    def weight(self, i: int) -> float:
        return self.alpha if i == 1 else 1.0 - self.alpha

    # -- naming helpers ----------------------------------------------------
    def letter(self, factor: int, state) -> Letter:
        if factor not in (1, 2):
            raise ModelError(f"factor index must be 1 or 2, got {factor}")
        sid = self.factor(factor).state_id(state) if isinstance(state, str) else int(state)
        if sid <= 0:
            raise ModelError("a letter cannot be the factor root")
        return Letter(factor, sid)

    def word(self, *letters) -> Word:
        """``fp.word((1, "a"), (2, "b"))``; state names or ids are accepted."""
        return Word(self.letter(f, s) for f, s in letters)

    def parse_word(self, text: str) -> Word:
        """Parse the compact form ``"1:a/2:b"``; ``"o"`` or ``""`` is the root."""
        text = text.strip()
        if text in ("", "o"):
            return ROOT
        parts = []
        for chunk in text.split("/"):
            f, _, s = chunk.partition(":")
            if not _ or not f.strip().isdigit():
                raise ModelError(f"cannot parse letter {chunk!r}; expected 'factor:state'")
            parts.append((int(f), s.strip()))
        return self.word(*parts)

    def format_word(self, w: Sequence) -> str:
        if not w:
            return "o"
        return "/".join(f"{l[0]}:{self.factor(l[0]).state_name(l[1])}" for l in w)

    def word_to_json(self, w: Sequence) -> list:
        return [[int(l[0]), self.factor(l[0]).state_name(l[1])] for l in w]

    def word_from_json(self, obj) -> Word:
        if isinstance(obj, str):
            return self.parse_word(obj)
        if not isinstance(obj, (list, tuple)):
            raise ModelError(f"word must be a list of [factor, state] pairs, got {obj!r}")
        letters = []
        for item in obj:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ModelError(f"letter must be a [factor, state] pair, got {item!r}")
            letters.append((int(item[0]), item[1]))
        return self.word(*letters)

    def spec(self) -> dict:
        return {"factor1": self.factor1.spec(), "factor2": self.factor2.spec(), "alpha": self.alpha}

    @property
    def fingerprint(self) -> str:
        """Canonical JSON of the model; equal models share memo entries across processes."""
        fp = self._cache.get("fingerprint")
        if fp is None:
            fp = json.dumps(self.spec(), sort_keys=True)
            self._cache["fingerprint"] = fp
        return fp

    def __reduce__(self):
        return (_rebuild_free_product, (self.factor1, self.factor2, self.alpha))


def _rebuild_free_product(f1, f2, alpha):
    return FreeProduct(f1, f2, alpha)


def free_product_from_spec(spec: dict) -> FreeProduct:
    if not isinstance(spec, dict):
        raise ModelError("model must be an object")
    extra = set(spec) - {"factor1", "factor2", "alpha"}
    if extra:
        raise ModelError(f"unknown keys in model: {sorted(extra)}")
    missing = {"factor1", "factor2", "alpha"} - set(spec)
    if missing:
        raise ModelError(f"model is missing {sorted(missing)}")
    alpha = spec["alpha"]
    if not isinstance(alpha, (int, float)) or isinstance(alpha, bool):
        raise ModelError("alpha must be a number")
    return FreeProduct(factor_from_spec(spec["factor1"], 1), factor_from_spec(spec["factor2"], 2), float(alpha))


def validate(fp: FreeProduct, implicit_radius: int = 16) -> list[str]:
    """List of violated model assumptions; empty iff the model is admissible."""
    out = []
    if not (0.0 < fp.alpha < 1.0):
        out.append(f"alpha must lie in (0,1), got {fp.alpha}")
    for i in (1, 2):
        g = fp.factor(i)
        if g.is_finite:
            out.extend(f"factor {i}: {v}" for v in g.violations())
        else:
            for s in g.ball(implicit_radius):
                cols, probs = g.row(s)
                if any(p < 0 for p in probs):
                    out.append(f"factor {i}: negative probability at {g.state_name(s)!r}")
                if abs(sum(probs) - 1.0) > PROB_TOL:
                    out.append(f"factor {i}: row of {g.state_name(s)!r} must sum up to 1")
                if any(c == s and p != 0 for c, p in zip(cols, probs)):
                    out.append(f"factor {i}: self-loop at {g.state_name(s)!r}")
    sizes = [fp.factor(i).n_states if fp.factor(i).is_finite else None for i in (1, 2)]
    if sizes == [2, 2]:
        out.append("2x2 excluded: both factors have exactly two states, the walk is recurrent")
    return out


def require_valid(fp: FreeProduct) -> None:
    problems = validate(fp)
    if problems:
        raise ModelError("invalid model: " + "; ".join(problems))


class StepDistribution(list):
    """List of ``(Word, probability)`` pairs."""

    def total(self) -> float:
        return float(sum(p for _, p in self))

    def as_dict(self) -> dict:
        return {w: p for w, p in self}


def step_distribution(fp: FreeProduct, w: Sequence) -> StepDistribution:
    w = w if isinstance(w, Word) else Word(w)
    out = StepDistribution()
    t = w.type
    for i in (1, 2):
        g = fp.factor(i)
        a = fp.weight(i)
        if t == i:
            base = w[:-1]
            cols, probs = g.row(w[-1].state)
            for s, p in zip(cols, probs):
                if p == 0:
                    continue
                succ = Word._raw(base) if s == 0 else Word._raw(base + (Letter(i, s),))
                out.append((succ, a * p))
        else:
            cols, probs = g.row(0)
            for s, p in zip(cols, probs):
                if p == 0:
                    continue
                out.append((Word._raw(tuple(w) + (Letter(i, s),)), a * p))
    return out


def transition_probability(fp: FreeProduct, x: Sequence, y: Sequence) -> float:
    y = tuple(y)
    return float(sum(p for s, p in step_distribution(fp, x) if tuple(s) == y))


def first_factor1_letter(fp: FreeProduct) -> Letter:
    """Default regeneration letter: smallest factor-1 state (by name) with positive mass from the root."""
    g = fp.factor1
    cols, probs = g.row(0)
    cands = [c for c, p in zip(cols, probs) if p > 0]
    if not cands:
        raise ModelError("factor 1 root has no outgoing mass")
    best = min(cands, key=lambda c: g.state_name(c))
    return Letter(1, best)


# ---------------------------------------------------------------------------
# word trie


class WordTrie:
    """Prefix tree of words; node ``0`` is the root ``o``.

    Plain Python lists keep appends cheap in the simulation loop.
    """

    def __init__(self):
        self.parent = [-1]
        self.factor = [0]
        self.state = [0]
        self.depth = [0]
        self.children: dict = {}

    def __len__(self):
        return len(self.parent)

    def child(self, node: int, factor: int, state: int) -> int:
        return self.children.get((node, factor, state), -1)

    def add_child(self, node: int, factor: int, state: int) -> int:
        key = (node, factor, state)
        idx = self.children.get(key)
        if idx is None:
            idx = len(self.parent)
            self.children[key] = idx
            self.parent.append(node)
            self.factor.append(factor)
            self.state.append(state)
            self.depth.append(self.depth[node] + 1)
        return idx

    def insert(self, w: Sequence) -> int:
        node = 0
        for f, s in w:
            node = self.add_child(node, f, s)
        return node

    def find(self, w: Sequence) -> int:
        node = 0
        for f, s in w:
            node = self.children.get((node, f, s), -1)
            if node < 0:
                return -1
        return node

    def word(self, node: int) -> Word:
        letters = []
        while node > 0:
            letters.append(Letter(self.factor[node], self.state[node]))
            node = self.parent[node]
        return Word._raw(tuple(reversed(letters)))

    def ancestor(self, node: int, depth: int) -> int:
        while self.depth[node] > depth:
            node = self.parent[node]
        return node

    def suffix(self, node: int, depth: int) -> Word:
        """Letters of ``node`` below depth ``depth`` (the word with its prefix stripped)."""
        letters = []
        while self.depth[node] > depth:
            letters.append(Letter(self.factor[node], self.state[node]))
            node = self.parent[node]
        return Word._raw(tuple(reversed(letters)))
