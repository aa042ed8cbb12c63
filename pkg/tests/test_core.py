import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freewalk.config import fixture
from freewalk.core import (
    ROOT,
    ExplicitFactor,
    Letter,
    Word,
    WordTrie,
    common_prefix,
    cone_contains,
    first_factor1_letter,
    free_product_from_spec,
    step_distribution,
    transition_probability,
    validate,
)
from freewalk.errors import ModelError


def _random_word(fp, draw_bits, max_len=6):
    letters = {i: list(range(1, fp.factor(i).n_states)) for i in (1, 2)}
    out, last = [], None
    for b in draw_bits[:max_len]:
        f = 2 if last == 1 else 1 if last == 2 else 1 + (b % 2)
        s = letters[f][b % len(letters[f])]
        out.append((f, s))
        last = f
    return Word(out)


def test_word_rejects_repeated_factor():
    with pytest.raises(ModelError):
        Word([(1, 1), (1, 1)])


def test_word_rejects_root_state():
    with pytest.raises(ModelError):
        Word([(1, 0)])


def test_word_operations(fix_a):
    x = fix_a.word((1, "a"), (2, "b"))
    assert len(x) == 2 and x.type == 2
    assert x.parent() == fix_a.word((1, "a"))
    assert x.replace_last(2) == fix_a.word((1, "a"), (2, "c"))
    assert x.append(Letter(1, 1)).parent() == x
    assert cone_contains(fix_a.word((1, "a")), x)
    assert not cone_contains(x, fix_a.word((1, "a")))
    assert common_prefix(x, fix_a.word((1, "a"), (2, "c"))) == fix_a.word((1, "a"))
    assert ROOT.type == 0


def test_parse_and_format(fix_a):
    assert fix_a.parse_word("o") == ROOT
    w = fix_a.parse_word("1:a/2:c")
    assert fix_a.format_word(w) == "1:a/2:c"
    assert fix_a.word_from_json(fix_a.word_to_json(w)) == w
    with pytest.raises(ModelError):
        fix_a.parse_word("1:zz")
    with pytest.raises(ModelError):
        fix_a.parse_word("a")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=0, max_size=8))
def test_format_roundtrip_property(bits):
    fp = free_product_from_spec(fixture("exampleA"))
    w = _random_word(fp, bits)
    assert fp.parse_word(fp.format_word(w)) == w


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=0, max_size=8))
def test_step_distribution_is_stochastic_and_nearest_neighbour(bits):
    fp = free_product_from_spec(fixture("exampleA"))
    w = _random_word(fp, bits)
    dist = step_distribution(fp, w)
    assert math.isclose(dist.total(), 1.0, abs_tol=1e-12)
    for y, p in dist:
        assert p > 0
        # one step changes the word by one letter at the end
        assert abs(len(y) - len(w)) <= 1
        assert len(common_prefix(w, y)) >= len(w) - 1


def test_transition_probabilities_by_hand(fix_a):
    o, a, b = ROOT, fix_a.word((1, "a")), fix_a.word((2, "b"))
    assert transition_probability(fix_a, o, a) == pytest.approx(0.5)
    assert transition_probability(fix_a, o, b) == pytest.approx(0.5)
    # from 1:a the own-factor move a -> o1 contracts the word
    assert transition_probability(fix_a, a, o) == pytest.approx(0.5)
    assert transition_probability(fix_a, a, fix_a.word((1, "a"), (2, "b"))) == pytest.approx(0.5)
    c = fix_a.word((1, "a"), (2, "c"))
    assert transition_probability(fix_a, c, a) == pytest.approx(0.25)
    assert transition_probability(fix_a, c, fix_a.word((1, "a"), (2, "b"))) == pytest.approx(0.25)
    assert transition_probability(fix_a, c, c.append(Letter(1, 1))) == pytest.approx(0.5)
    assert transition_probability(fix_a, o, c) == 0.0


def test_ray_steps(fix_ray):
    w = fix_ray.word((1, 3))
    dist = dict(step_distribution(fix_ray, w))
    assert dist == {fix_ray.word((1, 4)): 0.5, fix_ray.word((1, 3), (2, 1)): 0.5}


def test_validate_flags_bad_rows():
    spec = fixture("exampleA")
    spec["factor2"]["edges"][3][2] = 0.4
    problems = validate(free_product_from_spec(spec))
    assert any("must sum up to 1" in p for p in problems)


def test_validate_flags_alpha_and_tiny_factors():
    spec = fixture("exampleA")
    spec["alpha"] = 1.0
    assert validate(free_product_from_spec(spec))
    tiny = {"factor1": {"kind": "explicit", "root": "o1", "edges": [["o1", "a", 1], ["a", "o1", 1]]},
            "factor2": {"kind": "explicit", "root": "o2", "edges": [["o2", "b", 1], ["b", "o2", 1]]},
            "alpha": 0.5}
    assert any("2x2" in p for p in validate(free_product_from_spec(tiny)))


def test_validate_accepts_fixtures(fix_a, fix_null, fix_ray):
    for fp in (fix_a, fix_null, fix_ray):
        assert validate(fp) == []


def test_unknown_factor_keys_rejected():
    spec = fixture("exampleA")
    spec["factor1"]["extra"] = 1
    with pytest.raises(ModelError):
        free_product_from_spec(spec)


def test_explicit_factor_reachability():
    g = ExplicitFactor.from_edges("o", [["o", "x", 1.0], ["x", "y", 1.0], ["y", "o", 0.5], ["y", "x", 0.5]])
    assert g.can_reach(1, {0})
    P = np.zeros((3, 3))
    for s in range(3):
        cols, probs = g.row(s)
        P[s, list(cols)] = probs
    assert np.allclose(P.sum(axis=1), 1.0)


def test_first_factor1_letter(fix_a, fix_ray):
    assert fix_a.format_word([first_factor1_letter(fix_a)]) == "1:a"
    assert fix_ray.format_word([first_factor1_letter(fix_ray)]) == "1:g1"


def test_trie(fix_a):
    t = WordTrie()
    w = fix_a.word((1, "a"), (2, "b"), (1, "a"))
    node = t.insert(w)
    assert t.word(node) == w
    assert t.depth[node] == 3
    assert t.find(w.parent()) == t.parent[node]
    assert t.ancestor(node, 1) == t.find(fix_a.word((1, "a")))
    assert t.find(fix_a.word((2, "b"))) == -1


def test_model_fingerprint_survives_pickle(fix_a):
    import pickle

    clone = pickle.loads(pickle.dumps(fix_a))
    assert clone.fingerprint == fix_a.fingerprint
    assert clone.spec() == fix_a.spec()
