import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from fgfuzz import _kernels_py, kernels
from fgfuzz.depgraph import (
    DEFAULT_WEIGHTS,
    Mode,
    SecurityVector,
    WeightVector,
    brute_force_level,
    build_graph,
    commands_of,
    dependency_subgraph,
    levels_by_depth,
    rank_identifiers,
    security_vector,
    weighted_score,
)
from fgfuzz.errors import UnknownIdentifier
from fgfuzz.model import PROPERTIES, Phase, Property

from genmodels import random_model
from oracles import brute_force_min_attack

I = Property.Integrity


def rrc_setup_identifiers(model):
    return [i.name for i in model.identifiers if model.phase_of(i.name) is Phase.RrcSetup]


def test_rrc_setup_identifiers_have_no_protectors(nsa):
    g = build_graph(nsa)
    for name in rrc_setup_identifiers(nsa):
        assert g.in_edges(name) == []


def test_k_nasenc_has_three_integrity_edges(nsa):
    g = build_graph(nsa)
    assert len(g.in_edges("K_NASenc", "I")) == 3


def test_k_nasenc_frontier_vector(nsa):
    assert security_vector(build_graph(nsa), "K_NASenc").as_list() == [0, 5, 1, 0]


@pytest.mark.parametrize("mode", list(Mode))
def test_rrc_setup_vectors_are_zero_in_frontier_mode(nsa, mode):
    g = build_graph(nsa)
    v = security_vector(g, "UE_Identity", mode)
    assert v.as_list() == ([0, 0, 0, 0] if mode is Mode.Frontier else [1, 1, 1, 1])


def test_chain_gives_one_element_frontier(nsa):
    from fgfuzz.model import CommandDef, Direction, IdentifierDef, Layer, ProtectedBy, ProtectionEntry, ProtocolModel, Range, Role

    ids = tuple(IdentifierDef(n, 1, Range(0, 1), "C", Role.Config) for n in ("a", "b"))
    prots = (ProtectionEntry("a", integrity=ProtectedBy({"b"})), ProtectionEntry("b"))
    m = ProtocolModel(ids, prots, (CommandDef("C", Layer.RRC, Direction.Downlink, ("a", "b"), Phase.RrcSetup, 2),))
    assert security_vector(build_graph(m), "a").as_list() == [0, 1, 0, 0]


def test_unknown_identifier(nsa):
    with pytest.raises(UnknownIdentifier):
        security_vector(build_graph(nsa), "K_FAKE")


def test_second_level_of_k_nasenc(nsa):
    g = build_graph(nsa)
    levels = levels_by_depth(g, "K_NASenc", I)
    assert len(levels[0]) == 3
    assert len(levels[1]) == 5
    assert len(commands_of(g, levels[1])) == 3
    sub = dependency_subgraph(g, "K_NASenc")
    assert set(levels[0]) | set(levels[1]) <= set(sub.nodes)


def test_subgraph_of_root_only_node(nsa):
    sub = dependency_subgraph(build_graph(nsa), "UE_Identity")
    assert sub.nodes == ("UE_Identity",)
    assert sub.edges == ()


# ------------------------------------------------------------- scoring


def test_weighted_score_examples():
    w = WeightVector(1, 1, Fraction(1, 2), Fraction(1, 2))
    assert weighted_score(SecurityVector(0, 5, 1, 0), w) == Fraction(11, 2)
    assert weighted_score(SecurityVector(0, 0, 0, 0), WeightVector(3, 1, 2, 7)) == 0
    assert weighted_score(SecurityVector(1, 1, 1, 1), WeightVector(1, 1, 1, 1)) == 4


def test_weights_must_be_sensible():
    with pytest.raises(ValueError):
        WeightVector(0, 0, 0, 0)
    with pytest.raises(ValueError):
        WeightVector(-1, 1, 1, 1)
    with pytest.raises(ValueError):
        WeightVector.parse("1,1,1")
    assert WeightVector.parse("1, 1, 0.5, 0.5") == DEFAULT_WEIGHTS


def test_ranking_puts_rrc_setup_before_k_nasenc(nsa):
    order = [n for n, _ in rank_identifiers(build_graph(nsa), DEFAULT_WEIGHTS)]
    k = order.index("K_NASenc")
    assert all(order.index(n) < k for n in rrc_setup_identifiers(nsa))


def test_ranking_ties_break_by_name():
    from fgfuzz.model import CommandDef, Direction, IdentifierDef, Layer, ProtectionEntry, ProtocolModel, Range, Role

    ids = tuple(IdentifierDef(n, 1, Range(0, 1), "C", Role.Config) for n in ("B", "A"))
    m = ProtocolModel(ids, (ProtectionEntry("B"), ProtectionEntry("A")), (CommandDef("C", Layer.RRC, Direction.Downlink, ("B", "A"), Phase.RrcSetup, 2),))
    assert rank_identifiers(build_graph(m)) == [("A", 0), ("B", 0)]


# ---------------------------------------------------- frontier vs oracle


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(0, 2**32))
def test_frontier_matches_brute_force(n, seed):
    model, plain = random_model(random.Random(seed), n)
    g = build_graph(model)
    for name in plain[I]:
        v = security_vector(g, name)
        for p in PROPERTIES:
            assert v[p] == brute_force_min_attack(plain[p], name)
            assert brute_force_level(g, name, p) == v[p]


@settings(max_examples=40)
@given(st.integers(1, 8), st.integers(0, 2**32))
def test_frontier_is_bounded_by_direct_protector_count_of_leaves(n, seed):
    model, plain = random_model(random.Random(seed), n)
    g = build_graph(model)
    for name in plain[I]:
        # protecting more cannot make an identifier easier to attack
        assert security_vector(g, name).i >= (1 if plain[I][name] else 0)


# ------------------------------------------------------------- kernels


@settings(max_examples=200)
@given(st.integers(0, 6), st.lists(st.integers(0, 2**12 - 1), max_size=6), st.data())
def test_min_cover_backends_agree(n_leaves, raw, data):
    reqs = [r & ((1 << (n_leaves + j)) - 1) for j, r in enumerate(raw)]
    total = n_leaves + len(reqs)
    if total == 0:
        return
    target = data.draw(st.integers(0, total - 1))
    expect = _kernels_py.min_cover(n_leaves, reqs, target)
    assert kernels.min_cover(n_leaves, reqs, target) == expect


@given(st.lists(st.tuples(st.integers(1, 130), st.data()), max_size=8))
def test_pack_unpack_backends_agree(spec):
    widths = [w for w, _ in spec]
    values = [d.draw(st.integers(0, (1 << w) - 1)) for w, d in spec]
    packed = _kernels_py.pack_fields(values, widths)
    assert kernels.pack_fields(values, widths) == packed
    assert kernels.unpack_fields(packed, widths) == values
    assert _kernels_py.unpack_fields(packed, widths) == values


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
