import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmatch import vf2
from netmatch.graph import CircuitGraph, disjoint_union, induced_subgraph
from netmatch.synth import cell_graph

from oracles import backtrack_matches, brute_force_matches, random_typed_graph


def test_inverter_maps_onto_itself_once():
    g = cell_graph("inv")
    assert vf2.enumerate_matches(g, g) == [tuple(range(7))]


def test_two_inverters():
    g = cell_graph("inv")
    host, off = disjoint_union([g, g])
    found = set(vf2.enumerate_matches(g, host))
    assert found == {tuple(range(7)), tuple(range(7, 14))}


def test_non_induced():
    # host has an extra edge among the image nodes; still a match
    t = CircuitGraph([2, 3], [0], [1], [1])
    h = CircuitGraph([2, 3], [0, 0], [1, 1], [1, 5])
    assert vf2.enumerate_matches(t, h) == [(0, 1)]


def test_types_and_edge_labels_respected():
    t = CircuitGraph([2, 3], [0], [1], [1])
    assert vf2.enumerate_matches(t, CircuitGraph([2, 4], [0], [1], [1])) == []
    assert vf2.enumerate_matches(t, CircuitGraph([2, 3], [0], [1], [2])) == []
    assert vf2.enumerate_matches(t, CircuitGraph([2, 3], [1], [0], [1])) == []


def test_allowed_restricts_image():
    g = cell_graph("inv")
    host, _ = disjoint_union([g, g])
    assert vf2.enumerate_matches(g, host, allowed=range(7, 14)) == [tuple(range(7, 14))]
    assert not vf2.contains(g, host, allowed=range(3, 10))
    # same as matching inside the induced subgraph
    sub = induced_subgraph(host, range(7, 14))
    assert vf2.contains(g, sub)


def test_limit():
    g = cell_graph("inv")
    host, _ = disjoint_union([g, g, g])
    assert len(vf2.enumerate_matches(g, host, limit=2)) == 2


@pytest.mark.parametrize("name", ["inv", "ctg", "nand2", "nor2", "nand3", "nor3", "delay4"])
def test_small_cell_automorphisms_match_brute_force(name):
    g = cell_graph(name)
    assert set(vf2.automorphisms(g)) == brute_force_matches(g, g)


@pytest.mark.parametrize("name", ["nand5", "nor4", "delay6", "col_sel", "decoder2_4"])
def test_larger_cell_automorphisms_match_backtracking(name):
    g = cell_graph(name)
    assert set(vf2.automorphisms(g)) == backtrack_matches(g, g)


def test_nand_inputs_are_not_interchangeable():
    # parallel PMOS are symmetric but the series NMOS stack is ordered
    assert len(vf2.automorphisms(cell_graph("nand2"))) == 1
    assert len(vf2.automorphisms(cell_graph("inv"))) == 1


def test_count_classes():
    autos = [(0, 1, 2), (1, 0, 2)]
    assert vf2.count_classes([(5, 6, 7), (6, 5, 7), (5, 6, 8)], autos) == 2


def test_is_valid_mapping():
    g = cell_graph("nand2")
    m = vf2.enumerate_matches(g, g)[0]
    assert vf2.is_valid_mapping(g, g, m)
    assert not vf2.is_valid_mapping(g, g, m[::-1])
    assert not vf2.is_valid_mapping(g, g, (0,) * g.num_nodes)


def test_empty_target_rejected():
    with pytest.raises(ValueError):
        vf2.enumerate_matches(CircuitGraph([], [], [], []), cell_graph("inv"))


@settings(max_examples=150)
@given(st.integers(0, 2**32 - 1))
def test_random_graphs_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    host = random_typed_graph(rng, int(rng.integers(1, 11)), n_types=3, n_etypes=2, p=0.3)
    k = int(rng.integers(1, min(5, host.num_nodes) + 1))
    if rng.random() < 0.5:
        # a subgraph of the host, so at least one match exists
        nodes = rng.choice(host.num_nodes, k, replace=False)
        sub = induced_subgraph(host, nodes)
        keep = rng.random(sub.num_edges) < 0.7
        target = CircuitGraph(sub.node_types, sub.src[keep], sub.dst[keep], sub.etype[keep])
    else:
        target = random_typed_graph(rng, k, n_types=3, n_etypes=2, p=0.3)
    found = vf2.enumerate_matches(target, host)
    assert len(found) == len(set(found))
    assert set(found) == brute_force_matches(target, host)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_backtracking_oracle_agrees_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    host = random_typed_graph(rng, int(rng.integers(1, 9)), n_types=2, n_etypes=2, p=0.35)
    target = random_typed_graph(rng, int(rng.integers(1, 4)), n_types=2, n_etypes=2, p=0.4)
    assert backtrack_matches(target, host) == brute_force_matches(target, host)
