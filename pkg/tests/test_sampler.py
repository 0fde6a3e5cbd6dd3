import warnings

import numpy as np
import pytest

from netmatch import sampler, synth, vf2
from netmatch.graph import CircuitGraph, NMOS, PMOS, induced_subgraph
from netmatch.sampler import (
    KINDS, MUTATION, OTHERS, PARTIAL, POSITIVE, RANDOM, Sample, SampleCounts, SamplingError, TargetSampler,
)
from netmatch.synth import cell_graph

from oracles import backtrack_matches, plain_distances


@pytest.fixture(scope="module")
def bench():
    return synth.generate(synth.BenchmarkSpec(seed=4, size=900, plants=(("nand2", 4), ("nor3", 3), ("inv", 3))))


@pytest.fixture(scope="module")
def samples(bench):
    hosts = {"h": bench.graph}
    targets = {"nand2": cell_graph("nand2"), "nor3": cell_graph("nor3")}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sampler.build_sample_set(hosts, targets, SampleCounts(20, 10, 5, 5, 30), seed=9)


def _region_nodes(g, c, K):
    # the oracle ball: plain BFS on the undirected graph, never relaying through a rail
    return sorted(v for v, d in plain_distances(g, c).items() if d <= K)


def test_labels_match_oracle(bench, samples):
    for s in samples:
        t = cell_graph(s.target_id)
        if s.graph is None:
            sub = induced_subgraph(bench.graph, _region_nodes(bench.graph, s.center, s.K))
        else:
            sub = s.graph
            # mutated graphs are a whole region around the local center
            assert s.center < sub.num_nodes
        assert bool(backtrack_matches(t, sub)) == (s.label == 1), s.to_json()


def test_quotas_and_kinds(samples):
    per = {}
    for s in samples:
        per[(s.target_id, s.kind)] = per.get((s.target_id, s.kind), 0) + 1
    for tid in ("nand2", "nor3"):
        assert per[(tid, POSITIVE)] == 20
        assert per[(tid, RANDOM)] == 30
        assert per.get((tid, PARTIAL), 0) > 0
        assert per.get((tid, MUTATION), 0) > 0
    assert {s.kind for s in samples} <= set(KINDS)


def test_partial_regions_overlap_a_match(bench, samples):
    matched = {h for m in bench.truth["nand2"] for h in m if not bench.graph.is_rail[h]}
    for s in samples:
        if s.kind == PARTIAL and s.target_id == "nand2":
            assert set(_region_nodes(bench.graph, s.center, s.K)) & matched


def test_others_centered_near_other_target(bench, samples):
    for s in samples:
        if s.kind == OTHERS and s.target_id == "nor3":
            assert backtrack_matches(cell_graph("nand2"),
                                     induced_subgraph(bench.graph, _region_nodes(bench.graph, s.center, s.K)))


def test_deterministic(bench, samples):
    hosts = {"h": bench.graph}
    targets = {"nand2": cell_graph("nand2"), "nor3": cell_graph("nor3")}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = sampler.build_sample_set(hosts, targets, SampleCounts(20, 10, 5, 5, 30), seed=9)
        other = sampler.build_sample_set(hosts, targets, SampleCounts(20, 10, 5, 5, 30), seed=10)
    assert again == samples
    assert other != samples


def test_target_order_does_not_change_streams(bench):
    hosts = {"h": bench.graph}
    a = sampler.build_sample_set(hosts, {"nand2": cell_graph("nand2"), "inv": cell_graph("inv")},
                                 SampleCounts(5, 0, 0, 0, 5), seed=3)
    b = sampler.build_sample_set(hosts, {"inv": cell_graph("inv"), "nand2": cell_graph("nand2")},
                                 SampleCounts(5, 0, 0, 0, 5), seed=3)
    key = lambda s: (s.target_id, s.kind, s.center)
    assert sorted(map(key, a)) == sorted(map(key, b))


def test_sampling_leaves_host_untouched(bench):
    before = bench.graph.to_bytes()
    ts = TargetSampler(bench.graph, cell_graph("nand2"), "nand2")
    ts.mutation(3, np.random.default_rng(0))
    assert bench.graph.to_bytes() == before


def test_mutation_only_touches_cells():
    g = cell_graph("nand2")
    cells = np.flatnonzero(np.isin(g.node_types, (PMOS, NMOS))).tolist()
    flipped = sampler.mutate(g, cells[:1], "flip")
    assert int((flipped.node_types != g.node_types).sum()) == 1
    assert {int(flipped.node_types[cells[0]]), int(g.node_types[cells[0]])} == {PMOS, NMOS}
    flipped.validate()
    swapped = sampler.mutate(g, cells, "swap")
    assert np.array_equal(swapped.node_types, g.node_types)
    swapped.validate()
    assert not vf2.contains(g, flipped)
    with pytest.raises(ValueError):
        sampler.mutate(g, cells, "rotate")


def test_sample_invariants():
    with pytest.raises(ValueError):
        Sample(0, 2, "t", 0, POSITIVE)
    with pytest.raises(ValueError):
        Sample(0, 2, "t", 1, RANDOM)
    s = Sample(0, 2, "t", 1, POSITIVE)
    with pytest.raises(Exception):
        s.center = 3
    with pytest.raises(TypeError):
        hash(s)


def test_jsonl_round_trip(tmp_path, samples):
    path = tmp_path / "s.jsonl"
    sampler.write_jsonl(samples, path)
    assert sampler.read_jsonl(path) == samples
    assert any(s.graph is not None for s in sampler.read_jsonl(path))


def test_absent_target_raises(bench):
    lonely = CircuitGraph([2, 5, 7], [0, 0], [1, 2], [10, 12])
    with pytest.raises(SamplingError):
        TargetSampler(bench.graph, lonely, "lonely").positive(3, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        sampler.build_sample_set({"h": bench.graph}, {"lonely": lonely}, SampleCounts(1, 0, 0, 0, 1))


def test_single_node_target_has_no_partials(bench):
    dot = CircuitGraph([2], [], [], [])
    ts = TargetSampler(bench.graph, dot, "dot", K=0)
    assert ts.partial(10, np.random.default_rng(0)) == []


def test_restrict():
    c = SampleCounts()
    assert c.restrict("ALL") == c
    assert c.restrict("P+R") == SampleCounts(200, 0, 0, 0, 300)
    assert c.restrict("p+t+m") == SampleCounts(200, 100, 50, 0, 0)
    with pytest.raises(ValueError):
        c.restrict("R")


def test_zero_plants_means_no_positives():
    host = synth.generate(synth.BenchmarkSpec(seed=1, size=200, filler=("inv",))).graph
    with pytest.raises(SamplingError):
        sampler.positive_samples(host, cell_graph("nand3"), 5, np.random.default_rng(0))
    got = sampler.random_samples(host, cell_graph("nand3"), 5, np.random.default_rng(0))
    assert len(got) == 5 and all(s.label == 0 for s in got)


def test_positive_centers_cover_a_whole_match(bench):
    ts = TargetSampler(bench.graph, cell_graph("nor3"), "nor3")
    for c in ts.eligible_centers():
        ball = set(_region_nodes(bench.graph, c, ts.K))
        assert any(all(h in ball for h in m) for m in ts.matches)


def test_all_centers():
    g = cell_graph("inv")
    out = sampler.all_centers(g, 2, "inv", "h")
    assert [s.center for s in out] == list(range(g.num_nodes))
    assert all(s.label is None for s in out)
