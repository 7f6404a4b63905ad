import itertools
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnlab.graph import bfs_ball, from_edges
from gnnlab.samplers import (
    SamplerSpec,
    build_computational_graph,
    draw_subgraph,
    enumerate_minibatches,
    fastgcn_computational_graph,
    fastgcn_probabilities,
    full_computational_graph,
    sage_computational_graph,
    sample_minibatch,
    shadow_extract,
    validate_batch_window,
)

from conftest import path_graph, random_graph, star_graph


def train_all(g):
    return from_edges(g.node_count, g.edge_array(), g.features, g.labels, np.ones(g.node_count, bool))


def test_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        SamplerSpec(batch_size=0)
    with pytest.raises(ValueError):
        SamplerSpec(fanouts=(3, 0))
    with pytest.raises(ValueError):
        SamplerSpec(resample_interval=0)
    with pytest.raises(ValueError):
        SamplerSpec(comp_sampler="cluster")


def test_uniform_batch_of_all_train_nodes(rng):
    g = from_edges(6, [(0, 1)], train_mask=[1, 1, 0, 1, 1, 0])
    nodes, nu = sample_minibatch(g, SamplerSpec(batch_size=4), rng)
    assert nodes.tolist() == [0, 1, 3, 4]
    assert nu.tolist() == [1, 1, 1, 1]


def test_single_train_node(rng):
    g = from_edges(3, [(0, 1)], train_mask=[0, 0, 1])
    nodes, nu = sample_minibatch(g, SamplerSpec(batch_size=1), rng)
    assert nodes.tolist() == [2]


def test_oversized_batch_clamps_with_warning(rng):
    g = from_edges(3, [(0, 1)], train_mask=[1, 1, 0])
    with pytest.warns(UserWarning, match="clamping"):
        nodes, _ = sample_minibatch(g, SamplerSpec(batch_size=10), rng)
    assert nodes.tolist() == [0, 1]


def test_no_train_nodes(rng):
    with pytest.raises(ValueError):
        sample_minibatch(path_graph(3), SamplerSpec(batch_size=1), rng)


def test_degree_weighted_star_center_probability():
    g = train_all(star_graph(3))
    spec = SamplerSpec(node_sampler="weighted", batch_size=1)
    law = {int(b[0]): p for b, _, p in enumerate_minibatches(g, spec)}
    assert law[0] == pytest.approx(3 / 6, abs=1e-15)
    r = np.random.default_rng(0)
    draws = [int(sample_minibatch(g, spec, r)[0][0]) for _ in range(20000)]
    assert np.mean(np.array(draws) == 0) == pytest.approx(0.5, abs=0.015)


def test_weighted_sampler_rejects_zero_weight(rng):
    g = from_edges(3, [(0, 1)], train_mask=[1, 1, 1])  # node 2 is isolated
    with pytest.raises(ValueError, match="positive"):
        sample_minibatch(g, SamplerSpec(node_sampler="weighted", batch_size=1), rng)


def test_sampler_follows_enumerated_law(fixture8):
    spec = SamplerSpec(node_sampler="weighted", batch_size=2)
    law = {tuple(b.tolist()): p for b, _, p in enumerate_minibatches(fixture8, spec)}
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-12)
    r = np.random.default_rng(3)
    n = 40000
    counts = Counter(tuple(sample_minibatch(fixture8, spec, r)[0].tolist()) for _ in range(n))
    for batch, p in law.items():
        assert abs(counts[batch] / n - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-3


def test_uniform_enumeration_counts(fixture8):
    law = enumerate_minibatches(fixture8, SamplerSpec(batch_size=3))
    assert len(law) == 56
    assert all(p == pytest.approx(1 / 56) for *_, p in law)


def test_batch_window_flags():
    big = from_edges(10000, [(0, 1)], train_mask=np.ones(10000, bool))
    assert validate_batch_window(big, SamplerSpec(batch_size=32))["within_window"]
    small = from_edges(100, [(0, 1)], train_mask=np.ones(100, bool))
    assert validate_batch_window(small, SamplerSpec(batch_size=32))["upper_violated"]
    rep = validate_batch_window(small, SamplerSpec(batch_size=100))
    assert rep["full_gradient"] and not rep["upper_violated"]


# ----------------------------------------------------------- computational graphs


def test_full_cg_zero_layers():
    cg = full_computational_graph(path_graph(3), 1, 0)
    assert len(cg.layers) == 1 and cg.layers[0].tolist() == [1]


def test_full_cg_path():
    cg = full_computational_graph(path_graph(3), 1, 1)
    assert cg.layers[0].tolist() == [0, 1, 2]
    assert cg.layers[1].tolist() == [1]
    assert sorted(cg.children_of(0, 0).tolist()) == [0, 2]


def test_full_cg_triangle(triangle):
    cg = full_computational_graph(triangle, 0, 2)
    assert [ly.tolist() for ly in cg.layers[:2]] == [[0, 1, 2], [0, 1, 2]]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 10**6), st.integers(1, 3))
def test_full_cg_layers_are_balls(n, seed, L):
    r = np.random.default_rng(seed)
    g = random_graph(n, 0.2, r)
    v = int(r.integers(n))
    cg = full_computational_graph(g, v, L)
    for l in range(L + 1):
        assert set(cg.layers[l].tolist()) == set(bfs_ball(g, v, L - l).parent_ids.tolist())
    for l in range(L):
        # every parent is carried down as its own child slot
        assert np.array_equal(cg.layers[l][cg.self_index[l]], cg.layers[l + 1])


def test_sage_keeps_all_when_degree_below_fanout(rng):
    g = star_graph(2)
    cg = sage_computational_graph(g, 0, [3], rng)
    assert sorted(cg.children_of(0, 0).tolist()) == [1, 2]


def test_sage_exact_fanout(rng):
    g = star_graph(5)
    for _ in range(20):
        cg = sage_computational_graph(g, 0, [3], rng)
        ch = cg.children_of(0, 0)
        assert ch.size == 3 and np.unique(ch).size == 3


def test_sage_isolated_parent_has_no_children(rng):
    g = from_edges(2, [])
    cg = sage_computational_graph(g, 0, [2], rng)
    assert cg.children_of(0, 0).size == 0


def test_sage_subset_law():
    g = star_graph(3)
    r = np.random.default_rng(7)
    n = 10000
    counts = Counter(tuple(sorted(sage_computational_graph(g, 0, [2], r).children_of(0, 0).tolist()))
                     for _ in range(n))
    assert set(counts) == {(1, 2), (1, 3), (2, 3)}
    for c in counts.values():
        assert abs(c / n - 1 / 3) <= 0.02


@pytest.mark.parametrize("deg,k", [(3, 2), (5, 2), (6, 4)])
def test_sage_marginal_inclusion(deg, k):
    g = star_graph(deg)
    r = np.random.default_rng(deg * 10 + k)
    n = 10000
    hits = np.zeros(deg + 1)
    for _ in range(n):
        hits[sage_computational_graph(g, 0, [k], r).children_of(0, 0)] += 1
    assert np.all(np.abs(hits[1:] / n - k / deg) <= 0.02)


def test_sage_two_layers_fanout_per_parent(rng):
    g = random_graph(30, 0.3, rng)
    cg = sage_computational_graph(g, [0, 5], [4, 2], rng)
    for l, k in ((1, 4), (0, 2)):
        child, parent = cg.edges[l]
        counts = np.bincount(parent, minlength=cg.layers[l + 1].size)
        deg = g.degrees[cg.layers[l + 1]]
        assert np.array_equal(counts, np.minimum(deg, k))


def test_fastgcn_star_q_is_one_third():
    g = star_graph(3)
    owner, cand, q = fastgcn_probabilities(g, [0])
    assert cand.tolist() == [1, 2, 3]
    assert np.all(q == 1 / 3)


def test_fastgcn_single_neighbor_kept(rng):
    g = from_edges(2, [(0, 1)])
    cg = fastgcn_computational_graph(g, [0], [1], rng)
    assert cg.children_of(0, 0).tolist() == [1]
    assert cg.weights[0].tolist() == [1.0]


def test_fastgcn_all_kept_weights_equal_q(rng):
    g = from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2)])
    cg = fastgcn_computational_graph(g, [0], [10], rng)
    _, cand, q = fastgcn_probabilities(g, [0])
    assert np.allclose(cg.weights[0], q, rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10**6), st.integers(1, 6))
def test_fastgcn_weights_are_distributions(n, seed, k):
    r = np.random.default_rng(seed)
    g = random_graph(n, 0.25, r)
    batch = np.unique(r.integers(0, n, 3))
    cg = fastgcn_computational_graph(g, batch, [k, k], r)
    for l in range(2):
        _, parent = cg.edges[l]
        tot = np.bincount(parent, weights=cg.weights[l], minlength=cg.layers[l + 1].size)
        has = np.bincount(parent, minlength=cg.layers[l + 1].size) > 0
        assert np.allclose(tot[has], 1.0, atol=1e-9)
    assert sum(cg.empty_parents) == sum(
        int(np.sum(np.bincount(cg.edges[l][1], minlength=cg.layers[l + 1].size) == 0)) for l in range(2))


def test_fastgcn_draw_size(rng):
    g = random_graph(40, 0.3, rng)
    cg = fastgcn_computational_graph(g, [0, 1, 2], [5], rng)
    sampled = np.unique(cg.layers[0][cg.edges[0][0]])
    assert sampled.size <= 5


def test_shadow_overlap_fixture():
    # a - c - b: the two 1-balls share c
    g = from_edges(3, [(0, 1), (1, 2)])
    cg = shadow_extract(g, [0, 2], 1)
    assert cg.decoupled
    inputs = cg.layers[0].tolist()
    assert inputs.count(1) == 2
    assert len(inputs) == bfs_ball(g, 0, 1).node_count + bfs_ball(g, 2, 1).node_count
    # copies of each seed only feed that seed
    owner = cg.owner[0]
    child, parent = cg.edges[0]
    assert np.array_equal(owner[child], parent)


def test_shadow_single_seed_matches_full():
    g = random_graph(15, 0.25, np.random.default_rng(1))
    cg = shadow_extract(g, [3], 2)
    full = full_computational_graph(g, 3, 2)
    assert sorted(cg.layers[0].tolist()) == full.layers[0].tolist()


def test_shadow_path_no_sharing():
    g = path_graph(4)
    cg = shadow_extract(g, [0, 3], 1)
    assert cg.layers[0].tolist() == [0, 1, 2, 3]
    assert cg.owner[0].tolist() == [0, 0, 1, 1]


def test_dispatch_and_determinism():
    g = random_graph(30, 0.2, np.random.default_rng(2))
    for spec in (SamplerSpec(comp_sampler="sage", fanouts=(3,)), SamplerSpec(comp_sampler="fastgcn", fanouts=(4, 2)),
                 SamplerSpec(comp_sampler="shadow", shadow_inner="sage", fanouts=(2,))):
        a = build_computational_graph(g, [1, 4], spec, 2, np.random.default_rng(9))
        b = build_computational_graph(g, [1, 4], spec, 2, np.random.default_rng(9))
        assert a.num_layers == 2
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la, lb)
        for (ca, pa), (cb, pb) in zip(a.edges, b.edges):
            assert np.array_equal(ca, cb) and np.array_equal(pa, pb)


def test_draw_subgraph_modes(rng):
    g = path_graph(12)
    whole = draw_subgraph(g, SamplerSpec(), rng)
    assert whole.node_count == 12
    part = draw_subgraph(g, SamplerSpec(subgraph_sampler="bfs", subgraph_size=5), rng)
    assert part.node_count == 5
