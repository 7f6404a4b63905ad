import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from gnnlab.graph import bfs_ball, from_edges
from gnnlab.limits import (
    CensusDistribution,
    ball_signature,
    canonical_form,
    d_loc,
    degree_normalized_estimate,
    disjoint_ball_probability,
    er_convergence,
    galton_watson_census,
    gen_config_model,
    gen_erdos_renyi,
    gen_pref_attachment,
    gen_regular_ring,
    gen_two_community,
    negsample_estimate,
    neighborhood_census,
    poisson_depth1_reference,
    quantize_features,
    star_ball,
    tv_distance,
    uniform_integrability_profile,
    write_census_tsv,
    write_convergence_csv,
)

from conftest import ball_edges, cycle_graph, path_graph, random_graph, rooted_isomorphic, star_graph


def sig(g, v, k, **kw):
    return ball_signature(bfs_ball(g, v, k), **kw)


# ---------------------------------------------------------------- signatures


def test_triangle_roots_share_signature(triangle):
    assert sig(triangle, 0, 1) == sig(triangle, 2, 1)
    two = from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    assert sig(two, 0, 2) == sig(two, 4, 2)


def test_root_degree_distinguishes():
    p = path_graph(3)
    assert sig(p, 0, 1) != sig(p, 1, 1)


def test_truncation_hides_path_length():
    assert sig(path_graph(4), 0, 3) == sig(path_graph(5), 0, 3)
    assert sig(path_graph(4), 0, 4) != sig(path_graph(5), 0, 4)


def test_radius_is_part_of_signature():
    g = from_edges(1, [])
    assert sig(g, 0, 0) != sig(g, 0, 1)


def test_small_balls_are_exact_large_are_flagged():
    assert sig(cycle_graph(10), 0, 2).is_exact
    s = sig(star_graph(20), 0, 1)
    assert not s.is_exact and len(s.hex) == 16


def test_exact_form_needs_individualization():
    # 6-cycle and two triangles are both 2-regular: refinement alone cannot split them
    c6 = [[1, 5], [0, 2], [1, 3], [2, 4], [3, 5], [4, 0]]
    tt = [[1, 2], [0, 2], [0, 1], [4, 5], [3, 5], [3, 4]]
    assert canonical_form(c6, [0] * 6) != canonical_form(tt, [0] * 6)


def test_attributed_signatures_see_features():
    g1 = from_edges(2, [(0, 1)], features=[[0.0], [0.0]])
    g2 = from_edges(2, [(0, 1)], features=[[0.0], [1.0]])
    q1 = quantize_features(g1.features)
    q2 = quantize_features(g2.features)
    from dataclasses import replace

    b1 = replace(bfs_ball(g1, 0, 1), features=q1)
    b2 = replace(bfs_ball(g2, 0, 1), features=q2)
    assert ball_signature(b1) == ball_signature(b2)
    assert ball_signature(b1, attributed=True) != ball_signature(b2, attributed=True)


def test_quantize_features_bins():
    q = quantize_features(np.array([[0.0], [0.5], [1.0]]), bits=1)
    assert q.ravel().tolist() == [0, 1, 1]
    assert quantize_features(np.ones((3, 2))).max() == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), st.integers(1, 3))
def test_signature_soundness_against_brute_force(n, seed, k):
    r = np.random.default_rng(seed)
    g = random_graph(n, 0.4, r)
    e = g.edge_array().tolist()
    # relabel to get an isomorphic copy
    perm = r.permutation(n)
    h = from_edges(n, [(perm[a], perm[b]) for a, b in e])
    for v in range(n):
        assert sig(g, v, k) == sig(h, int(perm[v]), k)
    u, v = r.integers(0, n, 2)
    iso = rooted_isomorphic(ball_edges(n, e, int(u), k), ball_edges(n, e, int(v), k))
    assert iso == (sig(g, int(u), k) == sig(g, int(v), k))


# -------------------------------------------------------------------- census


def test_triangle_census(triangle):
    c = neighborhood_census(triangle, 1)
    assert list(c.probs.values()) == [1.0]
    assert c.samples == 3


def test_path_census():
    c = neighborhood_census(path_graph(3), 1)
    assert sorted(c.probs.values()) == pytest.approx([1 / 3, 2 / 3])
    end = sig(path_graph(3), 0, 1).hash
    assert c.probs[end] == pytest.approx(2 / 3)


def test_cubic_census_point_mass():
    k4 = from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    assert len(neighborhood_census(k4, 1).probs) == 1
    petersen = [(i, (i + 1) % 5) for i in range(5)] + [(i, i + 5) for i in range(5)] + \
        [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    assert len(neighborhood_census(from_edges(10, petersen), 1).probs) == 1


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_vertex_transitive_point_mass(k):
    for g in (cycle_graph(9), gen_regular_ring(12, 4)):
        assert len(neighborhood_census(g, k).probs) == 1


def test_census_cap_samples(rng):
    g = gen_erdos_renyi(300, 3, rng)
    c = neighborhood_census(g, 1, cap=100, rng=rng)
    assert c.samples == 100
    assert sum(c.probs.values()) == pytest.approx(1.0, abs=1e-9)


def test_census_rejects_negative_radius(triangle):
    with pytest.raises(ValueError):
        neighborhood_census(triangle, -1)


def test_census_distribution_validates():
    with pytest.raises(ValueError):
        CensusDistribution(1, {1: 0.5, 2: 0.4}, 2)


def test_tv_examples():
    a = CensusDistribution(1, {1: 0.5, 2: 0.5}, 2)
    b = CensusDistribution(1, {1: 1.0}, 1)
    c = CensusDistribution(1, {3: 1.0}, 1)
    assert tv_distance(a, a) == 0
    assert tv_distance(b, c) == 1
    assert tv_distance(a, b) == 0.5
    with pytest.raises(ValueError, match="radii"):
        tv_distance(a, CensusDistribution(2, {1: 1.0}, 1))


def test_census_tsv(tmp_path, triangle):
    p = write_census_tsv(neighborhood_census(triangle, 1), tmp_path / "c.tsv")
    lines = p.read_text().splitlines()
    assert len(lines) == 1
    h, prob = lines[0].split("\t")
    assert len(h) == 16 and float(prob) == 1.0


# --------------------------------------------------------------------- d_loc


def test_d_loc_identical():
    g = cycle_graph(6)
    d = d_loc(bfs_ball(g, 0, 3), bfs_ball(g, 3, 3), 3)
    assert d.value == 0 and d.bounded and d.bound == 0.25 and d.exact


def test_d_loc_degree_one_vs_two():
    p = path_graph(3)
    d = d_loc(bfs_ball(p, 0, 2), bfs_ball(p, 1, 2), 2)
    assert d.value == 0.5 and d.first_discrepancy == 1


def test_d_loc_paths():
    d = d_loc(bfs_ball(path_graph(4), 0, 5), bfs_ball(path_graph(5), 0, 5), 5)
    assert d.value == pytest.approx(0.2) and d.first_discrepancy == 4


def test_d_loc_requires_radius():
    p = path_graph(3)
    with pytest.raises(ValueError):
        d_loc(bfs_ball(p, 0, 1), bfs_ball(p, 1, 2), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 10**6))
def test_d_loc_symmetric_and_in_range(n, seed):
    r = np.random.default_rng(seed)
    g = random_graph(n, 0.35, r)
    u, v = (int(x) for x in r.integers(0, n, 2))
    a, b = bfs_ball(g, u, 3), bfs_ball(g, v, 3)
    d1, d2 = d_loc(a, b, 3), d_loc(b, a, 3)
    assert d1.value == d2.value
    assert d1.value in {0.0, 1.0, 0.5, 1 / 3, 0.25}
    assert d_loc(a, a, 3).value == 0


# ---------------------------------------------------------------- generators


def test_er_mean_degree():
    means = [gen_erdos_renyi(1000, 3, np.random.default_rng(s)).degrees.mean() for s in range(5)]
    assert abs(np.mean(means) - 999 * 3 / 1000) <= 0.2


def test_er_is_simple(rng):
    g = gen_erdos_renyi(200, 4, rng)
    A = g.adjacency.toarray()
    assert np.all(np.diag(A) == 0) and np.array_equal(A, A.T) and A.max() == 1


def test_config_model_degree_two():
    g = gen_config_model([2] * 1000, np.random.default_rng(0))
    assert np.mean(g.degrees == 2) >= 0.95
    assert g.degrees.max() <= 2


def test_config_model_odd_sum(rng):
    with pytest.raises(ValueError, match="odd"):
        gen_config_model([1, 1, 1], rng)


def test_pref_attachment_tree(rng):
    g = gen_pref_attachment(5, 1, rng)
    assert g.num_edges == 4
    assert neighborhood_census(g, 4).samples == 5
    assert bfs_ball(g, 0, 5).node_count == 5  # connected


def test_pref_attachment_edge_count(rng):
    g = gen_pref_attachment(100, 2, rng)
    assert g.num_edges <= 2 * 99 and g.num_edges >= 99


def test_two_community_labels(rng):
    g = gen_two_community(40, 0.5, 0.0, rng)
    a, b = g.edge_array().T
    assert np.all(g.labels[a] == g.labels[b])
    assert set(g.labels.tolist()) == {0, 1}


def test_regular_ring():
    g = gen_regular_ring(10, 4)
    assert np.all(g.degrees == 4)


# ---------------------------------------------------------------- references


def test_poisson_reference():
    ref = poisson_depth1_reference(3.0)
    assert ref.probs[ball_signature(star_ball(0)).hash] == pytest.approx(math.exp(-3), abs=1e-12)
    assert math.exp(-3) == pytest.approx(0.049787, abs=1e-6)
    assert sum(ref.probs.values()) == pytest.approx(1.0, abs=1e-12)
    tiny = poisson_depth1_reference(1e-12)
    assert tiny.probs[ball_signature(star_ball(0)).hash] == pytest.approx(1.0)


def test_poisson_reference_tail_folded():
    ref = poisson_depth1_reference(3.0, max_deg=4)
    assert len(ref.probs) == 5
    tail = ref.probs[ball_signature(star_ball(4)).hash]
    assert tail == pytest.approx(1 - sum(math.exp(-3) * 3**k / math.factorial(k) for k in range(4)))


def test_galton_watson_depth1_matches_poisson():
    c, se = galton_watson_census(2.0, 1, 20000, np.random.default_rng(0))
    ref = poisson_depth1_reference(2.0)
    for h, p in ref.probs.items():
        if p > 0.01:
            assert abs(c.probs.get(h, 0.0) - p) < 5 * math.sqrt(p * (1 - p) / 20000)
    assert 0 < se < 0.01


def test_er_convergence_rows(tmp_path):
    rows = er_convergence(3.0, [200], [0, 1])
    assert [r["n"] for r in rows] == [200, 200] and all(0 < r["tv_distance"] < 1 for r in rows)
    p = write_convergence_csv(rows, tmp_path / "c.csv")
    assert p.read_text().splitlines()[0] == "n,seed,k,tv_distance"


# ---------------------------------------------------------------- estimators


def test_negsample_estimate_examples(rng):
    g = path_graph(10)
    m, se = negsample_estimate(g, np.zeros((10, 2)), 500, rng)
    assert m == 0.5 and se == 0
    m, _ = negsample_estimate(g, np.ones((10, 1)), 500, rng)
    assert m == pytest.approx(expit(1.0), abs=1e-15)
    assert expit(1.0) == pytest.approx(0.731059, abs=1e-6)


def test_negsample_estimate_two_communities(rng):
    g = gen_two_community(200, 0.05, 0.01, rng)
    z = np.where(g.labels == 0, 1.0, -1.0)[:, None]
    m, se = negsample_estimate(g, lambda _: z, 20000, rng)
    assert abs(m - 0.5 * (expit(1) + expit(-1))) < 5 * se + 1e-12


def test_degree_normalized_examples():
    s = star_graph(3)
    assert degree_normalized_estimate(s, np.ones(4)) == 1.0
    assert degree_normalized_estimate(s, np.array([1.0, 0, 0, 0])) == pytest.approx(0.5)
    assert degree_normalized_estimate(s, 2.5) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        degree_normalized_estimate(from_edges(3, []), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10**6))
def test_degree_normalized_constant_one(n, seed):
    g = random_graph(n, 0.3, np.random.default_rng(seed))
    if g.num_edges:
        assert degree_normalized_estimate(g, np.ones(n)) == 1.0


def test_ui_profile_examples():
    ring = gen_regular_ring(12, 4)
    cubic = from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    for k in range(3):
        assert uniform_integrability_profile(cubic, k, [4])[4] == 0
        assert uniform_integrability_profile(cubic, k, [2])[2] == 1
    assert uniform_integrability_profile(ring, 1, [4, 3]) == {4: 0.0, 3: 1.0}
    assert uniform_integrability_profile(star_graph(9), 1, [5])[5] == 1.0
    assert uniform_integrability_profile(star_graph(9), 0, [5])[5] == 0.1


def test_disjoint_ball_examples(rng):
    k10 = from_edges(10, [(i, j) for i in range(10) for j in range(i + 1, 10)])
    assert disjoint_ball_probability(k10, 2, 1, None)[0] == 0
    matching = from_edges(20, [(2 * i, 2 * i + 1) for i in range(10)])
    p, bound = disjoint_ball_probability(matching, 2, 1, None)
    assert p == pytest.approx(18 / 19, abs=1e-15)
    assert bound == pytest.approx(4 * 1 / 20)
    assert disjoint_ball_probability(k10, 1, 3, 10, rng)[0] == 1.0
    mc, _ = disjoint_ball_probability(matching, 2, 1, 4000, rng)
    assert abs(mc - 18 / 19) < 0.015
