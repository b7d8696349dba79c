import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosearch.candidates import (
    BeliefState,
    CandidateSet,
    DbscanParams,
    build_belief,
    candidate_points,
    dbscan,
    extract_candidates,
    threshold_cells,
)

RES = 0.25


def brute_dbscan(points, eps, min_pts):
    """Density-reachability by transitive closure over the core graph.

    Clusters are ordered by their lowest core index; a border point goes to the
    cluster of its lowest-index core neighbour.
    """
    n = len(points)
    near = [[math.dist(points[i], points[j]) <= eps for j in range(n)] for i in range(n)]
    core = [sum(near[i]) >= min_pts for i in range(n)]
    reach = [[core[i] and core[j] and near[i][j] for j in range(n)] for i in range(n)]
    for i in range(n):
        reach[i][i] = core[i]
    for k, i, j in itertools.product(range(n), repeat=3):
        if reach[i][k] and reach[k][j]:
            reach[i][j] = True
    clusters = []
    owner = [-1] * n
    for i in range(n):
        if core[i] and owner[i] < 0:
            cid = len(clusters)
            clusters.append([])
            for j in range(n):
                if reach[i][j]:
                    owner[j] = cid
    for i in range(n):
        if not core[i]:
            cores = [j for j in range(n) if core[j] and near[i][j]]
            if cores:
                owner[i] = owner[cores[0]]
    for i in range(n):
        if owner[i] >= 0:
            clusters[owner[i]].append(i)
    return clusters


# --- threshold ----------------------------------------------------------------


def test_threshold_all_zero():
    assert threshold_cells(np.zeros((4, 4)), DbscanParams()) == []


def test_threshold_single_cell():
    v = np.zeros((4, 4))
    v[2, 1] = 0.01
    assert threshold_cells(v, DbscanParams()) == [(2, 1)]


def test_threshold_example():
    v = np.array([[1.0, 0.6, 0.4]])
    assert threshold_cells(v, DbscanParams(value_threshold=0.5)) == [(0, 0), (0, 1)]


def test_params_validated():
    with pytest.raises(ValueError):
        DbscanParams(eps=0)
    with pytest.raises(ValueError):
        DbscanParams(min_pts=0)
    with pytest.raises(ValueError):
        DbscanParams(value_threshold=0)


# --- dbscan -------------------------------------------------------------------


def test_dbscan_empty():
    assert dbscan([], 0.5, 3) == []


def test_dbscan_two_groups():
    eps = 0.5
    a = [(0.1 * i, 0.0) for i in range(5)]
    b = [(10.0 + 0.1 * i, 0.0) for i in range(5)]
    clusters = dbscan(a + b, eps, 3)
    assert clusters == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    assert clusters == brute_dbscan(a + b, eps, 3)


def test_dbscan_min_pts_one_has_no_noise():
    rng = random.Random(4)
    pts = [(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(30)]
    clusters = dbscan(pts, 0.3, 1)
    assert sorted(i for c in clusters for i in c) == list(range(30))


def test_dbscan_noise_dropped():
    pts = [(0, 0), (0.1, 0), (0.2, 0), (5, 5)]
    assert dbscan(pts, 0.15, 2) == [[0, 1, 2]]


def test_dbscan_matches_oracle_on_500_sets():
    rng = random.Random(2024)
    for _ in range(500):
        n = rng.randint(0, 50)
        eps = rng.uniform(0.2, 1.5)
        min_pts = rng.randint(1, 6)
        # mix of blobs and scatter so borders and noise both occur
        centres = [(rng.uniform(0, 8), rng.uniform(0, 8)) for _ in range(rng.randint(1, 4))]
        pts = []
        for _ in range(n):
            if rng.random() < 0.7:
                cx, cy = rng.choice(centres)
                pts.append((cx + rng.gauss(0, 0.5), cy + rng.gauss(0, 0.5)))
            else:
                pts.append((rng.uniform(0, 8), rng.uniform(0, 8)))
        assert dbscan(pts, eps, min_pts) == brute_dbscan(pts, eps, min_pts)


def test_dbscan_agrees_with_sklearn_on_cores_and_noise():
    sk = pytest.importorskip("sklearn.cluster")
    rng = np.random.default_rng(7)
    for _ in range(100):
        pts = rng.uniform(0, 5, size=(rng.integers(1, 50), 2))
        eps, min_pts = float(rng.uniform(0.2, 1.0)), int(rng.integers(1, 6))
        ours = dbscan(pts.tolist(), eps, min_pts)
        ref = sk.DBSCAN(eps=eps, min_samples=min_pts).fit(pts)
        labels = np.full(len(pts), -1)
        for k, members in enumerate(ours):
            labels[members] = k
        assert set(np.nonzero(labels < 0)[0]) == set(np.nonzero(ref.labels_ < 0)[0])
        cores = ref.core_sample_indices_
        # same core partition up to relabelling
        pairs = {(int(a), int(b)) for a, b in zip(labels[cores], ref.labels_[cores])}
        assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})


point_sets = st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), max_size=50)


@settings(max_examples=1000, deadline=None)
@given(pts=point_sets, eps=st.floats(0.05, 2.0), min_pts=st.integers(1, 6))
def test_dbscan_oracle_property(pts, eps, min_pts):
    assert dbscan(pts, eps, min_pts) == brute_dbscan(pts, eps, min_pts)


# --- candidate points ---------------------------------------------------------


def test_candidate_unique_max():
    v = np.zeros((3, 3))
    v[0, 0], v[1, 1] = 0.5, 0.9
    cells = [(0, 0), (1, 1)]
    cs = candidate_points([[0, 1]], cells, v, RES)
    assert cs.cells == [(1, 1)]
    assert cs.points == [(1.5 * RES, 1.5 * RES)]


def test_candidate_tie_row_major():
    v = np.zeros((3, 3))
    v[2, 0] = v[0, 2] = 0.7
    cs = candidate_points([[0, 1]], [(2, 0), (0, 2)], v, RES)
    assert cs.cells == [(0, 2)]


def test_k_clusters_k_candidates():
    v = np.ones((1, 9))
    cells = [(0, c) for c in range(9)]
    cs = candidate_points([[0, 1, 2], [3, 4, 5], [6, 7, 8]], cells, v, RES)
    assert len(cs) == 3


# --- belief -------------------------------------------------------------------


def _cands(cells):
    return CandidateSet([((c + 0.5) * RES, (r + 0.5) * RES) for r, c in cells], list(cells))


def test_belief_single():
    v = np.full((2, 2), 0.3)
    assert build_belief(_cands([(0, 0)]), v).probs == [1.0]


def test_belief_example():
    v = np.zeros((1, 2))
    v[0, 0], v[0, 1] = 0.6, 0.2
    assert build_belief(_cands([(0, 0), (0, 1)]), v).probs == pytest.approx([0.75, 0.25])


def test_belief_equal_and_zero_values_uniform():
    v = np.full((1, 3), 0.4)
    assert build_belief(_cands([(0, 0), (0, 1), (0, 2)]), v).probs == pytest.approx([1 / 3] * 3)
    assert build_belief(_cands([(0, 0), (0, 1)]), np.zeros((1, 3))).probs == [0.5, 0.5]


def test_belief_empty_and_length_checked():
    assert build_belief(CandidateSet(), np.zeros((2, 2))).probs == []
    with pytest.raises(ValueError):
        BeliefState(_cands([(0, 0)]), [0.5, 0.5])


rasters = st.integers(2, 12).flatmap(
    lambda n: st.lists(st.lists(st.floats(0, 1), min_size=n, max_size=n), min_size=2, max_size=n)
)


@settings(max_examples=1000, deadline=None)
@given(grid=rasters, scale=st.floats(0.01, 100), thr=st.floats(0.05, 1.0))
def test_candidates_and_belief_properties(grid, scale, thr):
    v = np.array(grid)
    params = DbscanParams(eps=0.5, min_pts=2, value_threshold=thr)
    cs = extract_candidates(v, params, RES)
    b = build_belief(cs, v)
    cells = threshold_cells(v, params)
    assert len(cs) <= len(cells)
    peak = v.max()
    for cell in cs.cells:
        assert v[cell] >= thr * peak
    if len(cs):
        assert all(p >= 0 for p in b.probs)
        assert abs(sum(b.probs) - 1.0) <= 1e-9
    # scale invariance of the relative threshold and of the belief
    cs2 = extract_candidates(v * scale, params, RES)
    b2 = build_belief(cs2, v * scale)
    if cs2.cells == cs.cells:
        assert b2.probs == pytest.approx(b.probs, abs=1e-9)
    else:
        # only rounding at the exact threshold may differ
        near = np.isclose(v * scale, thr * peak * scale, rtol=1e-12, atol=0)
        assert near.any()
