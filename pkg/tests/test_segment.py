from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from motionbits.segment import (IdRegistry, SeedAssignment, assign_persistent_ids,
                                attractor_owner, drop_small_clusters, hard_markov_clustering,
                                iou_matrix, mcl, mcl_matrix, rasterize_nodes, relabel_sequential,
                                select_seeds, soft_label_propagation, smooth_labels)


def exact_propagation(W, seeds, R, r_star):
    """Rational-arithmetic oracle for B <- A B, B += Y every r* steps."""
    n = len(W)
    Wf = [[Fraction(x) for x in row] for row in W]
    deg = [sum(row) for row in Wf]
    A = [[Wf[i][j] / deg[i] if deg[i] else Fraction(0) for j in range(n)] for i in range(n)]
    C = len(seeds)
    Y = [[Fraction(int(seeds[c] == i)) for c in range(C)] for i in range(n)]
    B = [row[:] for row in Y]
    for r in range(1, R + 1):
        nxt = [[sum(A[i][k] * B[k][c] for k in range(n)) for c in range(C)] for i in range(n)]
        B = [nxt[i] if deg[i] else B[i] for i in range(n)]
        if r % r_star == 0:
            B = [[B[i][c] + Y[i][c] for c in range(C)] for i in range(n)]
    return np.array([[float(x) for x in row] for row in B])


@st.composite
def small_graphs(draw):
    n = draw(st.integers(2, 10))
    vals = draw(st.lists(st.sampled_from([0, 0, 0.25, 0.5, 1.0]), min_size=n * n, max_size=n * n))
    W = np.array(vals).reshape(n, n)
    W = np.maximum(W, W.T)
    np.fill_diagonal(W, 1.0)
    C = draw(st.integers(1, n))
    seeds = np.array(draw(st.permutations(range(n)))[:C])
    return W, seeds


@given(small_graphs(), st.integers(1, 12), st.integers(1, 4))
def test_propagation_matches_exact_oracle(g, R, r_star):
    W, seeds = g
    r_star = min(r_star, R)
    got = soft_label_propagation(sparse.csr_matrix(W), SeedAssignment(seeds, len(W)), R, r_star)
    want = exact_propagation(W, seeds, R, r_star)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_paint_does_not_cross_components():
    W = np.zeros((6, 6))
    W[:3, :3] = 1
    W[3:, 3:] = 1
    B = soft_label_propagation(sparse.csr_matrix(W), SeedAssignment(np.array([0, 4]), 6), 20, 5)
    assert np.all(B[:3, 1] == 0) and np.all(B[3:, 0] == 0)
    assert B[:3].argmax(1).tolist() == [0] * 3 and B[3:].argmax(1).tolist() == [1] * 3


def test_propagation_rejects_bad_params():
    with pytest.raises(ValueError):
        soft_label_propagation(sparse.eye(3), SeedAssignment(np.array([0]), 3), R=5, r_star=6)


def test_select_seeds_spread_and_count():
    active = np.zeros(100, bool)
    active[:50] = True
    s = select_seeds(active, 10, 8)
    assert s.C == 8 and active[s.seeds].all() and len(set(s.seeds.tolist())) == 8
    assert select_seeds(active, 10, 80).C == 50
    assert select_seeds(np.zeros(9, bool), 3, 2).C == 0


def block_affinity(sizes, leak=0.0):
    n = sum(sizes)
    W = np.full((n, n), leak)
    o = 0
    for s in sizes:
        W[o:o + s, o:o + s] = 1.0
        o += s
    return W


@pytest.mark.parametrize("sizes,leak", [([3, 4, 5], 0.0), ([4, 4], 0.02), ([2, 6, 3, 5], 0.01)])
def test_mcl_recovers_blocks(sizes, leak):
    W = block_affinity(sizes, leak)
    M = W / W.sum(0, keepdims=True)
    owner, converged, _ = mcl(M, inflation=2.0, max_iter=100)
    assert converged
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    for b in range(len(sizes)):
        assert len(set(owner[blocks == b].tolist())) == 1
    assert len(set(owner.tolist())) == len(sizes)


def test_mcl_column_stochastic_every_iteration():
    rng = np.random.default_rng(0)
    W = rng.uniform(0, 1, (15, 15))
    W = W + W.T
    M = W / W.sum(0, keepdims=True)
    sums = []
    mcl(M, 1.15, 2, max_iter=40, on_iter=lambda X: sums.append(np.abs(X.sum(0) - 1).max()))
    assert len(sums) > 0 and max(sums) < 1e-9


def test_mcl_rejects_bad_params():
    with pytest.raises(ValueError):
        mcl(np.eye(2), inflation=1.0)
    with pytest.raises(ValueError):
        mcl(np.eye(2), expansion=1)


def test_mcl_matrix_properties():
    B = np.array([[1.0, 0], [2.0, 0], [0, 3.0], [0, 0]])
    M, kept = mcl_matrix(B)
    assert kept.tolist() == [0, 1, 2]
    assert np.allclose(M.sum(0), 1)
    assert M[2, 0] == 0


def test_attractor_chains_and_cycles():
    # 0 -> 1 -> 1 ; 2 <-> 3 cycle resolves to 2
    M = np.zeros((4, 4))
    M[1, 0] = M[1, 1] = 1
    M[3, 2] = M[2, 3] = 1
    assert attractor_owner(M).tolist() == [1, 1, 2, 2]


def test_hard_clustering_two_groups():
    B = np.array([[1, 0.0], [0.9, 0.1], [0.1, 0.9], [0, 1], [0, 0]])
    labels, ok = hard_markov_clustering(B, inflation=2.0)
    assert ok and labels.tolist() == [1, 1, 2, 2, 0]


def test_drop_small_and_relabel():
    assert drop_small_clusters(np.array([3, 3, 5, 0, 7, 7, 7]), 2).tolist() == [1, 1, 0, 0, 2, 2, 2]
    assert relabel_sequential(np.array([0, 9, 4, 9])).tolist() == [0, 1, 2, 1]


def test_rasterize_nearest_node():
    lab = np.array([1, 0, 0, 2])
    out = rasterize_nodes(lab, 2, 10, 10)
    assert out[0, 0] == 1 and out[9, 9] == 2 and out[0, 9] == 0
    assert set(np.unique(out)) == {0, 1, 2}


def test_smooth_labels_removes_speckle():
    L = np.zeros((12, 12), int)
    L[2:9, 2:9] = 1
    L[0, 11] = 1
    out = smooth_labels(L)
    assert out[0, 11] == 0 and out[5, 5] == 1


def test_iou_matrix():
    a = np.array([[1, 1, 0, 2]])
    b = np.array([[1, 0, 0, 2]])
    iou, ia, ib = iou_matrix(a, b)
    assert ia.tolist() == [1, 2] and np.allclose(iou, [[0.5, 0], [0, 1]])


def test_persistent_ids_follow_overlap():
    reg = IdRegistry(next_id=8)
    prev = np.zeros((4, 4), int)
    prev[:2] = 7
    raster = np.zeros((4, 4), int)
    raster[:2] = 1
    raster[3] = 2
    out, mapping = assign_persistent_ids(raster, prev, reg)
    assert mapping == {1: 7, 2: 8} and reg.next_id == 9
    assert out[0, 0] == 7 and out[3, 0] == 8
