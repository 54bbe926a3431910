"""Soft label propagation, hard Markov clustering and rasterisation of node
clusters into persistent-ID label maps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class SeedAssignment:
    seeds: np.ndarray  # node index of each class, class c -> seeds[c]
    n: int

    @property
    def C(self):
        return len(self.seeds)

    def Y(self):
        Y = np.zeros((self.n, self.C))
        Y[self.seeds, np.arange(self.C)] = 1.0
        return Y


def select_seeds(active, side, C) -> SeedAssignment:
    """Pick ``C`` seeds spread uniformly over the grid positions of active nodes.

    Candidates come from the coarsest sub-lattice (stride s, centred offset)
    holding at least C active nodes; C of them are then taken at even spacing
    in row-major order.
    """
    active = np.asarray(active, dtype=bool)
    idx = np.flatnonzero(active)
    m = len(idx)
    if m == 0 or C <= 0:
        return SeedAssignment(np.zeros(0, dtype=np.int64), len(active))
    if C >= m:
        return SeedAssignment(idx.astype(np.int64), len(active))
    r, c = idx // side, idx % side
    s = max(1, int(np.sqrt(m / C)))
    while True:
        cand = idx[(r % s == s // 2) & (c % s == s // 2)]
        if len(cand) >= C or s == 1:
            break
        s -= 1
    pick = (np.arange(C) * len(cand)) // C
    return SeedAssignment(cand[pick].astype(np.int64), len(active))


def transition_matrix(W, active=None):
    """Row-stochastic ``D^-1 W`` restricted to active nodes; zero-degree rows stay zero."""
    W = sparse.csr_matrix(W, dtype=float)
    if active is not None:
        mask = sparse.diags(np.asarray(active, dtype=float))
        W = (mask @ W @ mask).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    return (sparse.diags(inv) @ W).tocsr(), deg > 0


def soft_label_propagation(W, seeds: SeedAssignment, R=100, r_star=5, active=None):
    """Diffuse seed paint: ``B <- A B`` each step, ``B <- B + Y`` every r* steps.

    Rows of zero-degree nodes are left unchanged. Work is done per connected
    component, since paint cannot cross components.
    """
    if R < 1 or not 1 <= r_star <= R:
        raise ValueError("need R >= 1 and 1 <= r* <= R")
    n = seeds.n
    Y = seeds.Y()
    B = Y.copy()
    if seeds.C == 0:
        return B
    A, has_deg = transition_matrix(W, active)
    ncomp, comp = connected_components(A, directed=False)
    seed_comp = comp[seeds.seeds]
    for cc in np.unique(seed_comp):
        nodes = np.flatnonzero(comp == cc)
        cls = np.flatnonzero(seed_comp == cc)
        Ac = A[nodes][:, nodes]
        Yc = Y[np.ix_(nodes, cls)]
        Bc = Yc.copy()
        moving_rows = has_deg[nodes]
        for r in range(1, R + 1):
            nxt = Ac @ Bc
            Bc = np.where(moving_rows[:, None], nxt, Bc)
            if r % r_star == 0:
                Bc = Bc + Yc
        B[np.ix_(nodes, cls)] = Bc
    return B


def mcl_matrix(B):
    """Column-stochastic MCL input from an embedding: row-l2-normalise, X = B B^T,
    unit self-loops, column-normalise. Zero rows are excluded; returns (M, kept)."""
    B = np.asarray(B, dtype=float)
    norms = np.linalg.norm(B, axis=1)
    kept = np.flatnonzero(norms > 0)
    Bh = B[kept] / norms[kept, None]
    X = Bh @ Bh.T
    np.fill_diagonal(X, 1.0)
    return X / X.sum(axis=0, keepdims=True), kept


def mcl(M, inflation=1.15, expansion=2, max_iter=200, tol=1e-6, on_iter=None):
    """Markov clustering on a column-stochastic matrix.

    Returns (owner, converged, iterations), where ``owner[j]`` is the attractor
    node that column j is assigned to.
    """
    if inflation <= 1 or expansion < 2 or int(expansion) != expansion:
        raise ValueError("need inflation > 1 and integer expansion >= 2")
    M = np.array(M, dtype=float)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = np.linalg.matrix_power(M, int(expansion))
        nxt = np.power(np.maximum(nxt, 0.0), inflation)
        nxt /= nxt.sum(axis=0, keepdims=True)
        if on_iter is not None:
            on_iter(nxt)
        delta = np.abs(nxt - M).max()
        M = nxt
        if delta < tol:
            converged = True
            break
    return attractor_owner(M), converged, it


def attractor_owner(M):
    """Assign each node to the row with the largest incoming probability (ties to the
    lowest index), then follow attractor chains so attractors that feed each other
    share one root."""
    owner = np.argmax(M, axis=0)
    root = owner.copy()
    for _ in range(len(owner)):
        nxt = owner[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    # cycles between attractors: take the smallest index on the cycle
    cycle_min = {}
    for j in np.flatnonzero(owner[root] != root):
        a = int(root[j])
        if a not in cycle_min:
            cyc = [a]
            b = int(owner[a])
            while b != a:
                cyc.append(b)
                b = int(owner[b])
            for c in cyc:
                cycle_min[c] = min(cyc)
        root[j] = cycle_min[a]
    return root


def hard_markov_clustering(B, inflation=1.15, expansion=2, max_iter=200, tol=1e-6):
    """Cluster nodes by MCL on the cosine similarity of their soft embeddings.

    Returns (labels, converged): labels are 1..K in order of first node, 0 for
    nodes with an all-zero embedding. The similarity graph is split into its
    connected components first; MCL never mixes components.
    """
    B = np.asarray(B, dtype=float)
    n = len(B)
    labels = np.zeros(n, dtype=np.int64)
    norms = np.linalg.norm(B, axis=1)
    kept = np.flatnonzero(norms > 0)
    if len(kept) == 0:
        return labels, True
    # nodes sharing any class are linked: components of the node-class bipartite graph
    nz = sparse.csr_matrix(B[kept] > 0)
    bip = sparse.bmat([[None, nz], [nz.T, None]])
    _, comp = connected_components(bip, directed=False)
    comp = comp[: len(kept)]
    roots = np.empty(len(kept), dtype=np.int64)
    converged = True
    for cc in np.unique(comp):
        sel = np.flatnonzero(comp == cc)
        M, _ = mcl_matrix(B[kept[sel]])
        owner, ok, _ = mcl(M, inflation, expansion, max_iter, tol)
        converged &= ok
        roots[sel] = kept[sel[owner]]
    if not converged:
        warnings.warn("Markov clustering did not converge; returning current clustering", stacklevel=2)
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    labels[kept] = rank[inv] + 1
    return labels, converged


def drop_small_clusters(labels, min_size):
    labels = np.asarray(labels).copy()
    if min_size <= 1:
        return labels
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    for i in ids[counts < min_size]:
        labels[labels == i] = 0
    return relabel_sequential(labels)


def relabel_sequential(labels):
    labels = np.asarray(labels)
    out = np.zeros_like(labels)
    nz = labels > 0
    if nz.any():
        _, first, inv = np.unique(labels[nz], return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        out[nz] = rank[inv] + 1
    return out


# ---------------------------------------------------------------------------
# rasterisation and persistent IDs


def rasterize_nodes(node_labels, side, width, height, radius_cells=1.5, smooth=False):
    """Per-pixel cluster ID of the nearest grid node within ``radius_cells`` cells."""
    node_labels = np.asarray(node_labels).reshape(side, side)
    sx, sy = width / side, height / side
    ys, xs = np.mgrid[0:height, 0:width]
    col = np.clip(np.rint((xs + 0.5) / sx - 0.5), 0, side - 1).astype(int)
    row = np.clip(np.rint((ys + 0.5) / sy - 0.5), 0, side - 1).astype(int)
    nx = (col + 0.5) * sx - 0.5
    ny = (row + 0.5) * sy - 0.5
    near = np.hypot((xs - nx) / sx, (ys - ny) / sy) <= radius_cells
    out = np.where(near, node_labels[row, col], 0)
    if smooth:
        out = smooth_labels(out)
    return out


def smooth_labels(labels):
    """3x3 open-then-close per label; overlaps go to the lower ID."""
    out = np.zeros_like(labels)
    st = np.ones((3, 3), dtype=bool)
    for i in np.unique(labels[labels > 0])[::-1]:
        m = ndimage.binary_closing(ndimage.binary_opening(labels == i, st), st)
        out[m] = i
    return out


def iou_matrix(a, b):
    """IoU between every nonzero label of ``a`` (rows) and ``b`` (cols)."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    ia = np.unique(a[a > 0])
    ib = np.unique(b[b > 0])
    if len(ia) == 0 or len(ib) == 0:
        return np.zeros((len(ia), len(ib))), ia, ib
    ra = np.searchsorted(ia, a)
    rb = np.searchsorted(ib, b)
    both = (a > 0) & (b > 0)
    inter = np.zeros((len(ia), len(ib)))
    np.add.at(inter, (ra[both], rb[both]), 1)
    area_a = np.bincount(ra[a > 0], minlength=len(ia)).astype(float)
    area_b = np.bincount(rb[b > 0], minlength=len(ib)).astype(float)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union, ia, ib


@dataclass
class IdRegistry:
    """Hands out persistent MotionBit IDs across frames."""

    next_id: int = 1

    def fresh(self):
        i = self.next_id
        self.next_id += 1
        return i


def assign_persistent_ids(raster, prev_warped, registry: IdRegistry):
    """Map frame-local cluster IDs to persistent IDs by Hungarian matching on IoU
    against the forward-warped previous label map; unmatched clusters get fresh IDs."""
    raster = np.asarray(raster)
    out = np.zeros_like(raster)
    local_ids = np.unique(raster[raster > 0])
    mapping = {}
    if prev_warped is not None and len(local_ids):
        iou, ia, ib = iou_matrix(raster, prev_warped)
        if iou.size:
            r, c = linear_sum_assignment(1.0 - iou)
            for i, j in zip(r, c):
                if iou[i, j] > 0:
                    mapping[int(ia[i])] = int(ib[j])
    for i in local_ids:
        i = int(i)
        if i not in mapping:
            mapping[i] = registry.fresh()
        else:
            registry.next_id = max(registry.next_id, mapping[i] + 1)
        out[raster == i] = mapping[i]
    return out, mapping


def rasterize_masks(node_labels, side, width, height, prev_warped=None, registry=None,
                    radius_cells=1.5, smooth=False):
    raster = rasterize_nodes(node_labels, side, width, height, radius_cells, smooth)
    registry = IdRegistry() if registry is None else registry
    out, mapping = assign_persistent_ids(raster, prev_warped, registry)
    return out, mapping
