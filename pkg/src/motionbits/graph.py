"""Spatial-twist similarity graph: grid node sampling, local twist estimation,
Mahalanobis-Gaussian edges and temporal edge editing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import ParameterError
from .flowio import FlowField
from .kinematics import J2, RansacConfig, ransac_se2_batch
from .scene import twist_length_scale


@dataclass(frozen=True)
class NodeGrid:
    """Uniform side x side grid of nodes (row-major) with backward matches.

    ``P`` are node positions in frame t, ``Q = P + F_bwd(P)`` their positions in
    frame t-1, ``neighbors`` the k nearest other nodes of each node.
    """

    side: int
    width: int
    height: int
    P: np.ndarray
    Q: np.ndarray
    neighbors: np.ndarray

    @property
    def n(self):
        return self.side * self.side

    @property
    def spacing(self):
        return np.array([self.width / self.side, self.height / self.side])

    def nearest_node(self, pts):
        """Index of the grid node closest to each (x, y) point (clamped to the grid)."""
        pts = np.asarray(pts, dtype=float)
        col = np.clip(np.rint((pts[..., 0] + 0.5) * self.side / self.width - 0.5), 0, self.side - 1)
        row = np.clip(np.rint((pts[..., 1] + 0.5) * self.side / self.height - 0.5), 0, self.side - 1)
        return (row * self.side + col).astype(np.int64)


def grid_positions(width, height, side):
    """Cell-centre node positions in pixel coordinates, row-major."""
    xs = (np.arange(side) + 0.5) * width / side - 0.5
    ys = (np.arange(side) + 0.5) * height / side - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def knn_indices(P, k):
    """k nearest neighbours (self excluded), ties broken by node index."""
    n = len(P)
    if not 1 <= k < n:
        raise ParameterError(f"k must be in [1, {n - 1}], got {k}")
    q = min(n, k + 9)
    dist, idx = cKDTree(P).query(P, k=q)
    dist = np.round(dist, 9)
    self_hit = idx == np.arange(n)[:, None]
    dist = np.where(self_hit, np.inf, dist)
    order = np.lexsort((idx, dist), axis=-1)
    return np.take_along_axis(idx, order, axis=-1)[:, :k]


def _side_of(n):
    side = math.isqrt(int(n))
    if side * side != n or side < 2:
        raise ParameterError(f"node count must be a perfect square >= 4, got {n}")
    return side


def sample_nodes(flow_bwd: FlowField, n, k=5) -> NodeGrid:
    side = _side_of(n)
    if side > min(flow_bwd.width, flow_bwd.height):
        raise ParameterError(f"{side}x{side} grid does not fit a {flow_bwd.width}x{flow_bwd.height} canvas")
    P = grid_positions(flow_bwd.width, flow_bwd.height, side)
    Q = P + flow_bwd.sample(P[:, 0], P[:, 1])
    return NodeGrid(side, flow_bwd.width, flow_bwd.height, P, Q, knn_indices(P, k))


@dataclass(frozen=True)
class LocalTwists:
    """Per-node forward spatial twists (omega, vx, vy), neighbourhood covariances
    and motion flags."""

    twists: np.ndarray
    cov: np.ndarray
    moving: np.ndarray
    valid: np.ndarray
    displacement: np.ndarray


def spatial_twist_arrays(omega, v_node, p_node):
    """Array form of the planar shift rule ``v_s = v_node - omega J p``."""
    omega = np.asarray(omega, dtype=float)
    return np.asarray(v_node, dtype=float) - omega[..., None] * (np.asarray(p_node, dtype=float) @ J2.T)


def regularize_cov(cov, rel=1e-6, floor=1e-9):
    tr = np.trace(cov, axis1=-2, axis2=-1)
    lam = np.maximum(rel * tr / cov.shape[-1], floor)
    return cov + lam[..., None, None] * np.eye(cov.shape[-1])


def estimate_local_twists(grid: NodeGrid, ransac=RansacConfig(), motion_eps=0.5,
                          gate="displacement") -> LocalTwists:
    """Fit a rigid motion to every node's neighbourhood N* = N + {self}.

    The fit maps P to Q (backward, t -> t-1); the stored twist is that of the
    inverse, i.e. the forward motion t-1 -> t.

    ``gate`` picks the moving test: ``"twist"`` thresholds the composite twist
    norm (omega scaled by the image half-diagonal); ``"displacement"``
    thresholds the RMS forward displacement of the neighbourhood under the
    fitted motion, which does not amplify rotation noise by the distance to
    the image origin.
    """
    if grid.neighbors.shape[1] < 2:
        raise ParameterError("k must be >= 2")
    nbh = np.concatenate([np.arange(grid.n)[:, None], grid.neighbors], axis=1)
    PN, QN = grid.P[nbh], grid.Q[nbh]
    fit = ransac_se2_batch(PN, QN, ransac, anchor=0)
    valid = fit["valid"] & np.isfinite(fit["theta"]) & np.all(np.isfinite(fit["t"]), axis=1)

    # inverse of the backward fit: R_f = R_b^T, t_f = -R_b^T t_b
    omega = -fit["theta"]
    c, s = np.cos(omega), np.sin(omega)
    tb = fit["t"]
    t_f = -np.stack([c * tb[:, 0] - s * tb[:, 1], s * tb[:, 0] + c * tb[:, 1]], axis=1)
    # velocity of the node under the unit-time twist of this motion, then shifted
    v_node = t_f + omega[:, None] * (grid.P @ J2.T)
    v_s = spatial_twist_arrays(omega, v_node, grid.P)
    twists = np.column_stack([omega, v_s])
    twists[~valid] = 0.0

    # forward displacement of the neighbourhood points under the fitted motion
    qx, qy = QN[..., 0], QN[..., 1]
    fx = c[:, None] * qx - s[:, None] * qy + t_f[:, 0, None] - qx
    fy = s[:, None] * qx + c[:, None] * qy + t_f[:, 1, None] - qy
    disp = np.sqrt((fx ** 2 + fy ** 2).mean(axis=1))
    disp[~valid] = 0.0

    if gate == "twist":
        L = twist_length_scale(grid.width, grid.height)
        mag = np.sqrt((twists[:, 0] * L) ** 2 + twists[:, 1] ** 2 + twists[:, 2] ** 2)
    elif gate == "displacement":
        mag = disp
    else:
        raise ParameterError(f"unknown motion gate {gate!r}")
    moving = valid & (mag > motion_eps)

    samples = twists[nbh]  # (n, k+1, 3)
    centred = samples - samples.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / (samples.shape[1] - 1)
    return LocalTwists(twists, cov, moving, valid, disp)


def mahalanobis_kernel(dv, cov):
    """Return (Mdist, exp(-Mdist^2 / 2)) for twist differences ``dv`` under ``cov``."""
    dv = np.asarray(dv, dtype=float)
    sol = np.linalg.solve(cov, dv[..., None])[..., 0]
    d2 = np.maximum((dv * sol).sum(axis=-1), 0.0)
    return np.sqrt(d2), np.exp(-0.5 * d2)


@dataclass
class TemporalPrior:
    """Prior information projected onto the current grid.

    ``node_labels``: (h, n) persistent label of each node in each projected
    prior mask. ``prev_weights``: edited affinity of the previous graph.
    ``back_index``: previous-frame node nearest to each node's backward match.
    """

    node_labels: np.ndarray
    prev_weights: sparse.csr_matrix | None = None
    back_index: np.ndarray | None = None


@dataclass
class MotionGraph:
    P: np.ndarray
    twists: np.ndarray
    cov: np.ndarray
    moving: np.ndarray
    active: np.ndarray
    W: sparse.csr_matrix
    side: int
    width: int
    height: int
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.P)

    def grid_coords(self):
        idx = np.arange(self.n)
        return idx // self.side, idx % self.side

    def to_json(self):
        W = sparse.triu(self.W, k=1).tocoo()
        return json.dumps({
            "side": self.side, "width": self.width, "height": self.height,
            "nodes": [{"p": p.tolist(), "twist": tw.tolist(), "moving": bool(m), "active": bool(a)}
                      for p, tw, m, a in zip(self.P, self.twists, self.moving, self.active)],
            "edges": [[int(i), int(j), float(w)] for i, j, w in zip(W.row, W.col, W.data)],
        })


def build_twist_sim_graph(local: LocalTwists, grid: NodeGrid, prior: TemporalPrior | None = None,
                          cov_reg=1e-6, weight_floor=1e-12) -> MotionGraph:
    """Symmetric affinity over kNN pairs with temporal must/cannot-link editing.

    Nodes take part when moving now or must-linked to a neighbour (same
    nonzero label in every projected prior); every participating node has a
    unit self-loop. Directed kernel values are
    symmetrised with max; weights below ``weight_floor`` are dropped.
    """
    n = grid.n
    k = grid.neighbors.shape[1]
    rows = np.repeat(np.arange(n), k)
    cols = grid.neighbors.ravel()
    cov = regularize_cov(local.cov, rel=cov_reg)
    dv = local.twists[cols] - local.twists[rows]
    _, w = mahalanobis_kernel(dv, cov[rows])

    labels_hist = None
    if prior is not None and prior.node_labels.size:
        labels_hist = np.asarray(prior.node_labels)

    # symmetrise (max of directed weights) over undirected pairs
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    key = lo * n + hi
    ukey, inv = np.unique(key, return_inverse=True)
    wu = np.zeros(len(ukey))
    np.maximum.at(wu, inv, w)
    u, v = ukey // n, ukey % n

    active = local.moving.copy()
    must = cannot = np.zeros(len(u), dtype=bool)
    if labels_hist is not None:
        lu, lv = labels_hist[:, u], labels_hist[:, v]
        must = np.all((lu == lv) & (lu > 0), axis=0)
        cannot = np.any((lu != lv) & (lu > 0) & (lv > 0), axis=0)
        # static nodes stay in the graph only through a must-link, which keeps
        # bodies that stopped but not one-off labelling errors left behind
        active[u[must]] = True
        active[v[must]] = True
        if prior.prev_weights is not None and prior.back_index is not None and must.any():
            bu, bv = prior.back_index[u[must]], prior.back_index[v[must]]
            prev = np.asarray(prior.prev_weights[bu, bv]).ravel()
            prev = np.where(bu == bv, 1.0, prev)
            wu[must] = np.maximum(wu[must], prev)
    keep = active[u] & active[v] & ~cannot
    n_must, n_cannot = int((must & keep).sum()), int((cannot & active[u] & active[v]).sum())

    keep &= wu >= weight_floor
    u, v, wk = u[keep], v[keep], wu[keep]
    a_idx = np.flatnonzero(active)
    W = sparse.coo_matrix((np.concatenate([wk, wk, np.ones(len(a_idx))]),
                           (np.concatenate([u, v, a_idx]), np.concatenate([v, u, a_idx]))),
                          shape=(n, n)).tocsr()
    stats = {"edges": int(len(wk)), "must_link": n_must, "cannot_link": n_cannot,
             "moving": int(local.moving.sum()), "active": int(active.sum())}
    return MotionGraph(grid.P, local.twists, cov, local.moving, active, W, grid.side,
                       grid.width, grid.height, stats)
