"""Rigid-body kinematics: SE(2)/SE(3) types, adjoints, twist re-expression and
robust planar motion fitting (weighted Kabsch + RANSAC).

Planar twists are stored about the image origin, so every point of one rigid
body carries the same ``Twist2``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, InvalidTransformError, NoModelError

# planar cross-product operator: J @ p rotates p by +90 degrees
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

_ORTHO_TOL = 1e-9


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew(p):
    """3x3 skew-symmetric matrix ``[p]`` so that ``[p] @ x == cross(p, x)``."""
    x, y, z = np.asarray(p, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _check_rotation(R):
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    if R.shape != (d, d) or not np.all(np.isfinite(R)):
        raise InvalidTransformError("rotation must be a finite square matrix")
    if np.abs(R.T @ R - np.eye(d)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise InvalidTransformError("rotation matrix is not orthonormal with det +1")
    return R


@dataclass(frozen=True)
class Twist2:
    """Planar twist: angular rate (rad/frame) and linear velocity (px/frame) about the image origin."""

    omega: float
    v: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(2)
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "v", v)
        if not (np.isfinite(self.omega) and np.all(np.isfinite(v))):
            raise ValueError("twist components must be finite")

    def as_array(self):
        return np.array([self.omega, self.v[0], self.v[1]])

    def velocity_at(self, p):
        """Linear velocity of the point ``p`` moving with this twist."""
        p = np.asarray(p, dtype=float)
        return self.v + self.omega * (p @ J2.T)

    def norm(self, length_scale=1.0):
        """Composite magnitude with omega converted to pixels by ``length_scale``."""
        return float(np.hypot(self.omega * length_scale, np.hypot(*self.v)))


@dataclass(frozen=True)
class Twist3:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "v", v)

    def as_array(self):
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True)
class RigidTransform2:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _check_rotation(self.R))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(2))

    @classmethod
    def from_angle(cls, theta, t=(0.0, 0.0)):
        return cls(rot2(theta), np.asarray(t, dtype=float))

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2))

    @property
    def angle(self):
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))

    def apply(self, pts):
        return np.asarray(pts, dtype=float) @ self.R.T + self.t

    def inverse(self):
        return RigidTransform2(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other):
        return RigidTransform2(self.R @ other.R, self.R @ other.t + self.t)

    def as_matrix(self):
        M = np.eye(3)
        M[:2, :2] = self.R
        M[:2, 2] = self.t
        return M

    def twist(self):
        """Unit-time twist of this per-frame motion (first-order, about the origin)."""
        return Twist2(self.angle, self.t)


@dataclass(frozen=True)
class RigidTransform3:
    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _check_rotation(self.R))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))

    def __matmul__(self, other):
        return RigidTransform3(self.R @ other.R, self.R @ other.p + self.p)

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.p
        return M


def adjoint_se3(T: RigidTransform3) -> np.ndarray:
    """6x6 adjoint ``[[R, 0], [[p]R, R]]`` acting on twists ordered (omega, v)."""
    R = _check_rotation(T.R)
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[3:, :3] = skew(T.p) @ R
    return Ad


def shift_spatial_twist(omega, v, p) -> Twist3:
    """Re-express a linear velocity measured at ``p`` about the world origin."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    return Twist3(omega, v - np.cross(omega, np.asarray(p, dtype=float).reshape(3)))


def body_to_spatial_twist2(omega, v_node, p_node) -> Twist2:
    """Planar shift rule: ``v_s = v_node - omega * J p_node``."""
    v_node = np.asarray(v_node, dtype=float).reshape(2)
    p_node = np.asarray(p_node, dtype=float).reshape(2)
    return Twist2(omega, v_node - omega * (J2 @ p_node))


# ---------------------------------------------------------------------------
# planar motion fitting


def _weighted_kabsch_batch(P, Q, w):
    """Closed-form weighted 2D Kabsch over the last-but-one axis.

    P, Q: (..., m, 2); w: (..., m). Returns (theta, t, spread) where spread is
    the weighted mean squared distance of P to its centroid (0 => degenerate).
    """
    wsum = w.sum(axis=-1)
    safe = np.where(wsum > 0, wsum, 1.0)
    cp = (w[..., None] * P).sum(axis=-2) / safe[..., None]
    cq = (w[..., None] * Q).sum(axis=-2) / safe[..., None]
    a = P - cp[..., None, :]
    b = Q - cq[..., None, :]
    cross = (w * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])).sum(axis=-1)
    dot = (w * (a * b).sum(axis=-1)).sum(axis=-1)
    theta = np.arctan2(cross, dot)
    c, s = np.cos(theta), np.sin(theta)
    t = np.stack([cq[..., 0] - (c * cp[..., 0] - s * cp[..., 1]),
                  cq[..., 1] - (s * cp[..., 0] + c * cp[..., 1])], axis=-1)
    spread = (w * (a * a).sum(axis=-1)).sum(axis=-1) / safe
    return theta, t, np.where(wsum > 0, spread, 0.0)


def _spread_tol(P):
    scale = 1.0 + float(np.abs(P).max()) if P.size else 1.0
    return (1e-9 * scale) ** 2


def kabsch_se2_weighted(P, Q, w=None) -> RigidTransform2:
    """Rigid (R, t) minimising ``sum w_i |R p_i + t - q_i|^2``."""
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    w = np.ones(len(P)) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if not (len(P) == len(Q) == len(w)) or len(P) < 2:
        raise ValueError("P, Q and w must have equal length >= 2")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    theta, t, spread = _weighted_kabsch_batch(P, Q, w)
    if spread <= _spread_tol(P):
        raise DegenerateFitError("all weighted points coincide; rotation is undetermined")
    return RigidTransform2.from_angle(theta, t)


@dataclass(frozen=True)
class RansacConfig:
    """Robust-fit parameters. Minimal samples are point pairs; when the number
    of distinct pairs does not exceed ``iterations`` they are all enumerated."""

    iterations: int = 50
    threshold: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.threshold <= 0:
            raise ValueError("iterations must be >= 1 and threshold > 0")


def _hypothesis_pairs(m, cfg, anchor):
    if anchor is None:
        pairs = list(itertools.combinations(range(m), 2))
    else:
        pairs = [(anchor, j) for j in range(m) if j != anchor]
    pairs = np.array(pairs, dtype=np.intp).reshape(-1, 2)
    if len(pairs) > cfg.iterations:
        rng = np.random.default_rng(cfg.seed)
        pick = rng.choice(len(pairs), size=cfg.iterations, replace=False)
        pairs = pairs[pick]
    return pairs


def ransac_se2_batch(P, Q, cfg=RansacConfig(), anchor=None):
    """RANSAC + weighted Kabsch over a batch of small correspondence sets.

    P, Q: (n, m, 2). ``anchor`` forces that point index into every minimal
    sample, so the returned motion is one the anchor point takes part in.
    Returns dict with theta (n,), t (n, 2), inliers (n, m), weights (n, m),
    valid (n,).
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n, m, _ = P.shape
    if m < 2:
        raise NoModelError("need at least two correspondences")
    pairs = _hypothesis_pairs(m, cfg, anchor)
    H = len(pairs)

    # 2-point hypotheses for every set at once: (n, H)
    Ps = P[:, pairs, :]  # (n, H, 2, 2)
    Qs = Q[:, pairs, :]
    th, tt, spread = _weighted_kabsch_batch(Ps, Qs, np.ones(Ps.shape[:-1]))
    c, s = np.cos(th), np.sin(th)
    px, py = P[:, None, :, 0], P[:, None, :, 1]
    rx = c[..., None] * px - s[..., None] * py + tt[..., 0, None] - Q[:, None, :, 0]
    ry = s[..., None] * px + c[..., None] * py + tt[..., 1, None] - Q[:, None, :, 1]
    res = np.hypot(rx, ry)  # (n, H, m)
    inl = res < cfg.threshold
    ok = spread > 1e-18
    # truncated-quadratic (MSAC) cost; raw inlier counts let a compromise motion
    # straddling two bodies beat the exact fit when motions differ by ~2 thresholds
    cost = np.where(ok, (np.minimum(res, cfg.threshold) ** 2).sum(axis=-1), np.inf)
    best = np.argmin(cost, axis=-1)  # first minimum: hypothesis order breaks ties
    rows = np.arange(n)
    best_count = inl[rows, best].sum(axis=-1)
    inliers = inl[rows, best]
    r = res[rows, best]
    weights = np.where(inliers, np.exp(-0.5 * (r / cfg.threshold) ** 2), 0.0)

    theta, t, spread = _weighted_kabsch_batch(P, Q, weights)
    valid = (best_count >= 2) & (spread > 1e-18)
    return {"theta": theta, "t": t, "inliers": inliers, "weights": weights, "valid": valid}


def ransac_se2(P, Q, cfg=RansacConfig(), anchor=None):
    """Robust rigid fit P -> Q. Returns (RigidTransform2, inlier mask, weights)."""
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    if len(P) != len(Q) or len(P) < 2:
        raise ValueError("P and Q must have equal length >= 2")
    out = ransac_se2_batch(P[None], Q[None], cfg, anchor)
    if not out["valid"][0]:
        raise NoModelError("no consensus set of size >= 2")
    T = RigidTransform2.from_angle(out["theta"][0], out["t"][0])
    return T, out["inliers"][0], out["weights"][0]
