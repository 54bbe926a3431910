"""How well a planar twist describes a small patch under a full 3D perspective camera.

Two nearby 3D points moving with one SE(3) twist project to slightly different
image velocities. The relative gap between them measures the error of treating
their image motion as a single planar rigid motion. It is estimated by Monte
Carlo, either by projecting both points exactly through the interaction matrix
or by the first-order sensitivity matrix.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import DomainError, ParameterError


@dataclass(frozen=True)
class CameraModel:
    focal: float = 500.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ParameterError("focal length must be > 0")

    def project(self, P):
        P = np.asarray(P, dtype=float)
        Z = P[..., 2]
        if np.any(Z <= 0):
            raise DomainError("point at or behind the camera")
        return np.stack([self.focal * P[..., 0] / Z + self.cx,
                         self.focal * P[..., 1] / Z + self.cy], axis=-1)


def _check_depth(Z):
    if np.any(np.asarray(Z) <= 0):
        raise DomainError("depth Z must be > 0")


def interaction_matrix(x, y, Z):
    """2x6 image Jacobian of a normalised point, twist ordered (vx, vy, vz, wx, wy, wz).

    Broadcasts over array inputs, returning shape (..., 2, 6).
    """
    x, y, Z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, Z)))
    _check_depth(Z)
    L = np.zeros(x.shape + (2, 6))
    iz = 1.0 / Z
    L[..., 0, 0] = -iz
    L[..., 0, 2] = x * iz
    L[..., 0, 3] = x * y
    L[..., 0, 4] = -(1 + x * x)
    L[..., 0, 5] = y
    L[..., 1, 1] = -iz
    L[..., 1, 2] = y * iz
    L[..., 1, 3] = 1 + y * y
    L[..., 1, 4] = -x * y
    L[..., 1, 5] = -x
    return L


def image_velocity(P, V):
    """Normalised image velocity L(P) V of 3D points ``P`` (..., 3) under twists ``V`` (..., 6)."""
    P = np.asarray(P, dtype=float)
    Z = P[..., 2]
    _check_depth(Z)
    L = interaction_matrix(P[..., 0] / Z, P[..., 1] / Z, Z)
    return np.einsum("...ij,...j->...i", L, np.asarray(V, dtype=float))


def sensitivity_matrix(P, V):
    """Psi = [dL/dX V, dL/dY V, dL/dZ V], shape (..., 2, 3), via x = X/Z, y = Y/Z."""
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    X, Y, Z = P[..., 0], P[..., 1], P[..., 2]
    _check_depth(Z)
    x, y = X / Z, Y / Z
    vx, vy, vz, wx, wy, wz = np.moveaxis(V, -1, 0)
    # partials of u = L V in (x, y) at fixed Z, and in Z at fixed (x, y)
    u1x = vz / Z + y * wx - 2 * x * wy
    u2x = -y * wy - wz
    u1y = x * wx + wz
    u2y = vz / Z + 2 * y * wx - x * wy
    u1z = (vx - x * vz) / Z ** 2
    u2z = (vy - y * vz) / Z ** 2
    Psi = np.empty(np.broadcast(X, vx).shape + (2, 3))
    Psi[..., 0, 0] = u1x / Z
    Psi[..., 1, 0] = u2x / Z
    Psi[..., 0, 1] = u1y / Z
    Psi[..., 1, 1] = u2y / Z
    Psi[..., 0, 2] = u1z - (x * u1x + y * u1y) / Z
    Psi[..., 1, 2] = u2z - (x * u2x + y * u2y) / Z
    return Psi


@dataclass(frozen=True)
class SensitivityConfig:
    half_x: float = 2.0  # metres, points uniform in [-half_x, half_x]
    half_y: float = 2.0
    depth: float = 1.5
    separation: float = 0.02  # |dp| in metres
    trials: int = 100_000
    angular_ratio: float = 1.0  # rad per metre of linear speed before normalising
    mode: str = "direct"  # or "analytic"
    planar_dp: bool = False  # constrain dp_z = 0
    translation_only: bool = False  # zero angular part and vz (sanity case)
    seed: int = 0

    def validate(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.depth <= 0:
            raise DomainError("depth must be > 0")
        if self.half_x < 0 or self.half_y < 0 or self.separation <= 0:
            raise ParameterError("need half extents >= 0 and separation > 0")
        if self.angular_ratio < 0:
            raise ParameterError("angular_ratio must be >= 0")
        if self.mode not in ("direct", "analytic"):
            raise ParameterError("mode must be 'direct' or 'analytic'")
        return self

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "tabletop": SensitivityConfig(half_x=2.0, half_y=2.0, depth=1.5, separation=0.02),
    "in-the-wild": SensitivityConfig(half_x=6.0, half_y=6.0, depth=6.0, separation=0.08),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **{k: v for k, v in overrides.items() if v is not None}).validate()


@dataclass
class SensitivitySummary:
    config: dict
    trials: int
    mean_pct: float
    std_pct: float
    resampled: int
    values: np.ndarray  # per-trial relative deviation, fraction
    seconds: float = 0.0

    def to_dict(self):
        return {"config": self.config, "trials": self.trials, "mean_pct": self.mean_pct,
                "std_pct": self.std_pct, "resampled": self.resampled}

    def histogram_csv(self, bins=50):
        pct = 100 * self.values
        counts, edges = np.histogram(pct, bins=bins)
        lines = ["lo_pct,hi_pct,count"]
        lines += [f"{lo:.6f},{hi:.6f},{c}" for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
        return "\n".join(lines) + "\n"


def _unit(rng, m, d=3):
    u = rng.standard_normal((m, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sample_twists(rng, m, angular_ratio=1.0, translation_only=False):
    """Unit 6-vectors (v, w) with independent isotropic directions for v and w."""
    v = _unit(rng, m)
    w = angular_ratio * _unit(rng, m)
    if translation_only:
        w[:] = 0.0
        v[:, 2] = 0.0
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    V = np.concatenate([v, w], axis=1)
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _draw(rng, cfg, m):
    P = np.column_stack([rng.uniform(-cfg.half_x, cfg.half_x, m),
                         rng.uniform(-cfg.half_y, cfg.half_y, m),
                         np.full(m, cfg.depth)])
    V = sample_twists(rng, m, cfg.angular_ratio, cfg.translation_only)
    if cfg.planar_dp:
        dp = np.column_stack([_unit(rng, m, 2), np.zeros(m)])
    else:
        dp = _unit(rng, m)
    return P, V, cfg.separation * dp


def relative_deviation(P, V, dp, mode="direct"):
    """|d1 - d2| / mean(|d1|, |d2|) for the image velocities of P and P + dp."""
    d1 = image_velocity(P, V)
    d2 = image_velocity(P + dp, V)
    if mode == "analytic":
        num = np.linalg.norm(np.einsum("...ij,...j->...i", sensitivity_matrix(P, V), dp), axis=-1)
    else:
        num = np.linalg.norm(d1 - d2, axis=-1)
    den = 0.5 * (np.linalg.norm(d1, axis=-1) + np.linalg.norm(d2, axis=-1))
    return num / den, d1, d2


def monte_carlo_sensitivity(cfg: SensitivityConfig) -> SensitivitySummary:
    """Vectorised Monte Carlo; degenerate trials (second point behind the camera
    or both displacements below 1e-9) are redrawn and counted."""
    cfg.validate()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    P, V, dp = _draw(rng, cfg, cfg.trials)
    resampled = 0
    while True:
        bad = (P[:, 2] + dp[:, 2]) <= 0
        ok = ~bad
        rel = np.full(cfg.trials, np.nan)
        r, d1, d2 = relative_deviation(P[ok], V[ok], dp[ok], cfg.mode)
        tiny = (np.linalg.norm(d1, axis=1) < 1e-9) & (np.linalg.norm(d2, axis=1) < 1e-9)
        rel[ok] = np.where(tiny, np.nan, r)
        redo = np.flatnonzero(np.isnan(rel))
        if len(redo) == 0:
            break
        resampled += len(redo)
        P[redo], V[redo], dp[redo] = _draw(rng, cfg, len(redo))
    return SensitivitySummary(cfg.to_dict(), cfg.trials, float(100 * rel.mean()),
                              float(100 * rel.std()), resampled, rel,
                              time.perf_counter() - t0)
