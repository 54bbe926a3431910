"""Synthetic planar rigid scenes with exact flow and ground-truth MotionBit masks.

A scene is a static background plus rigid bodies (discs or polygons) whose
pose is known at every frame; flows are the exact rigid displacement of the
visible body at each pixel.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath

from .errors import SceneSpecError
from .flowio import (FLOW_BWD_DIR, FLOW_FWD_DIR, MASK_DIR, FlowField, _atomic_write_bytes,
                     frame_path, write_flow, write_labels)
from .kinematics import RigidTransform2, Twist2

SCENE_FILE = "scene.json"
TRUTH_FILE = "truth.json"


@dataclass
class Body:
    """One rigid body. ``poses[f]`` maps body coordinates to image pixels at frame f."""

    shape: dict
    poses: list
    depth: float = 0.0

    def pose(self, f) -> RigidTransform2:
        th, x, y = self.poses[f]
        return RigidTransform2.from_angle(th, (x, y))

    def contains_local(self, pts):
        kind = self.shape["type"]
        if kind == "disc":
            return (pts ** 2).sum(axis=-1) <= float(self.shape["radius"]) ** 2
        if kind == "polygon":
            return MplPath(np.asarray(self.shape["vertices"], dtype=float)).contains_points(pts)
        raise SceneSpecError(f"unknown shape type {kind!r}")

    def radius(self):
        if self.shape["type"] == "disc":
            return float(self.shape["radius"])
        return float(np.hypot(*np.asarray(self.shape["vertices"], dtype=float).T).max())


@dataclass
class SceneSpec:
    width: int
    height: int
    frames: int
    bodies: list = field(default_factory=list)
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise SceneSpecError("canvas must be at least 1x1")
        if self.frames < 2:
            raise SceneSpecError("a scene needs at least 2 frames")
        if self.noise_sigma < 0:
            raise SceneSpecError("noise_sigma must be >= 0")
        for i, b in enumerate(self.bodies):
            if len(b.poses) != self.frames:
                raise SceneSpecError(f"body {i}: {len(b.poses)} poses for {self.frames} frames")
            if not np.all(np.isfinite(np.asarray(b.poses, dtype=float))):
                raise SceneSpecError(f"body {i}: non-finite pose")
            kind = b.shape.get("type")
            if kind == "disc":
                if not float(b.shape.get("radius", 0)) > 0:
                    raise SceneSpecError(f"body {i}: disc radius must be > 0")
            elif kind == "polygon":
                v = np.asarray(b.shape.get("vertices", []), dtype=float)
                if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                    raise SceneSpecError(f"body {i}: polygon needs >= 3 (x, y) vertices")
                x, y = v.T
                if abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) < 1e-9:
                    raise SceneSpecError(f"body {i}: polygon has zero area")
            else:
                raise SceneSpecError(f"body {i}: unknown shape type {kind!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            bodies = [_body_from_dict(b, int(d["frames"])) for b in d.get("bodies", [])]
            spec = cls(int(d["width"]), int(d["height"]), int(d["frames"]), bodies,
                       float(d.get("noise_sigma", 0.0)), int(d.get("noise_seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"invalid scene spec: {exc}") from exc
        return spec.validate()


def _body_from_dict(b, frames):
    """Bodies carry explicit ``poses`` or a ``start`` pose plus a constant ``step``.

    A step rotates the body about its own origin by ``rotation`` and moves the
    origin by ``translation`` each frame.
    """
    shape = dict(b["shape"])
    if "vertices" in shape:
        shape["vertices"] = [[float(x), float(y)] for x, y in shape["vertices"]]
    if "poses" in b:
        poses = [[float(v) for v in p] for p in b["poses"]]
    else:
        th, x, y = (float(v) for v in b["start"])
        step = b.get("step", {})
        dth = float(step.get("rotation", 0.0))
        dx, dy = (float(v) for v in step.get("translation", (0.0, 0.0)))
        poses = [[th + f * dth, x + f * dx, y + f * dy] for f in range(frames)]
    return Body(shape=shape, poses=poses, depth=float(b.get("depth", 0.0)))


def load_scene_spec(path) -> SceneSpec:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneSpecError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return SceneSpec.from_dict(d)


@dataclass
class SceneFrameTruth:
    """Exact data for one frame. ``bwd`` is F_{t->t-1} (None at t=0), ``fwd`` is
    F_{t->t+1} (None at the last frame); ``twists`` maps label ID to the body's
    forward motion t-1 -> t."""

    t: int
    labels: np.ndarray
    owner: np.ndarray
    fwd: FlowField | None
    bwd: FlowField | None
    twists: dict


def relative_motion(body: Body, f_from, f_to) -> RigidTransform2:
    """Image-frame rigid motion carrying the body from frame f_from to f_to."""
    return body.pose(f_to) @ body.pose(f_from).inverse()


def body_twist(body: Body, t) -> Twist2:
    """Exact forward twist of the motion t-1 -> t about the image origin."""
    return relative_motion(body, t - 1, t).twist()


def _is_moving(tw: Twist2, tol=1e-9):
    return abs(tw.omega) > tol or float(np.hypot(*tw.v)) > tol


def render_scene(spec: SceneSpec) -> list:
    spec.validate()
    H, W, T = spec.height, spec.width, spec.frames
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1)
    order = sorted(range(len(spec.bodies)), key=lambda i: (-spec.bodies[i].depth, i))

    owners = []
    for f in range(T):
        owner = np.full(H * W, -1, dtype=np.int64)
        for i in order:  # far to near; nearer bodies overwrite
            body = spec.bodies[i]
            local = body.pose(f).inverse().apply(pix)
            owner[body.contains_local(local)] = i
        owners.append(owner.reshape(H, W))

    twists = [{} for _ in range(T)]
    moved = np.zeros((T, len(spec.bodies)), dtype=bool)
    for i, body in enumerate(spec.bodies):
        for t in range(1, T):
            tw = body_twist(body, t)
            twists[t][i + 1] = tw
            moved[t, i] = _is_moving(tw)
    moved_so_far = np.logical_or.accumulate(moved, axis=0)

    rng = np.random.default_rng(spec.noise_seed)

    def flow_between(f, g):
        out = np.zeros((H * W, 2))
        owner = owners[f].ravel()
        for i, body in enumerate(spec.bodies):
            sel = owner == i
            if sel.any():
                out[sel] = relative_motion(body, f, g).apply(pix[sel]) - pix[sel]
        out = out.reshape(H, W, 2)
        if spec.noise_sigma > 0:
            out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
        return FlowField(out)

    frames = []
    for t in range(T):
        owner = owners[t]
        labels = np.zeros((H, W), dtype=np.int64)
        for i in range(len(spec.bodies)):
            if moved_so_far[t, i]:
                labels[owner == i] = i + 1
        for i, body in enumerate(spec.bodies):
            if not np.any(owner == i):
                warnings.warn(f"frame {t}: body {i} is not visible on the canvas", stacklevel=2)
        fwd = flow_between(t, t + 1) if t + 1 < T else None
        bwd = flow_between(t, t - 1) if t > 0 else None
        frames.append(SceneFrameTruth(t, labels, owner, fwd, bwd, twists[t]))
    return frames


# ---------------------------------------------------------------------------
# random scenes


@dataclass(frozen=True)
class SamplerParams:
    width: int = 320
    height: int = 320
    frames: int = 10
    bodies: tuple = (1, 5)
    speed: tuple = (1.5, 4.0)
    radius: tuple = (22.0, 45.0)
    max_rotation: float = 0.03
    min_separation: float = 1.0
    gap: float = 4.0
    allow_overlap: bool = False
    noise_sigma: float = 0.0
    max_tries: int = 2000

    def __post_init__(self):
        lo, hi = self.bodies
        if not (0 <= lo <= hi):
            raise SceneSpecError("invalid body-count range")
        if not (0 <= self.speed[0] <= self.speed[1]) or not (0 < self.radius[0] <= self.radius[1]):
            raise SceneSpecError("invalid speed or radius range")


def twist_length_scale(width, height):
    """Pixels per radian used to compare angular and linear twist parts: the image half-diagonal."""
    return 0.5 * float(np.hypot(width, height))


def twist_distance(a: Twist2, b: Twist2, length_scale):
    return float(np.hypot((a.omega - b.omega) * length_scale, np.hypot(*(a.v - b.v))))


def _random_shape(rng, r):
    if rng.random() < 0.5:
        return {"type": "disc", "radius": float(r)}
    k = int(rng.integers(3, 7))
    # jittered regular polygon: vertices stay spread so it is never a sliver
    ang = np.linspace(0, 2 * np.pi, k, endpoint=False) + rng.uniform(-0.25, 0.25, k) * (2 * np.pi / k)
    ang += rng.uniform(0, 2 * np.pi)
    rad = r * rng.uniform(0.8, 1.0, k)
    verts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return {"type": "polygon", "vertices": verts.round(6).tolist()}


def sample_scene(seed, params: SamplerParams = SamplerParams()) -> SceneSpec:
    """Random scene whose bodies stay on canvas, do not touch, and whose
    pairwise (and background) twist distance is at least ``min_separation``
    at every frame."""
    rng = np.random.default_rng(seed)
    W, H, T = params.width, params.height, params.frames
    scale = twist_length_scale(W, H)
    n_bodies = int(rng.integers(params.bodies[0], params.bodies[1] + 1))
    bodies = []
    for _ in range(params.max_tries):
        if len(bodies) == n_bodies:
            break
        r = rng.uniform(*params.radius)
        speed = rng.uniform(*params.speed)
        heading = rng.uniform(0, 2 * np.pi)
        d = speed * np.array([np.cos(heading), np.sin(heading)])
        # cap rotation so every point still moves at least half the speed
        rot_cap = min(params.max_rotation, 0.5 * speed / r)
        dth = rng.uniform(-rot_cap, rot_cap)
        travel = d * (T - 1)
        lo = np.maximum(r, r - travel) + 1
        hi = np.minimum([W - r, H - r], [W - r, H - r] - travel) - 1
        if np.any(hi <= lo):
            continue
        c0 = rng.uniform(lo, hi)
        th0 = rng.uniform(-np.pi, np.pi)
        cand = Body(shape=_random_shape(rng, r),
                    poses=[[th0 + f * dth, c0[0] + f * d[0], c0[1] + f * d[1]] for f in range(T)],
                    depth=float(len(bodies)))
        if not params.allow_overlap and any(_too_close(cand, b, params.gap, T) for b in bodies):
            continue
        if not _separated(cand, bodies, params.min_separation, scale, T):
            continue
        bodies.append(cand)
    if len(bodies) < n_bodies:
        raise SceneSpecError(f"could not place {n_bodies} bodies in {params.max_tries} tries")
    spec = SceneSpec(W, H, T, bodies, params.noise_sigma, int(seed))
    return spec.validate()


def _too_close(a: Body, b: Body, gap, T):
    for f in range(T):
        ca, cb = np.asarray(a.poses[f][1:]), np.asarray(b.poses[f][1:])
        if np.hypot(*(ca - cb)) < a.radius() + b.radius() + gap:
            return True
    return False


def _separated(cand, bodies, min_sep, scale, T):
    zero = Twist2(0.0, (0.0, 0.0))
    for t in range(1, T):
        tw = body_twist(cand, t)
        if twist_distance(tw, zero, scale) < min_sep:
            return False
        for b in bodies:
            if twist_distance(tw, body_twist(b, t), scale) < min_sep:
                return False
    return True


# ---------------------------------------------------------------------------
# on-disk layout


def write_scene(spec: SceneSpec, out_dir, frames=None):
    """Write flows, GT masks, scene.json and truth.json (per-frame body twists)."""
    out = Path(out_dir)
    frames = render_scene(spec) if frames is None else frames
    for fr in frames:
        if fr.fwd is not None:
            write_flow(fr.fwd, frame_path(out, FLOW_FWD_DIR, fr.t))
        if fr.bwd is not None:
            write_flow(fr.bwd, frame_path(out, FLOW_BWD_DIR, fr.t))
        write_labels(fr.labels, frame_path(out, MASK_DIR, fr.t))
    _atomic_write_bytes(out / SCENE_FILE, (json.dumps(spec.to_dict(), indent=2) + "\n").encode())
    truth = {"frames": [{"t": fr.t, "twists": {str(k): tw.as_array().tolist()
                                                for k, tw in sorted(fr.twists.items())}}
                        for fr in frames]}
    _atomic_write_bytes(out / TRUTH_FILE, (json.dumps(truth, indent=2) + "\n").encode())
    return out
