"""Flow fields and label maps: Middlebury .flo / 16-bit PNG I/O, flow
composition and forward label splatting."""
from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionMismatchError, FlowFormatError

FLO_MAGIC = np.float32(202021.25)
UNKNOWN_FLOW = 1e10  # |value| above UNKNOWN_THRESH marks an unknown vector
UNKNOWN_THRESH = 1e9

FLOW_FWD_DIR = "flow_fwd"
FLOW_BWD_DIR = "flow_bwd"
MASK_DIR = "masks"
FRAME_FMT = "{:05d}"


@dataclass(frozen=True)
class FlowField:
    """Dense (dx, dy) displacement per pixel, shape (H, W, 2).

    Files always hold float32; in-memory fields may be float64 (the scene
    simulator keeps exact values).
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"flow must have shape (H, W, 2), got {d.shape}")
        if d.dtype not in (np.float32, np.float64):
            d = d.astype(np.float32)
        object.__setattr__(self, "data", d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape[:2]

    @classmethod
    def zeros(cls, height, width, dtype=np.float32):
        return cls(np.zeros((height, width, 2), dtype=dtype))

    def unknown_mask(self):
        return np.any(np.abs(self.data) > UNKNOWN_THRESH, axis=2)

    def sample(self, x, y):
        """Bilinear sample at float pixel coordinates (border-clamped)."""
        coords = np.array([np.asarray(y, dtype=float).ravel(), np.asarray(x, dtype=float).ravel()])
        out = np.empty(coords.shape[1:] + (2,))
        for c in range(2):
            out[:, c] = ndimage.map_coordinates(self.data[..., c].astype(float), coords,
                                                order=1, mode="nearest")
        return out.reshape(np.shape(x) + (2,))


def _atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_flow(flow: FlowField) -> bytes:
    h, w = flow.shape
    header = FLO_MAGIC.tobytes() + np.array([w, h], dtype="<i4").tobytes()
    return header + np.ascontiguousarray(flow.data, dtype="<f4").tobytes()


def decode_flow(buf: bytes) -> FlowField:
    if len(buf) < 4:
        raise FlowFormatError("file too short for magic number", 0)
    magic = np.frombuffer(buf, dtype="<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FlowFormatError(f"bad magic number {magic!r}", 0)
    if len(buf) < 12:
        raise FlowFormatError("truncated header", len(buf))
    w, h = np.frombuffer(buf, dtype="<i4", count=2, offset=4)
    if w <= 0:
        raise FlowFormatError(f"nonpositive width {w}", 4)
    if h <= 0:
        raise FlowFormatError(f"nonpositive height {h}", 8)
    need = 12 + 8 * int(w) * int(h)
    if len(buf) < need:
        raise FlowFormatError(f"truncated payload: expected {need} bytes, got {len(buf)}", len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=2 * int(w) * int(h), offset=12)
    return FlowField(data.reshape(int(h), int(w), 2).astype(np.float32))


def read_flow(path) -> FlowField:
    return decode_flow(Path(path).read_bytes())


def write_flow(flow: FlowField, path):
    _atomic_write_bytes(path, encode_flow(flow))


def read_labels(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: label map must be single-channel")
    return arr.astype(np.int64)


def write_labels(labels, path):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("label IDs must lie in [0, 65535] for 16-bit PNG")
    buf = io.BytesIO()
    Image.fromarray(labels.astype(np.uint16)).save(buf, format="PNG")
    _atomic_write_bytes(path, buf.getvalue())


def frame_path(scene_dir, kind, t):
    ext = ".png" if kind == MASK_DIR else ".flo"
    return Path(scene_dir) / kind / (FRAME_FMT.format(t) + ext)


def _check_same(a_shape, b_shape):
    if tuple(a_shape) != tuple(b_shape):
        raise DimensionMismatchError(f"dimension mismatch: {tuple(a_shape)} vs {tuple(b_shape)}")


def compose_flows(f_ab: FlowField, f_bc: FlowField) -> FlowField:
    """F_ac(p) = F_ab(p) + F_bc(p + F_ab(p)), bilinear in the second field."""
    _check_same(f_ab.shape, f_bc.shape)
    h, w = f_ab.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    a = f_ab.data.astype(float)
    second = f_bc.sample(xs + a[..., 0], ys + a[..., 1])
    out = a + second
    unknown = f_ab.unknown_mask()
    out[unknown] = UNKNOWN_FLOW
    return FlowField(out.astype(np.result_type(f_ab.data, f_bc.data)))


def warp_labels(labels, flow: FlowField) -> np.ndarray:
    """Forward-splat labels along ``flow`` with nearest-pixel rounding.

    Collisions keep the source with larger flow magnitude, then the smaller
    row-major source index. Unfilled pixels are 0.
    """
    labels = np.asarray(labels)
    _check_same(labels.shape, flow.shape)
    h, w = labels.shape
    d = flow.data.astype(float)
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.rint(xs + d[..., 0])
    ty = np.rint(ys + d[..., 1])
    src = (labels != 0) & ~flow.unknown_mask() & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    out = np.zeros_like(labels)
    if not src.any():
        return out
    idx = np.flatnonzero(src)
    target = (ty.ravel()[idx] * w + tx.ravel()[idx]).astype(np.int64)
    mag = np.hypot(d[..., 0], d[..., 1]).ravel()[idx]
    order = np.lexsort((idx, -mag))
    target, idx = target[order], idx[order]
    uniq, first = np.unique(target, return_index=True)
    out.ravel()[uniq] = labels.ravel()[idx[first]]
    return out
