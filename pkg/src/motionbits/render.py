"""Visualisations: flow colour images, label overlays and node twist arrows."""
from __future__ import annotations

import io

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import hsv_to_rgb
from PIL import Image, ImageDraw

from .flowio import FlowField, _atomic_write_bytes
from .kinematics import J2

_TAB = (np.asarray(colormaps["tab20"].colors) * 255).round().astype(np.uint8)
# even entries first so neighbouring IDs get strongly different colours
PALETTE = np.concatenate([_TAB[0::2], _TAB[1::2]])


def label_color(i):
    """Deterministic RGB colour of a nonzero MotionBit ID."""
    return PALETTE[(int(i) - 1) % len(PALETTE)]


def flow_to_color(flow: FlowField, max_mag=None):
    """Hue from direction, saturation from magnitude; unknown vectors are black."""
    d = np.asarray(flow.data, dtype=float)
    unknown = flow.unknown_mask()
    d = np.where(unknown[..., None], 0.0, d)
    mag = np.hypot(d[..., 0], d[..., 1])
    if max_mag is None:
        max_mag = mag.max()
    sat = np.clip(mag / max_mag, 0, 1) if max_mag > 0 else np.zeros_like(mag)
    hue = (np.arctan2(-d[..., 1], -d[..., 0]) / np.pi + 1) / 2
    rgb = hsv_to_rgb(np.stack([hue, sat, np.ones_like(sat)], axis=-1))
    rgb[unknown] = 0
    return (rgb * 255).round().astype(np.uint8)


def gray_background(height, width, level=128):
    return np.full((height, width, 3), level, dtype=np.uint8)


def overlay_labels(background, labels, alpha=0.55):
    """Blend palette colours over ``background`` wherever labels are nonzero."""
    bg = np.asarray(background, dtype=np.uint8)
    labels = np.asarray(labels)
    out = bg.copy()
    for i in np.unique(labels[labels > 0]):
        m = labels == i
        mixed = (1 - alpha) * bg[m].astype(float) + alpha * label_color(i).astype(float)
        out[m] = mixed.round().astype(np.uint8)
    return out


def node_velocities(P, twists):
    """Velocity of each node under its own spatial twist (omega, vx, vy)."""
    P = np.asarray(P, dtype=float)
    tw = np.asarray(twists, dtype=float)
    return tw[:, 1:] + tw[:, :1] * (P @ J2.T)


def arrow_segments(P, vel, scale=3.0, head=0.3):
    """Shaft and arrow-head line segments, shape (m, 3, 2, 2)."""
    P = np.asarray(P, dtype=float)
    tip = P + scale * np.asarray(vel, dtype=float)
    d = tip - P
    back = -head * d
    c, s = np.cos(0.45), np.sin(0.45)
    left = np.stack([c * back[:, 0] - s * back[:, 1], s * back[:, 0] + c * back[:, 1]], axis=1)
    right = np.stack([c * back[:, 0] + s * back[:, 1], -s * back[:, 0] + c * back[:, 1]], axis=1)
    return np.stack([np.stack([P, tip], 1), np.stack([tip, tip + left], 1),
                     np.stack([tip, tip + right], 1)], axis=1)


def draw_twist_arrows(image, P, twists, ids=None, scale=3.0, stride=1, min_speed=1e-6):
    """Draw node velocity arrows on a copy of ``image``; colours follow ``ids``."""
    img = Image.fromarray(np.asarray(image, dtype=np.uint8))
    draw = ImageDraw.Draw(img)
    vel = node_velocities(P, twists)
    sel = np.arange(0, len(P), stride)
    sel = sel[np.hypot(vel[sel, 0], vel[sel, 1]) > min_speed]
    segs = arrow_segments(np.asarray(P)[sel], vel[sel], scale)
    for k, j in enumerate(sel):
        col = tuple(int(c) for c in label_color(ids[j])) if ids is not None and ids[j] > 0 else (255, 255, 255)
        for a, b in segs[k]:
            draw.line([tuple(a), tuple(b)], fill=col, width=1)
    return np.asarray(img)


def save_png(rgb, path):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    _atomic_write_bytes(path, buf.getvalue())
