"""Instance-level evaluation of predicted label maps against ground truth.

Instances are matched one-to-one by Hungarian assignment on IoU. Region
(overlap) and contour (boundary) precision, recall and F1 are computed per
ground-truth instance and macro-averaged, so every instance counts equally.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError, ParameterError
from .segment import iou_matrix

SCHEMA_VERSION = 1
OVERLAP_KEYS = ("P", "R", "F1", "mIoU")
BOUNDARY_KEYS = ("P", "R", "F1")
CSV_HEADER = ("scene", "overlap_P", "overlap_R", "overlap_F1", "overlap_mIoU",
              "boundary_P", "boundary_R", "boundary_F1")


@dataclass(frozen=True)
class InstanceMatching:
    pairs: tuple  # (gt id, pred id, iou)
    unmatched_gt: tuple
    unmatched_pred: tuple


def _f1(p, r):
    p, r = np.asarray(p, float), np.asarray(r, float)
    s = p + r
    return np.where(s > 0, 2 * p * r / np.where(s > 0, s, 1.0), 0.0)


def _check_dims(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def hungarian_match(pred, gt) -> InstanceMatching:
    """Maximum-total-IoU one-to-one assignment; zero-IoU pairs are dropped."""
    pred, gt = _check_dims(pred, gt)
    iou, ig, ip = iou_matrix(gt, pred)
    pairs = []
    if iou.size:
        r, c = linear_sum_assignment(1.0 - iou)
        pairs = [(int(ig[i]), int(ip[j]), float(iou[i, j])) for i, j in zip(r, c) if iou[i, j] > 0]
    mg = {g for g, _, _ in pairs}
    mp = {p for _, p, _ in pairs}
    return InstanceMatching(tuple(sorted(pairs)),
                            tuple(int(g) for g in ig if g not in mg),
                            tuple(int(p) for p in ip if p not in mp))


def contour(mask):
    """Pixels of ``mask`` with at least one 8-neighbour outside it."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)


def disc(radius):
    r = int(math.floor(radius))
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= radius * radius


def default_boundary_tol(shape):
    h, w = shape[:2]
    return float(math.ceil(0.008 * math.hypot(h, w)))


@dataclass
class SceneScores:
    """Per-instance scores of one scene: one row per gt instance (unmatched rows
    are zero) plus the number of hallucinated predictions."""

    overlap: np.ndarray  # (n_gt, 4) P, R, F1, IoU
    boundary: np.ndarray  # (n_gt, 3) P, R, F1
    extra_pred: int
    matching: InstanceMatching | None = None


def overlap_rows(pred, gt, matching: InstanceMatching):
    pred, gt = _check_dims(pred, gt)
    gt_ids = sorted([g for g, _, _ in matching.pairs] + list(matching.unmatched_gt))
    to_pred = {g: p for g, p, _ in matching.pairs}
    rows = np.zeros((len(gt_ids), 4))
    for i, g in enumerate(gt_ids):
        if g not in to_pred:
            continue
        gm, pm = gt == g, pred == to_pred[g]
        inter = float(np.count_nonzero(gm & pm))
        p = inter / np.count_nonzero(pm)
        r = inter / np.count_nonzero(gm)
        rows[i] = p, r, _f1(p, r), inter / np.count_nonzero(gm | pm)
    return rows


def boundary_rows(pred, gt, matching: InstanceMatching, tol):
    if tol < 0:
        raise ParameterError("boundary tolerance must be >= 0")
    pred, gt = _check_dims(pred, gt)
    gt_ids = sorted([g for g, _, _ in matching.pairs] + list(matching.unmatched_gt))
    to_pred = {g: p for g, p, _ in matching.pairs}
    se = disc(tol)
    rows = np.zeros((len(gt_ids), 3))
    for i, g in enumerate(gt_ids):
        if g not in to_pred:
            continue
        cg, cp = contour(gt == g), contour(pred == to_pred[g])
        ng, np_ = np.count_nonzero(cg), np.count_nonzero(cp)
        p = np.count_nonzero(cp & ndimage.binary_dilation(cg, se)) / np_ if np_ else 0.0
        r = np.count_nonzero(cg & ndimage.binary_dilation(cp, se)) / ng if ng else 0.0
        rows[i] = p, r, _f1(p, r)
    return rows


def score_scene(pred, gt, tol=None) -> SceneScores:
    pred, gt = _check_dims(pred, gt)
    tol = default_boundary_tol(gt.shape) if tol is None else tol
    m = hungarian_match(pred, gt)
    return SceneScores(overlap_rows(pred, gt, m), boundary_rows(pred, gt, m, tol),
                       len(m.unmatched_pred), m)


def _macro(rows, extra, population, n_cols, p_col=0):
    """Macro-average; hallucinated predictions add zero-precision entries (and,
    for the union population, zero entries for every metric)."""
    out = np.zeros(n_cols)
    n_gt = len(rows)
    if n_gt == 0:
        # nothing to find: perfect if nothing was predicted
        out[:] = 1.0 if extra == 0 else 0.0
        if population == "gt":
            out[1] = 1.0
        return out
    if population == "union":
        return rows.sum(axis=0) / (n_gt + extra)
    out = rows.mean(axis=0)
    out[p_col] = rows[:, p_col].sum() / (n_gt + extra)
    return out


def summarize(scores, population="gt"):
    """Pool instances across scenes and macro-average. Returns (overlap, boundary) dicts."""
    if population not in ("gt", "union"):
        raise ParameterError("population must be 'gt' or 'union'")
    if isinstance(scores, SceneScores):
        scores = [scores]
    ov = np.concatenate([s.overlap for s in scores]) if scores else np.zeros((0, 4))
    bd = np.concatenate([s.boundary for s in scores]) if scores else np.zeros((0, 3))
    extra = sum(s.extra_pred for s in scores)
    o = _macro(ov, extra, population, 4)
    b = _macro(bd, extra, population, 3)
    return dict(zip(OVERLAP_KEYS, map(float, o))), dict(zip(BOUNDARY_KEYS, map(float, b)))


def overlap_metrics(pred, gt, matching: InstanceMatching, population="gt"):
    rows = overlap_rows(pred, gt, matching)
    return summarize([SceneScores(rows, np.zeros((len(rows), 3)), len(matching.unmatched_pred))],
                     population)[0]


def boundary_metrics(pred, gt, matching: InstanceMatching, tol=None, population="gt"):
    pred, gt = _check_dims(pred, gt)
    tol = default_boundary_tol(gt.shape) if tol is None else tol
    rows = boundary_rows(pred, gt, matching, tol)
    return summarize([SceneScores(np.zeros((len(rows), 4)), rows, len(matching.unmatched_pred))],
                     population)[1]


@dataclass
class MetricsReport:
    overlap: dict
    boundary: dict
    scenes: dict = field(default_factory=dict)  # name -> {"overlap": ..., "boundary": ...}
    population: str = "gt"
    boundary_tol: float | None = None

    @classmethod
    def from_scores(cls, named_scores: dict, population="gt", boundary_tol=None):
        scenes = {}
        for name in sorted(named_scores):
            o, b = summarize([named_scores[name]], population)
            scenes[name] = {"overlap": o, "boundary": b}
        o, b = summarize([named_scores[k] for k in sorted(named_scores)], population)
        return cls(o, b, scenes, population, boundary_tol)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "population": self.population,
                "boundary_tol": self.boundary_tol,
                "aggregate": {"overlap": self.overlap, "boundary": self.boundary},
                "scenes": self.scenes}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        rows = list(self.scenes.items()) + [("ALL", {"overlap": self.overlap, "boundary": self.boundary})]
        for name, d in rows:
            w.writerow([name] + [f"{d['overlap'][k]:.6f}" for k in OVERLAP_KEYS]
                       + [f"{d['boundary'][k]:.6f}" for k in BOUNDARY_KEYS])
        return buf.getvalue()
