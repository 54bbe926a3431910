import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from motionbits.errors import DimensionMismatchError
from motionbits.evaluate import (MetricsReport, boundary_metrics, contour, default_boundary_tol,
                                 hungarian_match, overlap_metrics, score_scene, summarize)


def square(shape, y, x, s=10, lab=1, out=None):
    out = np.zeros(shape, int) if out is None else out
    out[y:y + s, x:x + s] = lab
    return out


def brute_force_best(pred, gt):
    """Enumerate every partial one-to-one assignment; return the best total IoU."""
    gids = [g for g in np.unique(gt) if g]
    pids = [p for p in np.unique(pred) if p]

    def iou(g, p):
        a, b = gt == g, pred == p
        return (a & b).sum() / (a | b).sum()

    best = 0.0
    k = min(len(gids), len(pids))
    for chosen in itertools.permutations(pids, k):
        for gsub in itertools.combinations(gids, k):
            best = max(best, sum(iou(g, p) for g, p in zip(gsub, chosen)))
    return best


def test_identity_all_ones():
    gt = square((30, 30), 2, 2)
    square((30, 30), 15, 15, lab=4, out=gt)
    m = hungarian_match(gt, gt)
    assert [(g, p) for g, p, _ in m.pairs] == [(1, 1), (4, 4)]
    assert overlap_metrics(gt, gt, m) == {"P": 1.0, "R": 1.0, "F1": 1.0, "mIoU": 1.0}
    assert boundary_metrics(gt, gt, m, tol=0) == {"P": 1.0, "R": 1.0, "F1": 1.0}


def test_half_shifted_square():
    gt = square((30, 30), 5, 5)
    pred = square((30, 30), 5, 10)
    o = overlap_metrics(pred, gt, hungarian_match(pred, gt))
    assert o["mIoU"] == pytest.approx(1 / 3) and o["P"] == 0.5 and o["R"] == 0.5 and o["F1"] == 0.5


def test_one_perfect_one_missed():
    gt = square((40, 40), 2, 2)
    square((40, 40), 20, 20, lab=2, out=gt)
    pred = square((40, 40), 2, 2)
    m = hungarian_match(pred, gt)
    assert m.unmatched_gt == (2,)
    o = overlap_metrics(pred, gt, m)
    assert o["mIoU"] == 0.5 and o["R"] == 0.5 and o["P"] == 0.5


def test_empty_prediction():
    gt = square((20, 20), 2, 2)
    m = hungarian_match(np.zeros_like(gt), gt)
    assert m.pairs == () and m.unmatched_gt == (1,)
    assert overlap_metrics(np.zeros_like(gt), gt, m)["R"] == 0


def test_hallucinated_prediction_lowers_precision():
    gt = square((40, 40), 2, 2)
    pred = square((40, 40), 2, 2)
    square((40, 40), 25, 25, lab=2, out=pred)
    m = hungarian_match(pred, gt)
    o = overlap_metrics(pred, gt, m)
    assert o["P"] == 0.5 and o["R"] == 1.0 and o["mIoU"] == 1.0
    u = overlap_metrics(pred, gt, m, population="union")
    assert u["mIoU"] == 0.5 and u["R"] == 0.5


def test_greedy_trap():
    # greedy takes the 0.6 pair and is left with 0.1; optimal is 0.5 + 0.5
    gt = np.zeros((1, 100), int)
    pred = np.zeros((1, 100), int)
    gt[0, 0:30] = 1
    gt[0, 30:40] = 2
    pred[0, 0:18] = 1  # IoU(g1, p1) = 18/30 = 0.6
    pred[0, 18:36] = 2  # IoU(g1, p2) = 12/36, IoU(g2, p2) = 6/22
    m = hungarian_match(pred, gt)
    total = sum(i for _, _, i in m.pairs)
    assert total == pytest.approx(brute_force_best(pred, gt))


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(0, 5))
def test_hungarian_matches_brute_force(seed, ng, npred):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, ng + 1, (6, 6))
    pred = rng.integers(0, npred + 1, (6, 6))
    m = hungarian_match(pred, gt)
    assert sum(i for _, _, i in m.pairs) == pytest.approx(brute_force_best(pred, gt))
    assert len({g for g, _, _ in m.pairs}) == len(m.pairs) == len({p for _, p, _ in m.pairs})


def brute_boundary(pred_mask, gt_mask, tol):
    """Nearest-contour-distance oracle by exhaustive pairwise distances."""
    def pts(m):
        ys, xs = np.nonzero(m)
        return np.stack([ys, xs], 1).astype(float)

    def contour_pts(m):
        H, W = m.shape
        out = []
        for y, x in zip(*np.nonzero(m)):
            nb = [(y + dy, x + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
            if any(not (0 <= a < H and 0 <= b < W) or not m[a, b] for a, b in nb):
                out.append((y, x))
        return np.array(out, float)

    cp, cg = contour_pts(pred_mask), contour_pts(gt_mask)
    d = np.sqrt(((cp[:, None] - cg[None]) ** 2).sum(-1))
    p = (d.min(1) <= tol).mean()
    r = (d.min(0) <= tol).mean()
    return p, r, 0.0 if p + r == 0 else 2 * p * r / (p + r)


@pytest.mark.parametrize("shift,tol", [(1, 2), (5, 2), (3, 0), (4, 3.5), (2, 1.5)])
def test_boundary_matches_brute_force(shift, tol):
    gt = square((40, 40), 10, 10, s=14)
    pred = square((40, 40), 10 + shift // 2, 10 + shift, s=14)
    b = boundary_metrics(pred, gt, hungarian_match(pred, gt), tol)
    p, r, f = brute_boundary(pred == 1, gt == 1, tol)
    assert (b["P"], b["R"], b["F1"]) == pytest.approx((p, r, f), abs=1e-15)


def test_boundary_shift_below_tolerance_is_perfect():
    gt = square((40, 40), 10, 10, s=14)
    pred = square((40, 40), 10, 11, s=14)
    assert boundary_metrics(pred, gt, hungarian_match(pred, gt), 2)["F1"] == 1.0


def test_contour_is_ring():
    c = contour(square((10, 10), 2, 2, s=5) == 1)
    assert c.sum() == 16 and not c[4, 4]


def test_default_tolerance():
    assert default_boundary_tol((480, 640)) == 7.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        hungarian_match(np.zeros((2, 2)), np.zeros((2, 3)))


@given(st.integers(0, 1000), st.permutations(range(1, 5)), st.permutations(range(1, 5)))
def test_permutation_invariance_and_ranges(seed, pg, pp):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 5, (12, 12))
    pred = rng.integers(0, 5, (12, 12))
    lut_g, lut_p = np.array([0, *pg]) * 7, np.array([0, *pp]) * 3
    a = summarize(score_scene(pred, gt, 1))
    b = summarize(score_scene(lut_p[pred], lut_g[gt], 1))
    assert a[0] == pytest.approx(b[0], abs=1e-12) and a[1] == pytest.approx(b[1], abs=1e-12)
    s = score_scene(pred, gt, 1)
    assert np.all((s.overlap >= 0) & (s.overlap <= 1)) and np.all((s.boundary >= 0) & (s.boundary <= 1))
    assert np.all(s.overlap[:, 3] <= s.overlap[:, 2] + 1e-12)


@given(st.integers(0, 1000))
def test_swap_exchanges_precision_and_recall(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 3, (10, 10))
    pred = rng.integers(0, 3, (10, 10))
    a, b = score_scene(pred, gt, 1), score_scene(gt, pred, 1)
    pa = {(g, p): i for i, (g, p, _) in enumerate(a.matching.pairs)}
    for j, (g, p, _) in enumerate(b.matching.pairs):
        gi = sorted([x for x, _, _ in a.matching.pairs] + list(a.matching.unmatched_gt)).index(p)
        gj = sorted([x for x, _, _ in b.matching.pairs] + list(b.matching.unmatched_gt)).index(g)
        if (p, g) in pa:
            assert a.overlap[gi, 0] == pytest.approx(b.overlap[gj, 1])
            assert a.overlap[gi, 1] == pytest.approx(b.overlap[gj, 0])


def test_report_json_and_csv():
    gt = square((30, 30), 5, 5)
    pred = square((30, 30), 5, 10)
    rep = MetricsReport.from_scores({"b": score_scene(gt, gt), "a": score_scene(pred, gt)})
    d = json.loads(rep.to_json())
    assert d["schema_version"] == 1 and list(d["scenes"]) == ["a", "b"]
    lines = rep.to_csv().splitlines()
    assert lines[0] == "scene,overlap_P,overlap_R,overlap_F1,overlap_mIoU,boundary_P,boundary_R,boundary_F1"
    assert lines[1].startswith("a,0.500000,0.500000,0.500000,0.333333")
    assert lines[-1].startswith("ALL,0.750000")
