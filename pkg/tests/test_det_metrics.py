import numpy as np
import pytest

from pw2ss.errors import LengthMismatch
from pw2ss.det_metrics import (
    Detection,
    GroundTruth,
    ap50,
    average_precision,
    average_recall,
    center_metric,
    coco_ap,
    match_detections,
    pr_curve,
    precision_recall_at,
    top1_accuracy,
)
from pw2ss.gui_core import BBox


# --- reference oracle, written from the definitions alone -------------------

def _iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def oracle_ap(dets, gts, thr):
    """dets: list of (image, box, score); gts: list of (image, box)."""
    flags = []
    for img in sorted({d[0] for d in dets} | {g[0] for g in gts}):
        mine = [(k, d) for k, d in enumerate(dets) if d[0] == img]
        mine.sort(key=lambda kd: (-kd[1][2], kd[0]))
        boxes = [g[1] for g in gts if g[0] == img]
        used = set()
        for k, d in mine:
            cands = [(_iou(d[1], b), j) for j, b in enumerate(boxes) if j not in used and _iou(d[1], b) >= thr]
            if cands:
                best = max(cands, key=lambda c: (c[0], -c[1]))[1]
                used.add(best)
            flags.append((-d[2], k, bool(cands)))
    flags.sort()
    hits = [f[2] for f in flags]
    if not gts:
        return 1.0 if not hits else 0.0
    points = []
    tp = 0
    for rank, h in enumerate(hits, 1):
        tp += h
        points.append((tp / len(gts), tp / rank))
    total = 0.0
    for r in range(101):
        level = r / 100
        best = [p for rec, p in points if rec >= level - 1e-15]
        total += max(best) if best else 0.0
    return total / 101


def random_case(seed):
    rng = np.random.default_rng(seed)
    gts, dets = [], []
    for img in ("a", "b", "c")[: rng.integers(1, 4)]:
        for _ in range(rng.integers(0, 5)):
            x, y = rng.uniform(0, 80, 2)
            gts.append((img, (x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30))))
        for _ in range(rng.integers(0, 7)):
            if gts and rng.uniform() < 0.6:
                _, g = gts[rng.integers(len(gts))]
                j = rng.normal(0, 3, 4)
                box = (g[0] + j[0], g[1] + j[1], max(g[2] + j[2], g[0] + j[0] + 1), max(g[3] + j[3], g[1] + j[1] + 1))
            else:
                x, y = rng.uniform(0, 80, 2)
                box = (x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30))
            dets.append((img, box, float(np.round(rng.uniform(), 2))))
    return dets, gts


def to_objects(dets, gts):
    return ([Detection(BBox(*b), s, i) for i, b, s in dets], [GroundTruth(BBox(*b), i) for i, b in gts])


@pytest.mark.parametrize("seed", range(100))
def test_ap_matches_brute_force_oracle(seed):
    dets, gts = random_case(seed)
    D, G = to_objects(dets, gts)
    for thr in (0.5, 0.75):
        assert average_precision(D, G, thr) == pytest.approx(oracle_ap(dets, gts, thr), abs=1e-12)


def test_worked_ap_example():
    gts = [("i", (0, 0, 10, 10)), ("i", (20, 0, 30, 10))]
    dets = [("i", (0, 0, 10, 10), 0.9), ("i", (50, 50, 60, 60), 0.8), ("i", (20, 0, 30, 10), 0.7)]
    expected = (51 + (2 / 3) * 50) / 101
    assert oracle_ap(dets, gts, 0.5) == pytest.approx(expected, abs=1e-12)
    assert ap50(*to_objects(dets, gts)) == pytest.approx(expected, abs=1e-12)


def test_single_detection_iou_06():
    # a 10x10 ground truth and a shifted box with IoU exactly 0.6
    gt = BBox(0, 0, 10, 10)
    det = BBox(2.5, 0, 12.5, 10)
    assert abs((75 / 125) - 0.6) < 1e-12
    D, G = [Detection(det, 0.9, "x")], [GroundTruth(gt, "x")]
    # IoU 0.6 clears 0.50, 0.55, 0.60 of the ten thresholds
    assert coco_ap(D, G) == pytest.approx(0.3, abs=1e-12)
    assert average_recall(D, G) == pytest.approx(0.3, abs=1e-12)


def test_ap_perfect_and_empty():
    g = [GroundTruth(BBox(0, 0, 10, 10), "x")]
    assert coco_ap([Detection(BBox(0, 0, 10, 10), 0.5, "x")], g) == 1.0
    assert coco_ap([], g) == 0.0
    assert coco_ap([], []) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_ap_invariant_to_monotone_score_transform(seed):
    dets, gts = random_case(seed)
    D, G = to_objects(dets, gts)
    warped = [Detection(d.bbox, float(np.exp(3 * d.score) - 7), d.image_id) for d in D]
    assert coco_ap(D, G) == coco_ap(warped, G)


@pytest.mark.parametrize("seed", range(20))
def test_ap_antitone_in_iou_threshold(seed):
    D, G = to_objects(*random_case(seed))
    values = [average_precision(D, G, t) for t in np.linspace(0.3, 0.95, 14)]
    assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


def test_match_detections_prefers_higher_iou():
    gts = [GroundTruth(BBox(0, 0, 10, 10), "x"), GroundTruth(BBox(2, 0, 12, 10), "x")]
    dets = [Detection(BBox(2, 0, 12, 10), 0.9, "x")]
    result = match_detections(dets, gts, 0.5)
    assert result.tp == [True] and result.gt_matched == [False, True]
    with pytest.raises(ValueError):
        match_detections(dets, gts, 0.0)


def test_center_metric():
    g = [GroundTruth(BBox(0, 0, 10, 10), "x")]
    # IoU is low but the centre (5, 5) lies inside the ground truth
    d = [Detection(BBox(4, 4, 6, 6), 0.9, "x")]
    assert ap50(d, g) == 0.0
    assert center_metric(d, g) == (1.0, 1.0)


def test_precision_recall_and_curve():
    gts = [GroundTruth(BBox(0, 0, 10, 10), "i"), GroundTruth(BBox(20, 0, 30, 10), "i")]
    dets = [Detection(BBox(0, 0, 10, 10), 0.9, "i"), Detection(BBox(50, 50, 60, 60), 0.8, "i")]
    assert precision_recall_at(dets, gts) == (0.5, 0.5)
    assert pr_curve(dets, gts) == [(0.5, 1.0), (0.5, 0.5)]


def test_top1():
    assert top1_accuracy([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    with pytest.raises(LengthMismatch):
        top1_accuracy([1], [1, 2])
    with pytest.raises(ValueError):
        top1_accuracy([], [])


def test_detection_rejects_nan_score():
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), float("nan"), "x")
