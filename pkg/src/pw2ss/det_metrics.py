"""COCO-style detection metrics (single class), the Center criterion, top-1 accuracy."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .errors import LengthMismatch
from .gui_core import BBox, center_hit, iou

COCO_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    image_id: str

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass(frozen=True)
class GroundTruth:
    bbox: BBox
    image_id: str


@dataclass
class MatchResult:
    order: List[int]          # detection indices by descending score
    tp: List[bool]            # aligned with ``order``
    gt_matched: List[bool]


def _greedy_match(dets, gts, hit: Callable[[BBox, BBox], bool]) -> MatchResult:
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    matched = [False] * len(gts)
    tp = []
    for k in order:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if matched[g] or not hit(dets[k].bbox, gt.bbox):
                continue
            overlap = iou(dets[k].bbox, gt.bbox)
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best >= 0:
            matched[best] = True
        tp.append(best >= 0)
    return MatchResult(order, tp, matched)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float) -> MatchResult:
    """Greedy one-to-one matching within a single image.

    Detections go in descending score (input order breaks ties); each takes
    the unmatched ground truth of highest IoU at or above ``iou_thr``.
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError("iou_thr must lie in (0, 1]")
    return _greedy_match(list(dets), list(gts), lambda d, g: iou(d, g) >= iou_thr)


def _by_image(dets, gts):
    groups: Dict[str, Tuple[list, list]] = OrderedDict()
    for d in dets:
        groups.setdefault(d.image_id, ([], []))[0].append(d)
    for g in gts:
        groups.setdefault(g.image_id, ([], []))[1].append(g)
    return groups


def _pooled_matches(dets, gts, hit, max_dets=None):
    """Score-ordered TP flags over all images plus the ground-truth count."""
    scored = []  # (-score, global input index, is_tp)
    rank = {id(d): k for k, d in enumerate(dets)}
    for image_dets, image_gts in _by_image(dets, gts).values():
        if max_dets is not None:
            keep = sorted(range(len(image_dets)), key=lambda k: -image_dets[k].score)[:max_dets]
            image_dets = [image_dets[k] for k in sorted(keep)]
        result = _greedy_match(image_dets, image_gts, hit)
        for k, flag in zip(result.order, result.tp):
            d = image_dets[k]
            scored.append((-d.score, rank[id(d)], flag))
    scored.sort(key=lambda t: (t[0], t[1]))
    return np.array([t[2] for t in scored], dtype=bool), len(gts)


def interpolated_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    """101-point interpolated area under the precision-recall curve."""
    if n_gt == 0:
        return 1.0 if len(tp_flags) == 0 else 0.0
    if len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.sum() / len(RECALL_POINTS))


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float) -> float:
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError("iou_thr must lie in (0, 1]")
    flags, n_gt = _pooled_matches(list(dets), list(gts), lambda d, g: iou(d, g) >= iou_thr)
    return interpolated_ap(flags, n_gt)


def coco_ap(dets, gts) -> float:
    return float(np.mean([average_precision(dets, gts, t) for t in COCO_IOU_THRESHOLDS]))


def ap50(dets, gts) -> float:
    return average_precision(dets, gts, 0.5)


def ap75(dets, gts) -> float:
    return average_precision(dets, gts, 0.75)


def _recall(dets, gts, hit, max_dets=None) -> float:
    flags, n_gt = _pooled_matches(list(dets), list(gts), hit, max_dets)
    if n_gt == 0:
        return 1.0 if len(flags) == 0 else 0.0
    return float(flags.sum() / n_gt)


def average_recall(dets, gts, max_dets: int = 100) -> float:
    """Recall of the top ``max_dets`` detections per image, averaged over IoU .50:.05:.95."""
    return float(np.mean([_recall(dets, gts, lambda d, g, t=t: iou(d, g) >= t, max_dets)
                          for t in COCO_IOU_THRESHOLDS]))


def center_metric(dets, gts) -> Tuple[float, float]:
    """(recall, AP) where a detection counts when its centre lies in the ground truth."""
    flags, n_gt = _pooled_matches(list(dets), list(gts), center_hit)
    if n_gt == 0:
        recall = 1.0 if len(flags) == 0 else 0.0
    else:
        recall = float(flags.sum() / n_gt)
    return recall, interpolated_ap(flags, n_gt)


def precision_recall_at(dets, gts, iou_thr: float = 0.5) -> Tuple[float, float]:
    flags, n_gt = _pooled_matches(list(dets), list(gts), lambda d, g: iou(d, g) >= iou_thr)
    n_tp = int(flags.sum())
    precision = n_tp / len(flags) if len(flags) else (1.0 if n_gt == 0 else 0.0)
    recall = n_tp / n_gt if n_gt else (1.0 if not len(flags) else 0.0)
    return float(precision), float(recall)


def pr_curve(dets, gts, iou_thr: float = 0.5) -> List[Tuple[float, float]]:
    """(recall, precision) after each detection in score order."""
    flags, n_gt = _pooled_matches(list(dets), list(gts), lambda d, g: iou(d, g) >= iou_thr)
    if not len(flags) or not n_gt:
        return []
    tp = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    return [(float(r), float(p)) for r, p in zip(tp / n_gt, tp / ranks)]


def top1_accuracy(preds: Sequence[int], gts: Sequence[int]) -> float:
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} labels")
    if not len(gts):
        raise ValueError("top-1 accuracy of an empty set is undefined")
    return float(np.mean(np.asarray(preds) == np.asarray(gts)))


def detection_report(dets, gts, max_dets: int = 100) -> Dict[str, float]:
    center_recall, center_ap = center_metric(dets, gts)
    precision, recall = precision_recall_at(dets, gts, 0.5)
    return {
        "AR": average_recall(dets, gts, max_dets),
        "AP": coco_ap(dets, gts),
        "AP50": ap50(dets, gts),
        "AP75": ap75(dets, gts),
        "center_recall": center_recall,
        "center_ap": center_ap,
        "precision50": precision,
        "recall50": recall,
    }
