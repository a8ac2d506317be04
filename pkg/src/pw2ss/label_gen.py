"""Pixel-Word pseudo-labels from View-Hierarchy metadata, OCR and the screenshot."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import DegenerateDataset, DisjointInputs, EmptyPatch
from .gui_core import (
    BBox,
    ICON_CATEGORIES,
    OTHER_CATEGORY,
    PixelWord,
    ScreenSentence,
    ViewHierarchy,
    ViewNode,
    iou,
)
from .nn import AdamW, OptimizerConfig, Parameter, Tape, ops
from .validation import check_binary_labels, check_features, check_is_fitted_attr

N_PATCH_FEATURES = 6
PATCH_FEATURE_NAMES = ("relative_area", "aspect_ratio", "mean_luminance",
                       "luminance_variance", "edge_density", "non_background_fraction")

DEFAULT_TEXT_KEYWORDS = frozenset({"text", "label", "button"})
DEFAULT_GRAPHIC_CLASSES = frozenset({
    "ImageView", "ImageButton", "Icon", "Image", "CheckBox", "RadioButton",
    "Switch", "ToggleButton",
})


@dataclass(frozen=True)
class OcrLine:
    text: str
    bbox: BBox

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("OCR line text must be non-empty")


@dataclass
class LabelGenConfig:
    text_class_keywords: FrozenSet[str] = DEFAULT_TEXT_KEYWORDS
    graphic_class_candidates: FrozenSet[str] = DEFAULT_GRAPHIC_CLASSES
    score_thres: float = 0.5
    clean_rel_mismatch: float = 0.5
    min_proposal_side: float = 4.0
    suppress_iou: float = 0.5

    def __post_init__(self):
        self.text_class_keywords = frozenset(k.lower() for k in self.text_class_keywords)
        self.graphic_class_candidates = frozenset(self.graphic_class_candidates)
        if not self.text_class_keywords or not self.graphic_class_candidates:
            raise ValueError("class-name sets must be non-empty")
        if not 0.0 < self.score_thres < 1.0:
            raise ValueError("score_thres must lie in (0, 1)")
        if not 0.0 < self.clean_rel_mismatch <= 1.0:
            raise ValueError("clean_rel_mismatch must lie in (0, 1]")
        if self.min_proposal_side < 0:
            raise ValueError("min_proposal_side must be >= 0")

    def to_dict(self):
        return {
            "text_class_keywords": sorted(self.text_class_keywords),
            "graphic_class_candidates": sorted(self.graphic_class_candidates),
            "score_thres": self.score_thres,
            "clean_rel_mismatch": self.clean_rel_mismatch,
            "min_proposal_side": self.min_proposal_side,
            "suppress_iou": self.suppress_iou,
        }


def _is_text_node(node: ViewNode, cfg: LabelGenConfig) -> bool:
    name = node.class_name.lower()
    return any(k in name for k in cfg.text_class_keywords)


def _is_graphic_class(class_name: str, cfg: LabelGenConfig) -> bool:
    cands = cfg.graphic_class_candidates
    return class_name in cands or class_name.rsplit(".", 1)[-1] in cands


def text_nodes(vh: ViewHierarchy, cfg: LabelGenConfig) -> List[ViewNode]:
    return [n for n in vh.nodes() if _is_text_node(n, cfg)]


def vh_text_count(vh: ViewHierarchy, cfg: LabelGenConfig) -> int:
    """Text-class nodes that actually carry text."""
    return sum(1 for n in text_nodes(vh, cfg) if n.text and n.text.strip())


def extract_text_pixel_words(vh: ViewHierarchy, ocr: Sequence[OcrLine], cfg: LabelGenConfig) -> List[PixelWord]:
    """One text Pixel-Word per OCR line whose centre falls in a text-class node.

    Clickability comes from the deepest such node.
    """
    candidates = [(node, depth) for node, depth in vh.nodes_with_depth() if _is_text_node(node, cfg)]
    out = []
    for line in ocr:
        cx, cy = line.bbox.center()
        best, best_depth = None, -1
        for node, depth in candidates:
            if node.bounds.contains_point(cx, cy) and depth >= best_depth:
                best, best_depth = node, depth
        if best is not None:
            out.append(PixelWord.make_text(line.text, line.bbox, clickable=best.clickable))
    return out


def spaced_regions(parent: BBox, text: BBox) -> List[BBox]:
    """Regions between a text box and the four sides of its parent.

    Returned in the order top, bottom, left, right; degenerate ones dropped.
    """
    inside = text.intersection(parent)
    if inside is None:
        raise DisjointInputs(f"text {text.as_list()} does not meet parent {parent.as_list()}")
    p, t = parent, inside
    regions = [
        (p.x_min, p.y_min, p.x_max, t.y_min),
        (p.x_min, t.y_max, p.x_max, p.y_max),
        (p.x_min, p.y_min, t.x_min, p.y_max),
        (t.x_max, p.y_min, p.x_max, p.y_max),
    ]
    return [BBox(*r) for r in regions if r[2] - r[0] > 0 and r[3] - r[1] > 0]


def parent_of_text(vh: ViewHierarchy, text: BBox) -> Optional[BBox]:
    """Bounds of the deepest node that contains ``text`` and is not equal to it."""
    best, best_depth = None, -1
    for node, depth in vh.nodes_with_depth():
        b = node.bounds
        if b.contains(text) and b != text and depth > best_depth:
            best, best_depth = b, depth
    return best


def graphic_proposals(vh: ViewHierarchy, text_boxes: Sequence[BBox], cfg: LabelGenConfig) -> List[BBox]:
    proposals: List[BBox] = []
    for node in vh.nodes():
        if _is_graphic_class(node.class_name, cfg) or any(
                _is_graphic_class(a, cfg) for a in node.ancestors):
            proposals.append(node.bounds)
    for text in text_boxes:
        parent = parent_of_text(vh, text)
        if parent is None:
            continue
        try:
            proposals.extend(spaced_regions(parent, text))
        except DisjointInputs:
            continue
    side = cfg.min_proposal_side
    seen = set()
    out = []
    for box in proposals:
        if box.width() < side or box.height() < side:
            continue
        key = tuple(box.as_list())
        if key in seen:
            continue
        seen.add(key)
        out.append(box)
    return out


# -- screenshot patches ---------------------------------------------------------

def background_color(raster: np.ndarray) -> Tuple[int, int, int]:
    """Most frequent RGB colour; ties go to the smallest packed value."""
    flat = raster.reshape(-1, 3).astype(np.int64)
    packed = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    values, counts = np.unique(packed, return_counts=True)
    v = int(values[np.argmax(counts)])
    return (v >> 16) & 255, (v >> 8) & 255, v & 255


def _luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64) / 255.0
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def patch_features(raster: np.ndarray, bbox: BBox, background=None) -> np.ndarray:
    """[relative area, aspect ratio, mean luminance, luminance variance,
    edge density, non-background fraction] for the clamped box."""
    raster = np.asarray(raster)
    H, W = raster.shape[:2]
    box = bbox.clamp(W, H)
    if box.area() <= 0:
        raise EmptyPatch(f"box {bbox.as_list()} has no area inside the {W}x{H} screenshot")
    x0, y0 = int(np.floor(box.x_min)), int(np.floor(box.y_min))
    x1, y1 = int(np.ceil(box.x_max)), int(np.ceil(box.y_max))
    patch = raster[y0:y1, x0:x1]
    if patch.size == 0:
        raise EmptyPatch(f"box {bbox.as_list()} covers no pixels")
    if background is None:
        background = background_color(raster)
    lum = _luminance(patch)
    dx = np.abs(np.diff(lum, axis=1)).mean() if lum.shape[1] > 1 else 0.0
    dy = np.abs(np.diff(lum, axis=0)).mean() if lum.shape[0] > 1 else 0.0
    non_bg = np.any(patch[..., :3] != np.asarray(background, dtype=patch.dtype), axis=-1).mean()
    return np.array([
        box.area() / float(W * H),
        box.width() / box.height(),
        lum.mean(),
        lum.var(),
        dx + dy,
        non_bg,
    ])


class ProposalClassifier(ClassifierMixin, BaseEstimator):
    """Logistic model over standardised patch features.

    Trained by full-batch AdamW on the binary cross-entropy.
    """

    def __init__(self, epochs=500, lr=0.05, weight_decay=0.0, seed=0):
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        X = check_features(X, N_PATCH_FEATURES)
        y = check_binary_labels(y, X.shape[0])
        if len(np.unique(y)) < 2:
            raise DegenerateDataset("proposal classifier needs both positive and negative patches")
        self.classes_ = np.array([0, 1])
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        Z = (X - self.mean_) / self.scale_
        rng = np.random.default_rng(self.seed)
        w = Parameter(rng.normal(0.0, 0.01, size=X.shape[1]), name="weight")
        b = Parameter(np.zeros(1), name="bias")
        opt = AdamW([w, b], OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay))
        self.loss_history_ = []
        for _ in range(self.epochs):
            opt.zero_grad()
            with Tape() as tape:
                logits = ops.reshape(ops.linear(Z, ops.reshape(w, (-1, 1)), b), (-1,))
                loss = ops.bce_with_logits(logits, y)
            tape.backward(loss)
            opt.step()
            self.loss_history_.append(float(loss.data))
        self.coef_ = w.data.copy()
        self.intercept_ = float(b.data[0])
        return self

    def decision_function(self, X):
        check_is_fitted_attr(self, "coef_")
        X = check_features(X, N_PATCH_FEATURES)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p1 = ops.sigmoid(self.decision_function(X)).data
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    def state_dict(self):
        check_is_fitted_attr(self, "coef_")
        return {"coef": self.coef_, "intercept": np.array([self.intercept_]),
                "mean": self.mean_, "scale": self.scale_}

    @classmethod
    def from_state(cls, state, **params):
        clf = cls(**params)
        clf.classes_ = np.array([0, 1])
        clf.coef_ = np.asarray(state["coef"], dtype=np.float64)
        clf.intercept_ = float(np.asarray(state["intercept"]).reshape(-1)[0])
        clf.mean_ = np.asarray(state["mean"], dtype=np.float64)
        clf.scale_ = np.asarray(state["scale"], dtype=np.float64)
        return clf


def train_proposal_classifier(patches, epochs=500, seed=0, **params) -> ProposalClassifier:
    """``patches`` is a sequence of (features, label) pairs."""
    patches = list(patches)
    if not patches:
        raise DegenerateDataset("no training patches")
    X = np.stack([np.asarray(f, dtype=np.float64) for f, _ in patches])
    y = np.asarray([int(label) for _, label in patches])
    return ProposalClassifier(epochs=epochs, seed=seed, **params).fit(X, y)


def score_proposals(raster, proposals: Sequence[BBox], clf: ProposalClassifier,
                    cfg: LabelGenConfig, return_scores=False):
    """Graphic Pixel-Words for proposals scoring above ``cfg.score_thres``.

    Overlapping survivors (IoU above ``cfg.suppress_iou``) keep only the higher
    score; results stay in proposal order with category "other".
    """
    proposals = list(proposals)
    if not proposals:
        return ([], []) if return_scores else []
    bg = background_color(raster)
    feats = []
    for box in proposals:
        try:
            feats.append(patch_features(raster, box, bg))
        except EmptyPatch:
            feats.append(None)
    valid = [k for k, f in enumerate(feats) if f is not None]
    scores = np.zeros(len(proposals))
    if valid:
        scores[valid] = clf.predict_proba(np.stack([feats[k] for k in valid]))[:, 1]
    alive = [k for k in valid if scores[k] > cfg.score_thres]
    alive.sort(key=lambda k: -scores[k])
    kept: List[int] = []
    for k in alive:
        if all(iou(proposals[k], proposals[j]) <= cfg.suppress_iou for j in kept):
            kept.append(k)
    kept.sort()
    words = [PixelWord.make_graphic(OTHER_CATEGORY, proposals[k]) for k in kept]
    if return_scores:
        return words, [float(scores[k]) for k in kept]
    return words


def map_icon_category(raw_label: str) -> int:
    key = raw_label.strip().lower()
    try:
        return ICON_CATEGORIES.index(key)
    except ValueError:
        return OTHER_CATEGORY


@dataclass
class CleanReport:
    kept: List[str] = field(default_factory=list)
    dropped: List[Tuple[str, float]] = field(default_factory=list)


def count_mismatch(vh_count: int, ocr_count: int) -> float:
    return abs(ocr_count - vh_count) / max(ocr_count, vh_count, 1)


def clean_screens(screens, cfg: LabelGenConfig):
    """Drop screens whose OCR and VH text counts disagree too much.

    ``screens`` holds (ScreenSentence, vh_text_count, ocr_text_count) triples;
    returns the kept triples and a report.
    """
    kept, report = [], CleanReport()
    for item in screens:
        screen, vh_n, ocr_n = item
        if vh_n < 0 or ocr_n < 0:
            raise ValueError("text counts must be >= 0")
        ratio = count_mismatch(vh_n, ocr_n)
        if ratio > cfg.clean_rel_mismatch:
            report.dropped.append((screen.screen_id, ratio))
        else:
            kept.append(item)
            report.kept.append(screen.screen_id)
    return kept, report


def _clickable_at(vh: ViewHierarchy, box: BBox) -> bool:
    cx, cy = box.center()
    best, best_depth = False, -1
    for node, depth in vh.nodes_with_depth():
        if node.bounds.contains_point(cx, cy) and depth >= best_depth:
            best, best_depth = node.clickable, depth
    return best


@dataclass
class ScreenLabels:
    sentence: ScreenSentence
    graphic_scores: List[float]
    vh_text_count: int
    ocr_text_count: int


def generate_pixel_words(vh: ViewHierarchy, ocr: Sequence[OcrLine], raster, clf: ProposalClassifier,
                         cfg: LabelGenConfig, raster_path=None, graphic_classifier=None) -> ScreenLabels:
    """Full pseudo-labelling for one screen.

    ``graphic_classifier``, when given, maps (raster, bbox) to an icon category;
    otherwise graphics keep the "other" category.
    """
    texts = extract_text_pixel_words(vh, ocr, cfg)
    proposals = graphic_proposals(vh, [t.bbox for t in texts], cfg)
    graphics, scores = score_proposals(raster, proposals, clf, cfg, return_scores=True)
    for g in graphics:
        g.clickable = _clickable_at(vh, g.bbox)
        if graphic_classifier is not None:
            g.category = int(graphic_classifier(raster, g.bbox))
    sentence = ScreenSentence(vh.screen_id, vh.screen_width, vh.screen_height,
                              texts + graphics, raster_path=raster_path)
    return ScreenLabels(sentence, scores, vh_text_count(vh, cfg), len(ocr))
