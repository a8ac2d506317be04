import json

import numpy as np
import pytest

from pw2ss.errors import DegenerateDataset, DisjointInputs, EmptyPatch
from pw2ss.gui_core import ICON_CATEGORIES, OTHER_CATEGORY, BBox, ScreenSentence, iou, parse_vh
from pw2ss.label_gen import (
    LabelGenConfig,
    OcrLine,
    ProposalClassifier,
    clean_screens,
    extract_text_pixel_words,
    graphic_proposals,
    map_icon_category,
    patch_features,
    score_proposals,
    spaced_regions,
    train_proposal_classifier,
)

CFG = LabelGenConfig()


def vh_of(*children, width=200, height=200):
    root = {"class": "FrameLayout", "bounds": [0, 0, width, height], "clickable": False,
            "children": list(children)}
    return parse_vh(json.dumps({"screen_id": "s", "width": width, "height": height, "root": root}))


def n(cls, bounds, clickable=False, children=(), text=None):
    out = {"class": cls, "bounds": list(bounds), "clickable": clickable, "children": list(children)}
    if text:
        out["text"] = text
    return out


def test_text_from_text_node():
    vh = vh_of(n("TextView", (0, 0, 100, 50), clickable=True))
    words = extract_text_pixel_words(vh, [OcrLine("Hello", BBox(10, 10, 60, 30))], CFG)
    assert len(words) == 1
    assert words[0].text == "Hello" and words[0].bbox == BBox(10, 10, 60, 30)
    assert words[0].clickable is True


def test_text_needs_text_class():
    vh = vh_of(n("ImageView", (0, 0, 100, 50)))
    assert extract_text_pixel_words(vh, [OcrLine("Hello", BBox(10, 10, 60, 30))], CFG) == []


def test_text_is_per_line():
    vh = vh_of(n("android.widget.TextView", (0, 0, 100, 50)))
    lines = [OcrLine("one", BBox(0, 0, 50, 20)), OcrLine("two", BBox(0, 25, 50, 45))]
    assert [w.text for w in extract_text_pixel_words(vh, lines, CFG)] == ["one", "two"]


def test_text_keyword_matching_is_case_insensitive_substring():
    vh = vh_of(n("com.app.FancyLabelWidget", (0, 0, 100, 50)))
    assert len(extract_text_pixel_words(vh, [OcrLine("x", BBox(0, 0, 10, 10))], CFG)) == 1


def test_spaced_regions_examples():
    parent = BBox(0, 0, 100, 100)
    assert spaced_regions(parent, BBox(20, 40, 80, 60)) == [
        BBox(0, 0, 100, 40), BBox(0, 60, 100, 100), BBox(0, 0, 20, 100), BBox(80, 0, 100, 100)]
    assert len(spaced_regions(parent, BBox(0, 40, 80, 60))) == 3
    assert spaced_regions(parent, parent) == []
    with pytest.raises(DisjointInputs):
        spaced_regions(parent, BBox(200, 200, 300, 300))


def _interiors_overlap(a, b):
    return min(a.x_max, b.x_max) > max(a.x_min, b.x_min) and min(a.y_max, b.y_max) > max(a.y_min, b.y_min)


def test_spaced_regions_property_1000_pairs():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        px = np.sort(rng.uniform(0, 500, 2))
        py = np.sort(rng.uniform(0, 500, 2))
        tx = np.sort(rng.uniform(px[0] - 50, px[1] + 50, 2))
        ty = np.sort(rng.uniform(py[0] - 50, py[1] + 50, 2))
        parent, text = BBox(px[0], py[0], px[1], py[1]), BBox(tx[0], ty[0], tx[1], ty[1])
        if text.intersection(parent) is None:
            with pytest.raises(DisjointInputs):
                spaced_regions(parent, text)
            continue
        regions = spaced_regions(parent, text)
        assert len(regions) <= 4
        for r in regions:
            assert parent.contains(r)
            assert r.width() > 0 and r.height() > 0
            assert not _interiors_overlap(r, text)
        checked += 1


def test_graphic_proposals_from_candidate_node():
    vh = vh_of(n("ImageView", (10, 10, 50, 50)))
    assert graphic_proposals(vh, [], CFG) == [BBox(10, 10, 50, 50)]


def test_graphic_proposals_from_candidate_ancestor():
    vh = vh_of(n("ImageButton", (10, 10, 50, 50), children=[n("View", (12, 12, 40, 40))]))
    assert graphic_proposals(vh, [], CFG) == [BBox(10, 10, 50, 50), BBox(12, 12, 40, 40)]


def test_graphic_proposals_spaced_only():
    vh = vh_of(n("LinearLayout", (0, 0, 100, 100)))
    got = graphic_proposals(vh, [BBox(20, 40, 80, 60)], CFG)
    assert got == spaced_regions(BBox(0, 0, 100, 100), BBox(20, 40, 80, 60))


def test_graphic_proposals_dedup_and_min_side():
    vh = vh_of(n("LinearLayout", (0, 0, 100, 100), children=[n("ImageView", (0, 0, 100, 40))]),
               n("ImageView", (150, 150, 152, 190)))
    got = graphic_proposals(vh, [BBox(20, 40, 80, 60)], CFG)
    assert got.count(BBox(0, 0, 100, 40)) == 1
    assert all(b.width() >= CFG.min_proposal_side and b.height() >= CFG.min_proposal_side for b in got)


def test_patch_features_examples():
    white = np.full((20, 20, 3), 255, dtype=np.uint8)
    f = patch_features(white, BBox(0, 0, 10, 10))
    assert f[3] == 0 and f[4] == 0 and f[5] == 0
    assert patch_features(white, BBox(0, 0, 20, 20))[0] == 1.0
    half = white.copy()
    half[0:10, 0:5] = 0
    assert patch_features(half, BBox(0, 0, 10, 10))[5] == 0.5
    with pytest.raises(EmptyPatch):
        patch_features(white, BBox(30, 30, 40, 40))


def _toy_set():
    rng = np.random.default_rng(0)
    X = np.zeros((20, 6))
    X[:, :2] = rng.normal(size=(20, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 1.0, -1.0)
    return X, y


def test_classifier_separable_toy():
    X, y = _toy_set()
    clf = ProposalClassifier(epochs=500).fit(X, y)
    assert (clf.predict(X) == y).all()
    # exhaustive check of the learned boundary: every positive scores above every negative
    s = clf.decision_function(X)
    assert s[y == 1].min() > 0 > s[y == 0].max()


def test_classifier_degenerate_and_deterministic():
    X, y = _toy_set()
    with pytest.raises(DegenerateDataset):
        ProposalClassifier().fit(X, np.ones(20, dtype=int))
    a = train_proposal_classifier(list(zip(X, y)), epochs=50, seed=3)
    b = train_proposal_classifier(list(zip(X, y)), epochs=50, seed=3)
    assert np.array_equal(a.coef_, b.coef_) and a.intercept_ == b.intercept_
    probs = a.predict_proba(X)
    assert np.allclose(probs.sum(axis=1), 1.0) and ((probs > 0) & (probs < 1)).all()


class FixedScores:
    """Stand-in classifier returning preset probabilities in proposal order."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def predict_proba(self, X):
        return np.column_stack([1 - self.scores[:len(X)], self.scores[:len(X)]])


RASTER = np.full((100, 100, 3), 255, dtype=np.uint8)


def test_score_proposals_threshold_and_suppression():
    box = BBox(10, 10, 30, 30)
    words = score_proposals(RASTER, [box], FixedScores([0.9]), CFG)
    assert len(words) == 1 and words[0].category == OTHER_CATEGORY and words[0].bbox == box
    assert score_proposals(RASTER, [box], FixedScores([0.4]), CFG) == []
    words = score_proposals(RASTER, [box, box], FixedScores([0.8, 0.9]), CFG)
    assert len(words) == 1


def test_score_proposals_monotone_in_threshold():
    rng = np.random.default_rng(1)
    boxes = []
    for _ in range(12):
        x, y = rng.uniform(0, 80, 2)
        boxes.append(BBox(x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)))
    scores = rng.uniform(size=12)
    previous = None
    for thr in (0.1, 0.3, 0.5, 0.7, 0.9):
        cfg = LabelGenConfig(score_thres=thr)
        kept = {w.bbox for w in score_proposals(RASTER, boxes, FixedScores(scores), cfg)}
        assert kept <= set(boxes)
        survivors = {b for b, s in zip(boxes, scores) if s > thr}
        assert kept <= survivors
        if previous is not None:
            assert len(survivors) <= len(previous)
        previous = survivors


def test_map_icon_category():
    assert map_icon_category("search") == ICON_CATEGORIES.index("search")
    assert map_icon_category("SHARE") == ICON_CATEGORIES.index("share")
    assert map_icon_category("unknown_widget_7") == OTHER_CATEGORY


def _screen(sid):
    return ScreenSentence(sid, 10, 10, [])


def test_clean_rule_examples():
    items = [(_screen("a"), 3, 10), (_screen("b"), 9, 10), (_screen("c"), 0, 0)]
    kept, report = clean_screens(items, CFG)
    assert [k[0].screen_id for k in kept] == ["b", "c"]
    assert report.dropped[0][0] == "a" and report.dropped[0][1] == pytest.approx(0.7)
    again, _ = clean_screens(kept, CFG)
    assert again == kept
