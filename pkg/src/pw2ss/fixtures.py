"""Synthetic screens with exact ground truth.

Screens are rendered from layout templates in three families (settings lists,
avatar lists, image galleries). Text is drawn as striped rectangles and
graphics as filled shapes on a white background; the View Hierarchy, the OCR
lines and the ground-truth Screen-Sentence all come from the same geometry.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .dataio import box_record, ocr_to_dict, screen_to_dict, write_jsonl, write_ppm
from .errors import IoFailure
from .gui_core import ICON_CATEGORIES, BBox, PixelWord, ScreenSentence, iou, parse_vh
from .label_gen import LabelGenConfig, OcrLine, graphic_proposals, background_color, patch_features

FAMILIES = ("settings", "list", "gallery")
WHITE = (255, 255, 255)
INK = (40, 40, 40)
PALETTE = ((219, 68, 55), (15, 157, 88), (66, 133, 244), (244, 160, 0), (171, 71, 188),
           (0, 172, 193), (255, 112, 67), (92, 107, 192), (124, 179, 66), (141, 110, 99))
WORDS = ("account", "alarm", "battery", "bluetooth", "display", "sound", "storage", "privacy",
         "network", "wifi", "location", "language", "backup", "about", "help", "profile",
         "messages", "photos", "music", "video", "news", "weather", "sports", "travel",
         "recipes", "notes", "calendar", "contacts", "maps", "shopping", "offers", "orders")
SETTINGS_ICONS = ("settings", "location", "call", "camera", "calendar", "favorite", "download",
                  "edit", "filter", "share", "microphone", "refresh")
ACTION_ICONS = ("search", "more", "menu", "share", "add", "cart", "filter", "settings")
ROW_END_ICONS = ("arrow_forward", "more", "check", "delete", "chat", "send", "play", "close")


@dataclass
class FixtureSpec:
    seed: int = 0
    n_screens: int = 64
    app_classes: int = 26
    width: int = 180
    height: int = 320
    families: Tuple[str, ...] = FAMILIES

    def __post_init__(self):
        if self.n_screens < 1:
            raise ValueError("n_screens must be >= 1")
        if not 1 <= self.app_classes <= 26:
            raise ValueError("app_classes must lie in 1..26")
        if self.width < 120 or self.height < 200:
            raise ValueError("screens must be at least 120x200 pixels")
        self.families = tuple(self.families)
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ValueError(f"families must be drawn from {FAMILIES}")

    def to_dict(self):
        d = asdict(self)
        d["families"] = list(self.families)
        return d


# -- templates -------------------------------------------------------------------

@dataclass
class Template:
    template_id: int
    family: str
    title: str
    action: Optional[int]          # category of the top-bar action icon, if any
    rows: List[dict]
    icon_color: Tuple[int, int, int]
    decoy: bool
    broken_node: bool


def _cat(name):
    return ICON_CATEGORIES.index(name)


def make_template(template_id: int, spec: FixtureSpec) -> Template:
    rng = np.random.default_rng([spec.seed, 7919, template_id])
    family = spec.families[template_id % len(spec.families)]
    title = " ".join(rng.choice(WORDS, size=2, replace=False))
    action = _cat(str(rng.choice(ACTION_ICONS))) if rng.random() < 0.6 else None
    rows = []
    if family == "gallery":
        n_rows = int(rng.integers(1, 4))
        for _ in range(n_rows):
            rows.append({"tiles": [{"bare": bool(rng.random() < 0.3),
                                    "words": list(rng.choice(WORDS, size=3, replace=False))}
                                   for _ in range(2)]})
    else:
        row_h = 32 if family == "settings" else 48
        max_rows = (spec.height - 40) // row_h
        n_rows = int(rng.integers(max(2, max_rows - 4), max_rows + 1))
        for _ in range(n_rows):
            left = str(rng.choice(["node", "node", "bare", "none"]))
            icons = SETTINGS_ICONS if family == "settings" else ("avatar",)
            rows.append({
                "left": left,
                "left_cat": _cat(str(rng.choice(icons))),
                "right": bool(rng.random() < 0.4),
                "right_cat": _cat(str(rng.choice(ROW_END_ICONS))),
                "words": list(rng.choice(WORDS, size=3, replace=False)),
            })
    color = tuple(int(c) for c in PALETTE[int(rng.integers(len(PALETTE)))])
    return Template(template_id, family, title, action, rows, color,
                    decoy=bool(rng.random() < 0.5), broken_node=bool(rng.random() < 0.25))


# -- rendering -------------------------------------------------------------------

class _Screen:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.image = np.full((height, width, 3), 255, dtype=np.uint8)
        self.words: List[PixelWord] = []
        self.groups: List[int] = []
        self.ocr: List[OcrLine] = []

    def text(self, box, content, clickable, group):
        x0, y0, x1, y1 = box
        for y in range(y0, y1):
            if (y - y0) // 2 % 2 == 0:
                self.image[y, x0:x1] = INK
        bbox = BBox(*box)
        self.words.append(PixelWord.make_text(content, bbox, clickable))
        self.groups.append(group)
        self.ocr.append(OcrLine(content, bbox))

    def graphic(self, box, category, color, clickable, group, shape=None):
        x0, y0, x1, y1 = box
        shape = shape or ("circle" if category == _cat("avatar") else "square" if category % 3 == 0
                          else "diamond" if category % 3 == 1 else "circle")
        yy, xx = np.mgrid[y0:y1, x0:x1]
        cx, cy = (x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0
        rx, ry = (x1 - x0) / 2.0, (y1 - y0) / 2.0
        if shape == "circle":
            inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        elif shape == "diamond":
            inside = np.abs(xx - cx) / rx + np.abs(yy - cy) / ry <= 1.05
        else:
            inside = np.ones_like(xx, dtype=bool)
        self.image[y0:y1, x0:x1][inside] = color
        self.words.append(PixelWord.make_graphic(category, BBox(*box), clickable))
        self.groups.append(group)


def _node(cls, box, clickable=False, text=None, children=None):
    node = {"class": cls, "bounds": list(box), "clickable": clickable}
    if text is not None:
        node["text"] = text
    node["children"] = children or []
    return node


def _pick_text(rng, words):
    return str(words[int(rng.integers(len(words)))]).capitalize()


def render_screen(template: Template, screen_id: str, spec: FixtureSpec, rng: np.random.Generator):
    """Return (VH document, raster, ground-truth ScreenSentence, OCR lines)."""
    W, H = spec.width, spec.height
    s = _Screen(W, H)
    top_children = [_node("android.widget.ImageButton", (4, 4, 28, 28), True)]
    s.graphic((4, 4, 28, 28), _cat("arrow_backward"), INK, True, 0, shape="diamond")
    title_end = W - 32 if template.action is not None else W - int(rng.integers(40, 70))
    s.text((32, 0, title_end, 32), template.title.title(), False, 0)
    top_children.append(_node("android.widget.TextView", (32, 0, title_end, 32), False,
                              template.title.title()))
    if template.action is not None:
        s.graphic((W - 28, 4, W - 4, 28), template.action, INK, True, 0)
        top_children.append(_node("android.widget.ImageButton", (W - 28, 4, W - 4, 28), True))
    content = [_node("android.widget.LinearLayout", (0, 0, W, 32), False, children=top_children),
               _node("android.view.View", (0, 33, W, 35))]
    s.image[33:35, :] = (224, 224, 224)

    group = 1
    y = 40
    if template.family == "gallery":
        tile_w = (W - 12) // 2
        for row in template.rows:
            for col, tile in enumerate(row["tiles"]):
                x = 4 + col * (tile_w + 4)
                img_box, cap_box = (x, y, x + tile_w, y + 66), (x, y + 66, x + tile_w, y + 88)
                color = PALETTE[(template.template_id + group) % len(PALETTE)]
                s.graphic(img_box, _cat("gallery"), color, True, group, shape="square")
                caption = _pick_text(rng, tile["words"])
                s.text(cap_box, caption, True, group)
                children = [] if tile["bare"] else [_node("android.widget.ImageView", img_box, True)]
                children.append(_node("android.widget.TextView", cap_box, True, caption))
                content.append(_node("android.widget.FrameLayout", (x, y, x + tile_w, y + 88), True,
                                     children=children))
                group += 1
            y += 92
    else:
        row_h = 32 if template.family == "settings" else 48
        rows = template.rows
        if len(rows) > 2 and rng.random() < 0.3:
            rows = rows[:-1]
        for row in rows:
            children = []
            icon = row_h - 8
            if row["left"] != "none":
                box = (4, y + 4, 4 + icon, y + 4 + icon)
                s.graphic(box, row["left_cat"], template.icon_color, True, group)
                if row["left"] == "node":
                    children.append(_node("android.widget.ImageView", box, True))
            x_text = row_h
            x_end = W - row_h if row["right"] else W - int(rng.integers(row_h + 8, 80))
            label = _pick_text(rng, row["words"])
            s.text((x_text, y, x_end, y + row_h), label, True, group)
            children.append(_node("android.widget.TextView", (x_text, y, x_end, y + row_h), True, label))
            if row["right"]:
                box = (W - row_h + 4, y + 4, W - 4, y + row_h - 4)
                s.graphic(box, row["right_cat"], INK, True, group)
                children.append(_node("android.widget.ImageView", box, True))
            content.append(_node("android.widget.LinearLayout", (0, y, W, y + row_h), True,
                                 children=children))
            group += 1
            y += row_h
    if template.decoy and H - y >= 40:
        content.append(_node("android.widget.ImageView", (W - 40, H - 36, W - 8, H - 4)))
    if template.broken_node:
        content.append(_node("android.view.View", (50, 60, 20, 80),
                             children=[_node("android.widget.TextView", (20, 60, 50, 80), False, "x")]))

    root = _node("android.widget.FrameLayout", (0, 0, W, H), children=content)
    doc = {"screen_id": screen_id, "width": W, "height": H, "root": root}
    relations = _relations(s.groups, rng)
    sentence = ScreenSentence(screen_id, W, H, s.words, app_type=template.template_id,
                              relations=relations)
    return doc, s.image, sentence, s.ocr


def _relations(groups, rng):
    n = len(groups)
    pos = [(i, j, 1) for i in range(n) for j in range(i + 1, n) if groups[i] == groups[j]]
    neg_pool = [(i, j) for i in range(n) for j in range(i + 1, n) if groups[i] != groups[j]]
    picks = rng.choice(len(neg_pool), size=min(len(pos), len(neg_pool)), replace=False) if neg_pool else []
    neg = [(*neg_pool[int(k)], 0) for k in sorted(int(k) for k in picks)]
    return sorted(pos + neg)


# -- corpora ---------------------------------------------------------------------

@dataclass
class FixtureScreen:
    document: dict
    raster: np.ndarray
    sentence: ScreenSentence
    ocr: List[OcrLine]
    template_id: int


def generate(spec: FixtureSpec) -> List[FixtureScreen]:
    """Screen ``k`` uses template ``k mod app_classes``; everything else follows the seed."""
    templates: Dict[int, Template] = {}
    out = []
    for k in range(spec.n_screens):
        tid = k % spec.app_classes
        if tid not in templates:
            templates[tid] = make_template(tid, spec)
        rng = np.random.default_rng([spec.seed, k])
        sid = f"s{k:04d}"
        doc, raster, sentence, ocr = render_screen(templates[tid], sid, spec, rng)
        out.append(FixtureScreen(doc, raster, sentence, ocr, tid))
    return out


def template_corpus(n_screens=32, seed=0, app_classes=26, **kw) -> List[ScreenSentence]:
    return [f.sentence for f in generate(FixtureSpec(seed, n_screens, app_classes, **kw))]


def click_fixture(n_screens=8, seed=0) -> List[ScreenSentence]:
    """Screens where clickable is exactly "is a graphic"."""
    out = []
    for s in template_corpus(n_screens, seed):
        words = [PixelWord(p.kind, p.bbox, p.text, p.category, clickable=not p.is_text)
                 for p in s.pixel_words]
        out.append(ScreenSentence(s.screen_id, s.screen_width, s.screen_height, words,
                                  app_type=s.app_type))
    return out


def relation_fixture(n_screens=4, seed=0, rows=3, cols=3, width=180, height=320) -> List[ScreenSentence]:
    """Grid screens where two Pixel-Words are related exactly when they share a row."""
    out = []
    for k in range(n_screens):
        rng = np.random.default_rng([seed, 4243, k])
        cell_w, cell_h = width // cols, (height - 40) // rows
        words, row_of = [], []
        for r in range(rows):
            for c in range(cols):
                x, y = c * cell_w + 4, 40 + r * cell_h + 4
                box = BBox(x, y, x + cell_w - 8, y + min(cell_h - 8, 32))
                if rng.random() < 0.5:
                    words.append(PixelWord.make_text(_pick_text(rng, WORDS), box))
                else:
                    words.append(PixelWord.make_graphic(int(rng.integers(len(ICON_CATEGORIES))), box))
                row_of.append(r)
        n = len(words)
        rel = [(i, j, int(row_of[i] == row_of[j])) for i in range(n) for j in range(i + 1, n)]
        out.append(ScreenSentence(f"r{k:04d}", width, height, words, relations=rel))
    return out


def app_fixture(app_classes=26, per_class=1, seed=0) -> List[ScreenSentence]:
    return template_corpus(app_classes * per_class, seed, app_classes)


# -- patch dataset ----------------------------------------------------------------

def patch_records(fixture: FixtureScreen, cfg: Optional[LabelGenConfig] = None):
    """Proposal patches labelled 1 when they overlap a true graphic at IoU >= 0.5."""
    cfg = cfg or LabelGenConfig()
    vh = parse_vh(fixture.document)
    truth = [p.bbox for p in fixture.sentence.pixel_words if not p.is_text]
    texts = [p.bbox for p in fixture.sentence.pixel_words if p.is_text]
    bg = background_color(fixture.raster)
    out = []
    for box in graphic_proposals(vh, texts, cfg):
        label = int(any(iou(box, t) >= 0.5 for t in truth))
        feats = patch_features(fixture.raster, box, bg)
        out.append({"screen_id": fixture.sentence.screen_id, "features": feats.tolist(), "label": label})
    return out


# -- on-disk layout ---------------------------------------------------------------

def gen_fixtures(spec: FixtureSpec, out_dir) -> str:
    """Write the corpus to ``out_dir`` and return it.

    Layout: vh/<id>.json, screens/<id>.ppm, ocr.jsonl, gt.jsonl (Screen-Sentences),
    gt_boxes.jsonl, patches.jsonl, fixture.json.
    """
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(os.path.join(out_dir, "vh"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "screens"), exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir!r}: {exc}") from exc
    screens = generate(spec)
    gt, ocr, boxes, patches = [], [], [], []
    for f in screens:
        sid = f.sentence.screen_id
        vh_path = os.path.join(out_dir, "vh", f"{sid}.json")
        try:
            with open(vh_path, "w", encoding="utf-8") as fh:
                json.dump(f.document, fh, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise IoFailure(f"cannot write {vh_path!r}: {exc}") from exc
        rel_raster = f"screens/{sid}.ppm"
        write_ppm(os.path.join(out_dir, rel_raster), f.raster)
        f.sentence.raster_path = rel_raster
        gt.append(screen_to_dict(f.sentence))
        ocr.append(ocr_to_dict(sid, f.ocr))
        boxes.extend(box_record(sid, p.bbox, kind=p.kind) for p in f.sentence.pixel_words)
        patches.extend(patch_records(f))
    write_jsonl(os.path.join(out_dir, "gt.jsonl"), gt)
    write_jsonl(os.path.join(out_dir, "ocr.jsonl"), ocr)
    write_jsonl(os.path.join(out_dir, "gt_boxes.jsonl"), boxes)
    write_jsonl(os.path.join(out_dir, "patches.jsonl"), patches)
    try:
        with open(os.path.join(out_dir, "fixture.json"), "w", encoding="utf-8") as fh:
            json.dump(spec.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write fixture manifest: {exc}") from exc
    return out_dir
