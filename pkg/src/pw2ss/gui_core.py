"""Screen geometry, the View-Hierarchy tree, and the Pixel-Word data model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

from .errors import EmptyHierarchy, MalformedDocument

# Icon taxonomy: the 31 most-clicked icon classes plus "other", alphabetical.
ICON_CATEGORIES: Tuple[str, ...] = (
    "add", "arrow_backward", "arrow_downward", "arrow_forward", "arrow_upward",
    "avatar", "calendar", "call", "camera", "cart", "chat", "check", "close",
    "delete", "download", "edit", "favorite", "filter", "gallery", "location",
    "menu", "microphone", "more", "other", "pause", "play", "question_mark",
    "refresh", "search", "send", "settings", "share",
)
OTHER_CATEGORY = ICON_CATEGORIES.index("other")

TEXT = "text"
GRAPHIC = "graphic"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in screen pixels, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self.as_list()}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"bbox needs 4 numbers, got {len(values)}")
        return cls(*values)

    def as_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def width(self) -> float:
        return self.x_max - self.x_min

    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width() * self.height()

    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def contains(self, other: "BBox") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and other.x_max <= self.x_max and other.y_max <= self.y_max)

    def clamp(self, width: float, height: float) -> "BBox":
        return BBox(min(max(self.x_min, 0.0), width), min(max(self.y_min, 0.0), height),
                    min(max(self.x_max, 0.0), width), min(max(self.y_max, 0.0), height))

    def intersection(self, other: "BBox") -> Optional["BBox"]:
        x0, y0 = max(self.x_min, other.x_min), max(self.y_min, other.y_min)
        x1, y1 = min(self.x_max, other.x_max), min(self.y_max, other.y_max)
        if x0 > x1 or y0 > y1:
            return None
        return BBox(x0, y0, x1, y1)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def center_hit(pred: BBox, gt: BBox) -> bool:
    """True when the centre of ``pred`` lies in ``gt``, boundary included."""
    return gt.contains_point(*pred.center())


@dataclass
class ViewNode:
    class_name: str
    bounds: BBox
    text: Optional[str] = None
    clickable: bool = False
    ancestors: List[str] = field(default_factory=list)
    children: List["ViewNode"] = field(default_factory=list)

    def iter_preorder(self, depth: int = 0) -> Iterator[Tuple["ViewNode", int]]:
        stack = [(self, depth)]
        while stack:
            node, d = stack.pop()
            yield node, d
            for child in reversed(node.children):
                stack.append((child, d + 1))

    @property
    def short_class(self) -> str:
        return self.class_name.rsplit(".", 1)[-1]


@dataclass
class ViewHierarchy:
    screen_id: str
    screen_width: int
    screen_height: int
    root: ViewNode

    def nodes(self) -> List[ViewNode]:
        return [node for node, _ in self.root.iter_preorder()]

    def nodes_with_depth(self) -> List[Tuple[ViewNode, int]]:
        return list(self.root.iter_preorder())

    @property
    def screen_box(self) -> BBox:
        return BBox(0, 0, self.screen_width, self.screen_height)


@dataclass
class ParseReport:
    screen_id: str
    n_nodes: int = 0
    dropped: int = 0


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedDocument(f"{what} must be a number, got {value!r}")
    return value


def _build_node(raw, ancestors, width, height, report):
    if not isinstance(raw, dict):
        raise MalformedDocument(f"node must be an object, got {type(raw).__name__}")
    cls = raw.get("class")
    if not isinstance(cls, str):
        raise MalformedDocument("node is missing a string 'class'")
    bounds = raw.get("bounds")
    if not isinstance(bounds, list) or len(bounds) != 4:
        raise MalformedDocument(f"node {cls!r} needs 'bounds' [x1, y1, x2, y2]")
    x1, y1, x2, y2 = (_number(v, "bounds entry") for v in bounds)
    if x1 > x2 or y1 > y2:
        report.dropped += 1 + _count_subtree(raw)
        return None
    box = BBox(x1, y1, x2, y2).clamp(width, height)
    text = raw.get("text")
    if text is not None and not isinstance(text, str):
        raise MalformedDocument(f"node {cls!r} has non-string text")
    node = ViewNode(cls, box, text, bool(raw.get("clickable", False)), list(ancestors))
    report.n_nodes += 1
    child_ancestors = ancestors + [cls]
    for raw_child in raw.get("children") or []:
        child = _build_node(raw_child, child_ancestors, width, height, report)
        if child is not None:
            node.children.append(child)
    return node


def _count_subtree(raw) -> int:
    n = 0
    for child in raw.get("children") or []:
        if isinstance(child, dict):
            n += 1 + _count_subtree(child)
    return n


def parse_vh(document, *, return_report=False):
    """Parse a View-Hierarchy JSON document (text, bytes or an already-decoded dict).

    Bounds are clamped to the screen.  A node whose bounds are inverted is
    dropped together with its subtree; the number of dropped nodes is
    available through ``return_report=True``.
    """
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    if isinstance(document, dict):
        data = document
    else:
        try:
            data = json.loads(document)
        except (TypeError, ValueError) as exc:
            raise MalformedDocument(f"not JSON: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedDocument("top level must be a JSON object")
    width, height = data.get("width"), data.get("height")
    for name, value in (("width", width), ("height", height)):
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            raise MalformedDocument(f"screen {name} must be a positive integer")
    if "root" not in data:
        raise MalformedDocument("missing 'root'")
    screen_id = str(data.get("screen_id", ""))
    report = ParseReport(screen_id)
    root = _build_node(data["root"], [], width, height, report)
    if root is None:
        raise EmptyHierarchy(f"root of screen {screen_id!r} has invalid bounds")
    vh = ViewHierarchy(screen_id, width, height, root)
    return (vh, report) if return_report else vh


def _num_out(v: float):
    return int(v) if float(v).is_integer() else v


def _node_to_dict(node: ViewNode) -> dict:
    out = {
        "class": node.class_name,
        "bounds": [_num_out(v) for v in node.bounds.as_list()],
        "clickable": node.clickable,
    }
    if node.text is not None:
        out["text"] = node.text
    out["children"] = [_node_to_dict(c) for c in node.children]
    return out


def serialize_vh(vh: ViewHierarchy) -> str:
    doc = {"screen_id": vh.screen_id, "width": vh.screen_width,
           "height": vh.screen_height, "root": _node_to_dict(vh.root)}
    return json.dumps(doc, ensure_ascii=False)


def leaf_nodes(vh: ViewHierarchy, min_side: float = 8.0, max_aspect: float = 20.0) -> List[ViewNode]:
    """Childless nodes passing the size and aspect-ratio filter, in pre-order."""
    if min_side <= 0 or max_aspect < 1:
        raise ValueError("need min_side > 0 and max_aspect >= 1")
    out = []
    for node in vh.nodes():
        if node.children:
            continue
        w, h = node.bounds.width(), node.bounds.height()
        if w < min_side or h < min_side:
            continue
        if max(w / h, h / w) > max_aspect:
            continue
        out.append(node)
    return out


@dataclass
class PixelWord:
    """One atomic screen component: a text line or a graphic."""

    kind: str
    bbox: BBox
    text: Optional[str] = None
    category: Optional[int] = None
    clickable: Optional[bool] = None

    def __post_init__(self):
        if self.kind == TEXT:
            if self.text is None or not self.text.strip():
                raise ValueError("text Pixel-Word needs non-empty content")
            if self.category is not None:
                raise ValueError("text Pixel-Word cannot carry a category")
        elif self.kind == GRAPHIC:
            if self.category is None or not 0 <= int(self.category) < len(ICON_CATEGORIES):
                raise ValueError(f"graphic category must be in 0..{len(ICON_CATEGORIES) - 1}")
            self.category = int(self.category)
            if self.text is not None:
                raise ValueError("graphic Pixel-Word cannot carry text")
        else:
            raise ValueError(f"unknown Pixel-Word kind {self.kind!r}")

    @classmethod
    def make_text(cls, text, bbox, clickable=None):
        return cls(TEXT, bbox, text=text, clickable=clickable)

    @classmethod
    def make_graphic(cls, category, bbox, clickable=None):
        return cls(GRAPHIC, bbox, category=category, clickable=clickable)

    @property
    def is_text(self) -> bool:
        return self.kind == TEXT

    def reading_key(self):
        content = self.text if self.is_text else ICON_CATEGORIES[self.category]
        b = self.bbox
        return (b.y_min, b.x_min, b.y_max, b.x_max, self.kind, content,
                -1 if self.clickable is None else int(self.clickable))


@dataclass
class ScreenSentence:
    screen_id: str
    screen_width: int
    screen_height: int
    pixel_words: List[PixelWord] = field(default_factory=list)
    app_type: Optional[int] = None
    relations: Optional[List[Tuple[int, int, int]]] = None
    raster_path: Optional[str] = None

    def __post_init__(self):
        if self.relations is not None:
            n = len(self.pixel_words)
            rels = []
            for i, j, label in self.relations:
                i, j, label = int(i), int(j), int(label)
                if not (0 <= i < n and 0 <= j < n) or i == j:
                    raise ValueError(f"invalid relation ({i}, {j}) for {n} Pixel-Words")
                if label not in (0, 1):
                    raise ValueError(f"relation label must be 0 or 1, got {label}")
                rels.append((i, j, label))
            self.relations = rels

    @property
    def screen_box(self) -> BBox:
        return BBox(0, 0, self.screen_width, self.screen_height)

    def reading_order(self) -> List[int]:
        """Indices of ``pixel_words`` sorted top-to-bottom, then left-to-right."""
        return sorted(range(len(self.pixel_words)),
                      key=lambda k: self.pixel_words[k].reading_key())
