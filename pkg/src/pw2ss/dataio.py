"""File formats: JSONL records, binary PPM screenshots, retrieval index files."""

from __future__ import annotations

import json
import os
import re
from typing import Callable, Iterable, List, Optional

import numpy as np

from .det_metrics import Detection, GroundTruth
from .errors import IoFailure, SchemaError
from .gui_core import GRAPHIC, TEXT, BBox, PixelWord, ScreenSentence
from .label_gen import N_PATCH_FEATURES, OcrLine


def _require(rec, key, types, what=None):
    if key not in rec:
        raise SchemaError(f"missing required field {key!r}")
    value = rec[key]
    if types is not None and (not isinstance(value, types) or isinstance(value, bool) and bool not in (
            types if isinstance(types, tuple) else (types,))):
        raise SchemaError(f"field {key!r} has type {type(value).__name__}")
    return value


def _bbox(value):
    if not isinstance(value, list) or len(value) != 4 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise SchemaError(f"bbox must be 4 numbers, got {value!r}")
    try:
        return BBox.from_list(value)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def _box_out(b: BBox):
    return [_num(v) for v in b.as_list()]


# -- ScreenSentence ---------------------------------------------------------------

def pixel_word_to_dict(pw: PixelWord) -> dict:
    out = {"kind": pw.kind}
    if pw.is_text:
        out["text"] = pw.text
    else:
        out["category"] = pw.category
    out["bbox"] = _box_out(pw.bbox)
    if pw.clickable is not None:
        out["clickable"] = pw.clickable
    return out


def pixel_word_from_dict(rec) -> PixelWord:
    kind = _require(rec, "kind", str)
    bbox = _bbox(_require(rec, "bbox", list))
    clickable = rec.get("clickable")
    if clickable is not None and not isinstance(clickable, bool):
        raise SchemaError("clickable must be a boolean")
    try:
        if kind == TEXT:
            return PixelWord.make_text(_require(rec, "text", str), bbox, clickable)
        if kind == GRAPHIC:
            return PixelWord.make_graphic(_require(rec, "category", int), bbox, clickable)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    raise SchemaError(f"unknown Pixel-Word kind {kind!r}")


def screen_to_dict(s: ScreenSentence) -> dict:
    out = {"screen_id": s.screen_id, "width": s.screen_width, "height": s.screen_height,
           "pixel_words": [pixel_word_to_dict(p) for p in s.pixel_words]}
    if s.app_type is not None:
        out["app_type"] = s.app_type
    if s.relations is not None:
        out["relations"] = [list(r) for r in s.relations]
    if s.raster_path is not None:
        out["raster_path"] = s.raster_path
    return out


def screen_from_dict(rec) -> ScreenSentence:
    words = _require(rec, "pixel_words", list)
    rel = rec.get("relations")
    app = rec.get("app_type")
    if app is not None and (not isinstance(app, int) or isinstance(app, bool)):
        raise SchemaError("app_type must be an integer")
    try:
        return ScreenSentence(
            str(_require(rec, "screen_id", str)), _require(rec, "width", int),
            _require(rec, "height", int), [pixel_word_from_dict(w) for w in words],
            app_type=app, relations=[tuple(r) for r in rel] if rel is not None else None,
            raster_path=rec.get("raster_path"))
    except (ValueError, TypeError) as exc:
        raise SchemaError(str(exc)) from None


# -- generic JSONL ------------------------------------------------------------------

def read_jsonl(path, parse: Callable = lambda r: r) -> list:
    """Parse every non-blank line; schema errors carry the file and line number."""
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot open {os.fspath(path)!r}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise SchemaError(f"invalid JSON ({exc})", path, lineno) from None
            if not isinstance(rec, dict):
                raise SchemaError("record must be a JSON object", path, lineno)
            try:
                out.append(parse(rec))
            except SchemaError as exc:
                raise SchemaError(str(exc), path, lineno) from None
    return out


def write_jsonl(path, records: Iterable[dict]):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {os.fspath(path)!r}: {exc}") from exc


def read_screens(path) -> List[ScreenSentence]:
    return read_jsonl(path, screen_from_dict)


def write_screens(path, screens):
    write_jsonl(path, (screen_to_dict(s) for s in screens))


def ocr_from_dict(rec):
    sid = _require(rec, "screen_id", str)
    lines = []
    for raw in _require(rec, "lines", list):
        if not isinstance(raw, dict):
            raise SchemaError("OCR line must be an object")
        try:
            lines.append(OcrLine(_require(raw, "text", str), _bbox(_require(raw, "bbox", list))))
        except ValueError as exc:
            raise SchemaError(str(exc)) from None
    return sid, lines


def ocr_to_dict(screen_id, lines):
    return {"screen_id": screen_id,
            "lines": [{"text": l.text, "bbox": _box_out(l.bbox)} for l in lines]}


def read_ocr(path):
    return dict(read_jsonl(path, ocr_from_dict))


def box_record_from_dict(rec):
    """(image_id, bbox, score or None, kind or None)."""
    image_id = str(_require(rec, "image_id", str))
    bbox = _bbox(_require(rec, "bbox", list))
    score = rec.get("score")
    if score is not None and (not isinstance(score, (int, float)) or isinstance(score, bool)):
        raise SchemaError("score must be a number")
    return image_id, bbox, score, rec.get("kind")


def read_detections(path, kind: Optional[str] = None) -> List[Detection]:
    out = []
    for image_id, bbox, score, k in read_jsonl(path, box_record_from_dict):
        if kind is not None and k is not None and k != kind:
            continue
        out.append(Detection(bbox, 1.0 if score is None else float(score), image_id))
    return out


def read_ground_truth(path, kind: Optional[str] = None) -> List[GroundTruth]:
    return [GroundTruth(bbox, image_id) for image_id, bbox, _, k in read_jsonl(path, box_record_from_dict)
            if kind is None or k is None or k == kind]


def box_record(image_id, bbox: BBox, score=None, kind=None):
    rec = {"image_id": image_id, "bbox": _box_out(bbox)}
    if score is not None:
        rec["score"] = score
    if kind is not None:
        rec["kind"] = kind
    return rec


def patch_from_dict(rec):
    feats = _require(rec, "features", list)
    if len(feats) != N_PATCH_FEATURES or not all(isinstance(v, (int, float)) for v in feats):
        raise SchemaError(f"features must be {N_PATCH_FEATURES} numbers")
    label = _require(rec, "label", int)
    if label not in (0, 1):
        raise SchemaError("label must be 0 or 1")
    return np.asarray(feats, dtype=np.float64), label


def read_patches(path):
    return read_jsonl(path, patch_from_dict)


# -- PPM ----------------------------------------------------------------------------

def write_ppm(path, image: np.ndarray):
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) uint8 image")
    h, w = image.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(image.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {os.fspath(path)!r}: {exc}") from exc


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def read_ppm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {os.fspath(path)!r}: {exc}") from exc
    m = _PPM_HEADER.match(raw)
    if not m:
        raise IoFailure(f"{os.fspath(path)!r} is not a binary PPM (P6)")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise IoFailure(f"{os.fspath(path)!r}: only 8-bit PPM is supported")
    body = raw[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise IoFailure(f"{os.fspath(path)!r} is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


# -- retrieval index ------------------------------------------------------------------

def write_index(path, index):
    doc = {"screen_ids": list(index.screen_ids), "dim": int(index.vectors.shape[1]),
           "vectors": index.vectors.tolist()}
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {os.fspath(path)!r}: {exc}") from exc


def read_index(path):
    from .model import RetrievalIndex

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read index {os.fspath(path)!r}: {exc}") from exc
    vectors = np.asarray(doc["vectors"], dtype=np.float64)
    if vectors.size == 0:
        vectors = vectors.reshape(0, int(doc.get("dim", 0)))
    return RetrievalIndex(doc["screen_ids"], vectors)
