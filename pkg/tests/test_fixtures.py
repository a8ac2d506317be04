import hashlib
import os

import numpy as np

from pw2ss.fixtures import FixtureSpec, app_fixture, click_fixture, gen_fixtures, generate, relation_fixture
from pw2ss.gui_core import parse_vh


def tree_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_generate_shapes_and_ids():
    spec = FixtureSpec(seed=0, n_screens=6, app_classes=3)
    screens = generate(spec)
    assert [f.sentence.screen_id for f in screens] == [f"s{k:04d}" for k in range(6)]
    assert [f.template_id for f in screens] == [0, 1, 2, 0, 1, 2]
    for f in screens:
        assert f.raster.shape == (320, 180, 3) and f.raster.dtype == np.uint8
        assert f.sentence.app_type == f.template_id
        vh = parse_vh(f.document)
        assert vh.screen_width == 180 and vh.screen_height == 320
        for pw in f.sentence.pixel_words:
            assert 0 <= pw.bbox.x_min <= pw.bbox.x_max <= 180
            assert 0 <= pw.bbox.y_min <= pw.bbox.y_max <= 320


def test_ocr_lines_match_text_words():
    for f in generate(FixtureSpec(seed=2, n_screens=4)):
        texts = sorted((p.text, p.bbox.as_list()) for p in f.sentence.pixel_words if p.is_text)
        ocr = sorted((line.text, line.bbox.as_list()) for line in f.ocr)
        assert texts == ocr


def test_gen_fixtures_byte_identical(tmp_path):
    spec = FixtureSpec(seed=7, n_screens=8)
    a = gen_fixtures(spec, tmp_path / "a")
    b = gen_fixtures(spec, tmp_path / "b")
    assert tree_digest(a) == tree_digest(b)
    assert sorted(os.listdir(a)) == ["fixture.json", "gt.jsonl", "gt_boxes.jsonl", "ocr.jsonl",
                                     "patches.jsonl", "screens", "vh"]
    c = gen_fixtures(FixtureSpec(seed=8, n_screens=8), tmp_path / "c")
    assert tree_digest(a) != tree_digest(c)


def test_task_fixtures_have_labels():
    for s in click_fixture(3):
        assert all(p.clickable == (not p.is_text) for p in s.pixel_words)
    rel = relation_fixture(2)[0]
    n = len(rel.pixel_words)
    assert len(rel.relations) == n * (n - 1) // 2
    assert sum(label for _, _, label in rel.relations) == 9  # three rows of three: 3 pairs each
    assert sorted(s.app_type for s in app_fixture(app_classes=5)) == [0, 1, 2, 3, 4]
