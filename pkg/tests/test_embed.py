import numpy as np
import pytest

from pw2ss.embed import (
    N_BUCKETS,
    FileTextEmbedder,
    HashedTextEmbedder,
    LayoutAutoencoder,
    PositionEmbeddingTables,
    build_tokens,
    embed_graphic,
    embed_text,
    layout_raster,
    position_embedding,
    quantize_box,
)
from pw2ss.errors import SchemaError
from pw2ss.fixtures import template_corpus
from pw2ss.gui_core import ICON_CATEGORIES, BBox, PixelWord, ScreenSentence
from pw2ss.nn.layers import Linear


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_text_embedding_is_unit_and_deterministic():
    v = embed_text("Wi-Fi settings")
    assert v.shape == (384,)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(v, embed_text("Wi-Fi settings"))
    assert np.array_equal(embed_text("WIFI"), embed_text("  wifi "))


def test_trigram_cosines():
    # " wifi " has 4 trigrams, all shared with the 13 distinct trigrams of
    # " wifi settings ": 4 / sqrt(4 * 13)
    assert cos(embed_text("wifi"), embed_text("WiFi settings")) == pytest.approx(4 / np.sqrt(52), abs=1e-4)
    assert cos(embed_text("wifi"), embed_text("WiFi settings")) == pytest.approx(0.5547, abs=1e-4)
    assert cos(embed_text("wifi"), embed_text("play")) == pytest.approx(0.0, abs=1e-12)


def test_empty_text_embeds_to_zero():
    assert not embed_text("").any()


def test_graphic_embedding_uses_category_phrase():
    k = ICON_CATEGORIES.index("question_mark")
    assert np.array_equal(embed_graphic(k), embed_text("question mark"))
    with pytest.raises(ValueError):
        embed_graphic(len(ICON_CATEGORIES))


def test_file_embedder(tmp_path):
    path = tmp_path / "vecs.jsonl"
    path.write_text('{"text": "ok", "vec": [1, 0, 0]}\n\n{"text": "no", "vec": [0, 1, 0]}\n')
    emb = FileTextEmbedder(path)
    assert emb.dim == 3 and np.array_equal(emb("ok"), [1, 0, 0])
    assert emb("unseen").shape == (3,)
    path.write_text('{"text": "ok", "vec": [1, 0, 0]}\n{"text": "no", "vec": [0, 1]}\n')
    with pytest.raises(SchemaError) as info:
        FileTextEmbedder(path)
    assert info.value.line == 2


def test_quantize_examples():
    assert quantize_box(BBox(720, 0, 1440, 10), 1440, 2560)[0] == 500
    assert quantize_box(BBox(0, 0, 1440, 2560), 1440, 2560) == [0, 0, 1000, 1000, 1000, 1000]
    # out-of-range coordinates clamp
    assert quantize_box(BBox(-5, 0, 2000, 10), 1440, 2560)[0] == 0


def test_quantize_monotone():
    xs = np.linspace(0, 1440, 301)
    buckets = [quantize_box(BBox(x, 0, 1440, 1), 1440, 10)[0] for x in xs]
    assert buckets == sorted(buckets)
    assert min(buckets) == 0 and max(buckets) == 1000


def test_position_tables():
    tables = PositionEmbeddingTables(8, np.random.default_rng(0))
    assert all(t.data.shape == (N_BUCKETS, 8) for t in tables.tables)
    box = BBox(10, 20, 30, 40)
    b = quantize_box(box, 100, 100)
    expected = sum(t.data[i] for t, i in zip(tables.tables, b))
    assert np.allclose(position_embedding(box, 100, 100, tables), expected, atol=1e-15)


def _raster_oracle(screen, grid, scale=4):
    # integer-coordinate screens: paint a supersampled mask and pool
    w, h = screen.screen_width, screen.screen_height
    out = np.zeros((grid, grid, 2))
    for channel, want_text in ((0, True), (1, False)):
        canvas = np.zeros((h * scale, w * scale), dtype=bool)
        for pw in screen.pixel_words:
            if pw.is_text == want_text:
                b = pw.bbox
                canvas[int(b.y_min * scale):int(b.y_max * scale), int(b.x_min * scale):int(b.x_max * scale)] = True
        cy, cx = h * scale // grid, w * scale // grid
        out[..., channel] = canvas.reshape(grid, cy, grid, cx).mean(axis=(1, 3))
    return out


def test_layout_raster_matches_painted_oracle():
    words = [PixelWord.make_text("a", BBox(0, 0, 40, 8)), PixelWord.make_text("b", BBox(20, 4, 64, 12)),
             PixelWord.make_graphic(3, BBox(5, 30, 21, 46)), PixelWord.make_graphic(4, BBox(10, 35, 63, 64))]
    screen = ScreenSentence("s", 64, 64, words)
    got = layout_raster(screen, grid=16)
    assert got.shape == (16, 16, 2)
    assert np.allclose(got, _raster_oracle(screen, 16), atol=1e-12)
    assert got.min() >= 0 and got.max() <= 1


def test_layout_raster_empty_and_bad_grid():
    assert not layout_raster(ScreenSentence("s", 10, 10, []), 4).any()
    with pytest.raises(ValueError):
        layout_raster(ScreenSentence("s", 10, 10, []), 1)


def test_layout_autoencoder_learns():
    screens = template_corpus(16, seed=0, app_classes=8)
    X = np.stack([layout_raster(s, 32) for s in screens])
    ae = LayoutAutoencoder(d_model=16, hidden=64, epochs=200, seed=0).fit(X)
    assert ae.final_loss_ < 0.1 * ae.loss_history_[0]
    assert ae.transform(X).shape == (16, 16)
    with pytest.raises(ValueError):
        ae.transform(np.zeros((1, 8, 8, 2)))


def test_build_tokens_shape_and_index_map():
    rng = np.random.default_rng(0)
    words = [PixelWord.make_text("b", BBox(10, 50, 20, 60)), PixelWord.make_text("a", BBox(0, 0, 5, 5))]
    screen = ScreenSentence("s", 100, 100, words)
    tables = PositionEmbeddingTables(8, rng)
    proj = Linear(384, 8, rng)
    tokens, index_map = build_tokens(screen, HashedTextEmbedder(), tables, None, proj, 8, 16)
    assert tokens.shape == (3, 8)
    assert index_map == {1: 1, 2: 0}
    # token 0 is layout (zeros without an encoder) plus the full-screen position
    full = position_embedding(screen.screen_box, 100, 100, tables)
    assert np.allclose(tokens[0], full, atol=1e-15)
    tokens, index_map = build_tokens(screen, HashedTextEmbedder(), tables, None, proj, 8, 2)
    assert tokens.shape == (2, 8) and index_map == {1: 1}
