"""Token construction: content vectors, 2-D position buckets, layout token."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateDataset, SchemaError
from .gui_core import BBox, ICON_CATEGORIES, ScreenSentence
from .nn import AdamW, Module, OptimizerConfig, Parameter, Tape, xavier_uniform
from .nn import ops
from .nn.layers import Linear
from .validation import check_is_fitted_attr, check_rasters

N_BUCKETS = 1001
TEXT_DIM = 384


def _trigram_bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


@lru_cache(maxsize=65536)
def _hashed_vector(text: str, dim: int) -> bytes:
    norm = " ".join(text.lower().split())
    vec = np.zeros(dim)
    if norm:
        padded = f" {norm} "
        for k in range(len(padded) - 2):
            vec[_trigram_bucket(padded[k:k + 3], dim)] += 1.0
        vec /= np.linalg.norm(vec)
    return vec.tobytes()


class HashedTextEmbedder:
    """Character-trigram counts hashed into ``dim`` buckets, L2-normalised.

    Stand-in for a sentence encoder: lower-cases and collapses whitespace, so
    "WiFi" and "wifi" share every trigram.
    """

    def __init__(self, dim: int = TEXT_DIM):
        self.dim = int(dim)

    def __call__(self, text: str) -> np.ndarray:
        return np.frombuffer(_hashed_vector(text, self.dim), dtype=np.float64).copy()

    embed = __call__

    def __repr__(self):
        return f"HashedTextEmbedder(dim={self.dim})"


class FileTextEmbedder:
    """Exact-string lookup in a JSONL file of precomputed vectors.

    Strings not in the file fall back to the hashed embedder.
    """

    def __init__(self, path, dim: Optional[int] = None):
        self.table: Dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    text, vec = rec["text"], np.asarray(rec["vec"], dtype=np.float64)
                except (ValueError, KeyError, TypeError) as exc:
                    raise SchemaError(f"bad embedding record ({exc})", path, lineno) from None
                if dim is None:
                    dim = vec.size
                if vec.shape != (dim,):
                    raise SchemaError(f"vector width {vec.size}, expected {dim}", path, lineno)
                self.table[text] = vec
        self.dim = TEXT_DIM if dim is None else int(dim)
        self.fallback = HashedTextEmbedder(self.dim)

    def __call__(self, text: str) -> np.ndarray:
        vec = self.table.get(text)
        return vec.copy() if vec is not None else self.fallback(text)


_DEFAULT_EMBEDDER = HashedTextEmbedder()


def embed_text(s: str, embedder=None) -> np.ndarray:
    return (embedder or _DEFAULT_EMBEDDER)(s)


def category_phrase(category: int) -> str:
    return ICON_CATEGORIES[category].replace("_", " ")


def embed_graphic(category: int, embedder=None) -> np.ndarray:
    if not 0 <= int(category) < len(ICON_CATEGORIES):
        raise ValueError(f"category {category} outside 0..{len(ICON_CATEGORIES) - 1}")
    return embed_text(category_phrase(int(category)), embedder)


def content_vector(pw, embedder=None) -> np.ndarray:
    if pw.is_text:
        return embed_text(pw.text, embedder)
    return embed_graphic(pw.category, embedder)


def _bucket(value: float, extent: float) -> int:
    return int(min(max(math.floor(1000.0 * value / extent), 0), 1000))


def quantize_box(bbox: BBox, screen_w: float, screen_h: float) -> List[int]:
    """Bucket (x_min, y_min, x_max, y_max, w, h) into 0..1000."""
    return [
        _bucket(bbox.x_min, screen_w), _bucket(bbox.y_min, screen_h),
        _bucket(bbox.x_max, screen_w), _bucket(bbox.y_max, screen_h),
        _bucket(bbox.width(), screen_w), _bucket(bbox.height(), screen_h),
    ]


class PositionEmbeddingTables(Module):
    """Six learned 1001-row tables: x_min, y_min, x_max, y_max, width, height."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.x_min = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))
        self.y_min = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))
        self.x_max = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))
        self.y_max = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))
        self.width = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))
        self.height = Parameter(xavier_uniform(rng, N_BUCKETS, d_model))

    @property
    def tables(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max, self.width, self.height)

    def __call__(self, buckets):
        buckets = np.asarray(buckets, dtype=np.int64)
        out = None
        for k, table in enumerate(self.tables):
            term = ops.embedding(table, buckets[..., k])
            out = term if out is None else out + term
        return out


def position_embedding(bbox: BBox, screen_w, screen_h, tables: PositionEmbeddingTables) -> np.ndarray:
    return tables(np.asarray(quantize_box(bbox, screen_w, screen_h))).data


def _axis_coverage(lo, hi, edges):
    """Length of [lo, hi) falling in each interval [edges[k], edges[k+1])."""
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)


def _union_coverage(boxes, width, height, grid):
    out = np.zeros((grid, grid))
    if not boxes:
        return out
    cell_x = np.linspace(0.0, width, grid + 1)
    cell_y = np.linspace(0.0, height, grid + 1)
    xs = np.unique(np.concatenate([cell_x] + [[b.x_min, b.x_max] for b in boxes]).clip(0, width))
    ys = np.unique(np.concatenate([cell_y] + [[b.y_min, b.y_max] for b in boxes]).clip(0, height))
    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for b in boxes:
        c0, c1 = np.searchsorted(xs, [max(b.x_min, 0), min(b.x_max, width)])
        r0, r1 = np.searchsorted(ys, [max(b.y_min, 0), min(b.y_max, height)])
        covered[r0:r1, c0:c1] = True
    area = np.outer(np.diff(ys), np.diff(xs)) * covered
    # Cell edges are a subset of xs / ys, so elementary rectangles nest in cells.
    col_starts = np.searchsorted(xs, cell_x[:-1])
    row_starts = np.searchsorted(ys, cell_y[:-1])
    per_cell = np.add.reduceat(np.add.reduceat(area, row_starts, axis=0), col_starts, axis=1)
    cell_area = (width / grid) * (height / grid)
    return np.clip(per_cell / cell_area, 0.0, 1.0)


def layout_raster(screen: ScreenSentence, grid: int = 32) -> np.ndarray:
    """(grid, grid, 2) covered-area fractions: channel 0 text, channel 1 graphics."""
    if grid < 2:
        raise ValueError("grid must be >= 2")
    w, h = float(screen.screen_width), float(screen.screen_height)
    texts = [pw.bbox for pw in screen.pixel_words if pw.is_text]
    graphics = [pw.bbox for pw in screen.pixel_words if not pw.is_text]
    return np.stack([_union_coverage(texts, w, h, grid),
                     _union_coverage(graphics, w, h, grid)], axis=-1)


class _AutoencoderNet(Module):
    def __init__(self, n_in, hidden, d_model, rng):
        self.enc1 = Linear(n_in, hidden, rng)
        self.enc2 = Linear(hidden, d_model, rng)
        self.dec1 = Linear(d_model, hidden, rng)
        self.dec2 = Linear(hidden, n_in, rng)

    def encode(self, x):
        return self.enc2(ops.gelu(self.enc1(x)))

    def decode(self, z):
        return self.dec2(ops.gelu(self.dec1(z)))


class LayoutAutoencoder(TransformerMixin, BaseEstimator):
    """Dense autoencoder over flattened layout rasters.

    ``transform`` returns the encoder output, which becomes the layout token.
    """

    def __init__(self, grid=32, hidden=256, d_model=128, epochs=200, lr=1e-3, seed=0):
        self.grid = grid
        self.hidden = hidden
        self.d_model = d_model
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def _flat(self, X):
        X = check_rasters(X, self.grid)
        return X.reshape(X.shape[0], -1)

    def fit(self, X, y=None):
        X = self._flat(X)
        if X.shape[0] == 0:
            raise DegenerateDataset("layout autoencoder needs at least one raster")
        rng = np.random.default_rng(self.seed)
        self.net_ = _AutoencoderNet(X.shape[1], self.hidden, self.d_model, rng)
        params = self.net_.parameters()
        opt = AdamW(params, OptimizerConfig(lr=self.lr, weight_decay=0.0))
        self.loss_history_ = []
        for _ in range(self.epochs):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.mse_loss(self.net_.decode(self.net_.encode(X)), X)
            tape.backward(loss)
            opt.step()
            self.loss_history_.append(float(loss.data))
        self.final_loss_ = self.reconstruction_loss(X.reshape(-1, self.grid, self.grid, 2))
        return self

    def reconstruction_loss(self, X):
        check_is_fitted_attr(self, "net_")
        X = self._flat(X)
        return float(ops.mse_loss(self.net_.decode(self.net_.encode(X)), X).data)

    def transform(self, X):
        check_is_fitted_attr(self, "net_")
        return self.net_.encode(self._flat(X)).data

    def state_dict(self):
        check_is_fitted_attr(self, "net_")
        return self.net_.state_dict()

    @classmethod
    def from_state(cls, state, **params):
        ae = cls(**params)
        n_in = ae.grid * ae.grid * 2
        ae.net_ = _AutoencoderNet(n_in, ae.hidden, ae.d_model, np.random.default_rng(0))
        ae.net_.load_state_dict(state)
        return ae


def train_layout_autoencoder(rasters, epochs=200, seed=0, **params) -> LayoutAutoencoder:
    return LayoutAutoencoder(epochs=epochs, seed=seed, **params).fit(rasters)


def layout_embed(raster, ae: LayoutAutoencoder) -> np.ndarray:
    return ae.transform(np.asarray(raster)[None])[0]


@dataclass
class PreparedScreen:
    """Everything about a screen the encoder needs, as plain arrays."""

    screen_id: str
    content: np.ndarray      # (n, text_dim) content vectors in reading order
    buckets: np.ndarray      # (n + 1, 6), row 0 is the full-screen box
    layout: np.ndarray       # (d_model,)
    order: List[int]         # token k (k >= 1) -> pixel_words[order[k - 1]]

    @property
    def n_tokens(self) -> int:
        return len(self.order) + 1

    def index_map(self) -> Dict[int, int]:
        return {k + 1: pw for k, pw in enumerate(self.order)}

    def token_of(self) -> Dict[int, int]:
        return {pw: k + 1 for k, pw in enumerate(self.order)}


def prepare_screen(screen: ScreenSentence, embedder, ae: Optional[LayoutAutoencoder],
                   d_model: int, max_len: int, text_dim: Optional[int] = None) -> PreparedScreen:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    order = screen.reading_order()[:max_len - 1]
    dim = text_dim or getattr(embedder, "dim", TEXT_DIM)
    content = np.zeros((len(order), dim))
    for row, k in enumerate(order):
        content[row] = content_vector(screen.pixel_words[k], embedder)
    w, h = screen.screen_width, screen.screen_height
    buckets = [quantize_box(screen.screen_box, w, h)]
    buckets += [quantize_box(screen.pixel_words[k].bbox, w, h) for k in order]
    if ae is None:
        layout = np.zeros(d_model)
    else:
        layout = layout_embed(layout_raster(screen, ae.grid), ae)
        if layout.shape != (d_model,):
            raise ValueError(f"layout encoder width {layout.shape[0]} != d_model {d_model}")
    return PreparedScreen(screen.screen_id, content, np.asarray(buckets, dtype=np.int64), layout, order)


@dataclass
class PreparedBatch:
    content: np.ndarray   # (B, L - 1, text_dim), zero padded
    buckets: np.ndarray   # (B, L, 6)
    layout: np.ndarray    # (B, d_model)
    valid: np.ndarray     # (B, L) bool
    screens: List[PreparedScreen]

    @classmethod
    def from_screens(cls, screens: Sequence[PreparedScreen]) -> "PreparedBatch":
        if not screens:
            raise ValueError("empty batch")
        L = max(s.n_tokens for s in screens)
        B = len(screens)
        dim = screens[0].content.shape[1]
        content = np.zeros((B, L - 1, dim))
        buckets = np.zeros((B, L, 6), dtype=np.int64)
        valid = np.zeros((B, L), dtype=bool)
        for b, s in enumerate(screens):
            n = s.n_tokens
            content[b, :n - 1] = s.content
            buckets[b, :n] = s.buckets
            valid[b, :n] = True
        layout = np.stack([s.layout for s in screens])
        return cls(content, buckets, layout, valid, list(screens))


def assemble_tokens(batch: PreparedBatch, tables: PositionEmbeddingTables, projection: Linear,
                    mask_vector=None, mask=None):
    """Return ``(tokens, projected_content)`` for a padded batch.

    tokens[:, 0] is layout + full-screen position; tokens[:, k] for k >= 1 is
    projected content (or ``mask_vector`` where ``mask[:, k - 1]``) plus the
    Pixel-Word's position embedding.
    """
    projected = projection(batch.content)
    content = projected
    if mask is not None:
        content = ops.where(np.asarray(mask, dtype=bool)[..., None], mask_vector, projected)
    layout = batch.layout[:, None, :]
    tokens = ops.concat([layout, content], axis=1) if content.shape[1] else ops.as_tensor(layout)
    return tokens + tables(batch.buckets), projected


def build_tokens(screen: ScreenSentence, embedder, tables: PositionEmbeddingTables,
                 ae: Optional[LayoutAutoencoder], projection: Linear, d_model: int, max_len: int):
    """Token matrix (n_tokens, d_model) and the token -> Pixel-Word index map."""
    prepared = prepare_screen(screen, embedder, ae, d_model, max_len,
                              text_dim=projection.weight.shape[0])
    tokens, _ = assemble_tokens(PreparedBatch.from_screens([prepared]), tables, projection)
    return tokens.data[0], prepared.index_map()
