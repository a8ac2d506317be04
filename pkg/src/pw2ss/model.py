"""Screen Transformer: encoder, masked Pixel-Word pretraining, task heads."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embed import (
    HashedTextEmbedder,
    LayoutAutoencoder,
    PositionEmbeddingTables,
    PreparedBatch,
    PreparedScreen,
    assemble_tokens,
    prepare_screen,
)
from .errors import (
    EmptyIndex,
    InvalidPair,
    LayoutTokenQueried,
    NoMaskableTokens,
    SequenceTooLong,
)
from .gui_core import ScreenSentence
from .nn import AdamW, LayerNorm, Linear, MLP, Module, OptimizerConfig, Parameter, Tape
from .nn import lr_schedule, ops, steps_per_epoch, xavier_uniform


@dataclass
class ScreenTransformerConfig:
    layers: int = 6
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    mask_ratio: float = 0.15
    app_classes: int = 26
    text_dim: int = 384
    layout_grid: int = 32

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.layers < 1 or self.max_len < 1 or self.app_classes < 1:
            raise ValueError("layers, max_len and app_classes must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class SelfAttention(Module):
    def __init__(self, d_model, heads, rng):
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self._heads = heads
        self._last_attention = None

    def __call__(self, x, valid):
        B, L, d = x.shape
        H = self._heads
        dh = d // H

        def split(t):
            return ops.transpose(ops.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        attn = ops.softmax(scores, axis=-1, mask=valid[:, None, None, :])
        self._last_attention = attn.data
        ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (B, L, d))
        return self.out(ctx)


class EncoderBlock(Module):
    """Post-norm block: attention, add & norm, GELU feed-forward, add & norm."""

    def __init__(self, d_model, heads, ffn_dim, rng):
        self.attention = SelfAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ffn_in = Linear(d_model, ffn_dim, rng)
        self.ffn_out = Linear(ffn_dim, d_model, rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x, valid):
        h = self.norm1(x + self.attention(x, valid))
        return self.norm2(h + self.ffn_out(ops.gelu(self.ffn_in(h))))


@dataclass
class MaskPlan:
    indices: np.ndarray                 # token positions, never 0
    targets: Optional[np.ndarray] = None  # (k, d_model) once known


def plan_mask(n_tokens: int, mask_ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Choose max(1, round(ratio * (n_tokens - 1))) Pixel-Word positions to mask."""
    if n_tokens < 2:
        raise NoMaskableTokens(f"need the layout token plus a Pixel-Word, got {n_tokens} tokens")
    k = max(1, int(math.floor(mask_ratio * (n_tokens - 1) + 0.5)))
    k = min(k, n_tokens - 1)
    picked = rng.choice(np.arange(1, n_tokens), size=k, replace=False)
    return MaskPlan(np.sort(picked).astype(np.int64))


def masked_prediction_loss(predictions, targets, indices):
    """Mean squared L2 distance between predictions and targets at ``indices``.

    ``predictions`` is a Tensor over every token; rows outside ``indices`` do
    not enter the value in any way.
    """
    indices = np.asarray(indices, dtype=np.int64)
    picked = ops.take(predictions, indices, axis=0)
    return ops.l2_loss(picked, np.asarray(targets, dtype=np.float64)[indices])


class ScreenTransformer(Module):
    """Token assembly, the encoder stack, and every head, in one parameter set."""

    def __init__(self, config: ScreenTransformerConfig, seed: int = 0, embedder=None,
                 layout_encoder: Optional[LayoutAutoencoder] = None):
        cfg = config
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self._config = cfg
        self._embedder = embedder or HashedTextEmbedder(cfg.text_dim)
        self._layout_encoder = layout_encoder
        self.projection = Linear(cfg.text_dim, d, rng)
        self.positions = PositionEmbeddingTables(d, rng)
        self.mask_vector = Parameter(xavier_uniform(rng, 1, d, shape=(d,)))
        self.blocks = [EncoderBlock(d, cfg.heads, cfg.ffn_dim, rng) for _ in range(cfg.layers)]
        self.mask_head = Linear(d, d, rng)
        hidden = (d, d, max(d // 2, 1))
        self.click_head = MLP(hidden + (2,), rng)
        self.relation_head = MLP(hidden + (2,), rng)
        self.app_head = MLP(hidden + (cfg.app_classes,), rng)

    @property
    def config(self) -> ScreenTransformerConfig:
        return self._config

    @property
    def embedder(self):
        return self._embedder

    @property
    def layout_encoder(self):
        return self._layout_encoder

    def encoder_parameters(self):
        named = dict(self.named_parameters())
        return [p for n, p in named.items() if n.startswith(("projection.", "positions.", "blocks."))]

    def head_parameters(self, head: str):
        return [p for n, p in self.named_parameters() if n.startswith(head + ".")]

    # -- inputs -------------------------------------------------------------
    def prepare(self, screens: Sequence) -> List[PreparedScreen]:
        out = []
        for s in screens:
            if isinstance(s, PreparedScreen):
                out.append(s)
            else:
                out.append(prepare_screen(s, self._embedder, self._layout_encoder,
                                          self._config.d_model, self._config.max_len,
                                          self._config.text_dim))
        return out

    # -- encoder ------------------------------------------------------------
    def run_blocks(self, x, valid):
        for block in self.blocks:
            x = block(x, valid)
        return x

    def encode(self, tokens):
        """Encode one token sequence of shape (n, d_model)."""
        tokens = tokens if isinstance(tokens, ops.Tensor) else ops.as_tensor(tokens)
        n = tokens.shape[0]
        if n < 1:
            raise ValueError("need at least one token")
        if n > self._config.max_len:
            raise SequenceTooLong(f"{n} tokens exceed max_len {self._config.max_len}")
        x = ops.reshape(tokens, (1, n, tokens.shape[1]))
        out = self.run_blocks(x, np.ones((1, n), dtype=bool))
        return ops.reshape(out, (n, tokens.shape[1]))

    def forward(self, batch: PreparedBatch, mask=None):
        """Encoder outputs (B, L, d) and the projected content (B, L-1, d)."""
        tokens, projected = assemble_tokens(batch, self.positions, self.projection,
                                            self.mask_vector, mask)
        if tokens.shape[1] > self._config.max_len:
            raise SequenceTooLong(f"{tokens.shape[1]} tokens exceed max_len {self._config.max_len}")
        return self.run_blocks(tokens, batch.valid), projected

    def encode_screen(self, screen) -> np.ndarray:
        prepared = self.prepare([screen])
        out, _ = self.forward(PreparedBatch.from_screens(prepared))
        return out.data[0, :prepared[0].n_tokens]

    def attention_maps(self):
        return [b.attention._last_attention for b in self.blocks]

    # -- heads on a single screen's outputs ------------------------------------
    def clickability_forward(self, outputs, index: int) -> float:
        if index == 0:
            raise LayoutTokenQueried("the layout token has no clickability")
        outputs = np.asarray(getattr(outputs, "data", outputs))
        if not 0 < index < outputs.shape[0]:
            raise IndexError(f"token {index} outside 1..{outputs.shape[0] - 1}")
        probs = ops.softmax(self.click_head(outputs[index][None, :])).data[0]
        return float(probs[1])

    def clickability_probs(self, outputs, index: int) -> np.ndarray:
        if index == 0:
            raise LayoutTokenQueried("the layout token has no clickability")
        outputs = np.asarray(getattr(outputs, "data", outputs))
        return ops.softmax(self.click_head(outputs[index][None, :])).data[0]

    def relation_forward(self, outputs, i: int, j: int) -> float:
        outputs = np.asarray(getattr(outputs, "data", outputs))
        n = outputs.shape[0]
        if i == j or i == 0 or j == 0 or not (0 < i < n and 0 < j < n):
            raise InvalidPair(f"relation needs two distinct Pixel-Word tokens, got ({i}, {j})")
        pair = outputs[i] + outputs[j]
        return float(ops.softmax(self.relation_head(pair[None, :])).data[0, 1])

    def app_logits(self, outputs) -> np.ndarray:
        return self.app_head(screen_repr(outputs)[None, :]).data[0]

    def app_classify(self, outputs) -> int:
        return int(np.argmax(self.app_logits(outputs)))

    # -- batched losses -------------------------------------------------------
    def pretrain_loss(self, batch: PreparedBatch, rng: np.random.Generator):
        B, L = batch.valid.shape
        mask = np.zeros((B, max(L - 1, 0)), dtype=bool)
        flat_idx, target_rows = [], []
        for b, s in enumerate(batch.screens):
            plan = plan_mask(s.n_tokens, self._config.mask_ratio, rng)
            mask[b, plan.indices - 1] = True
            flat_idx.extend((b * L + plan.indices).tolist())
            target_rows.extend(zip([b] * len(plan.indices), (plan.indices - 1).tolist()))
        out, projected = self.forward(batch, mask)
        d = out.shape[2]
        preds = self.mask_head(ops.take(ops.reshape(out, (B * L, d)), np.asarray(flat_idx), axis=0))
        rows = np.asarray(target_rows)
        targets = projected.data[rows[:, 0], rows[:, 1]]
        return ops.l2_loss(preds, targets)

    def click_loss(self, batch: PreparedBatch, labels: Sequence[Dict[int, int]]):
        """``labels[b]`` maps token index -> 0/1."""
        out, _ = self.forward(batch)
        B, L, d = out.shape
        idx, y = _flatten_token_labels(labels, L)
        logits = self.click_head(ops.take(ops.reshape(out, (B * L, d)), idx, axis=0))
        return ops.cross_entropy(logits, y), logits

    def relation_loss(self, batch: PreparedBatch, pairs: Sequence[List[Tuple[int, int, int]]]):
        """``pairs[b]`` lists (token_i, token_j, label)."""
        out, _ = self.forward(batch)
        B, L, d = out.shape
        ii, jj, y = [], [], []
        for b, plist in enumerate(pairs):
            for i, j, label in plist:
                ii.append(b * L + i)
                jj.append(b * L + j)
                y.append(label)
        flat = ops.reshape(out, (B * L, d))
        summed = ops.take(flat, np.asarray(ii), axis=0) + ops.take(flat, np.asarray(jj), axis=0)
        logits = self.relation_head(summed)
        return ops.cross_entropy(logits, np.asarray(y)), logits

    def app_loss(self, batch: PreparedBatch, labels: Sequence[int]):
        out, _ = self.forward(batch)
        pooled = ops.masked_max(out, batch.valid, axis=1)
        logits = self.app_head(pooled)
        return ops.cross_entropy(logits, np.asarray(labels)), logits

    def batch_repr(self, batch: PreparedBatch) -> np.ndarray:
        out, _ = self.forward(batch)
        return ops.masked_max(out, batch.valid, axis=1).data

    def clone(self) -> "ScreenTransformer":
        twin = copy.copy(self)
        for attr, value in vars(self).items():
            if not attr.startswith("_"):
                setattr(twin, attr, copy.deepcopy(value))
        return twin


def _flatten_token_labels(labels, L):
    idx, y = [], []
    for b, mapping in enumerate(labels):
        for t in sorted(mapping):
            idx.append(b * L + t)
            y.append(mapping[t])
    return np.asarray(idx, dtype=np.int64), np.asarray(y, dtype=np.int64)


def screen_repr(outputs) -> np.ndarray:
    """Coordinate-wise max over all tokens, layout token included."""
    outputs = np.asarray(getattr(outputs, "data", outputs), dtype=np.float64)
    if outputs.ndim != 2 or outputs.shape[0] == 0:
        raise ValueError("screen_repr needs a non-empty (n, d) output matrix")
    return outputs.max(axis=0)


# -- training loops ------------------------------------------------------------

@dataclass
class TrainResult:
    losses: List[float]
    steps: int
    optimizer: Optional[AdamW] = None


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def run_training(params, opt_cfg: OptimizerConfig, n_items: int, loss_fn: Callable,
                 seed: int = 0, n_steps: Optional[int] = None, epochs: Optional[int] = None,
                 optimizer: Optional[AdamW] = None, on_step=None) -> TrainResult:
    """Shuffle-and-batch loop shared by pretraining and fine-tuning.

    ``loss_fn(indices, rng)`` returns a scalar Tensor built under the active
    tape.  Runs ``n_steps`` updates if given, else ``epochs`` full passes.
    """
    rng = np.random.default_rng(seed)
    spe = steps_per_epoch(n_items, opt_cfg.batch_size)
    total = n_steps if n_steps is not None else (epochs if epochs is not None else opt_cfg.total_epochs) * spe
    opt = optimizer or AdamW(params, opt_cfg)
    losses: List[float] = []
    queue: List[np.ndarray] = []
    for step in range(total):
        if not queue:
            queue = _batches(n_items, opt_cfg.batch_size, rng)
        idx = queue.pop(0)
        opt.zero_grad()
        with Tape() as tape:
            loss = loss_fn(idx, rng)
        tape.backward(loss)
        opt.step(lr=lr_schedule(step + 1, spe, opt_cfg))
        losses.append(float(loss.data))
        if on_step is not None:
            on_step(step, losses[-1])
    return TrainResult(losses, total, opt)


def pretrain_step(screens, model: ScreenTransformer, optimizer: AdamW, rng: np.random.Generator,
                  lr: Optional[float] = None) -> float:
    """One masked Pixel-Word update on a batch; returns the batch loss."""
    batch = PreparedBatch.from_screens(model.prepare(screens))
    optimizer.zero_grad()
    with Tape() as tape:
        loss = model.pretrain_loss(batch, rng)
    tape.backward(loss)
    optimizer.step(lr=lr)
    return float(loss.data)


def pretrain_params(model: ScreenTransformer):
    return model.encoder_parameters() + [model.mask_vector] + model.head_parameters("mask_head")


def pretrain(model: ScreenTransformer, screens, opt_cfg: OptimizerConfig, seed=0,
             n_steps=None, epochs=None, optimizer=None) -> TrainResult:
    prepared = [s for s in model.prepare(screens) if s.n_tokens >= 2]
    if not prepared:
        raise NoMaskableTokens("no screen has a maskable Pixel-Word")

    def loss_fn(idx, rng):
        return model.pretrain_loss(PreparedBatch.from_screens([prepared[i] for i in idx]), rng)

    return run_training(pretrain_params(model), opt_cfg, len(prepared), loss_fn, seed,
                        n_steps, epochs, optimizer)


def click_labels(screen: ScreenSentence, prepared: PreparedScreen) -> Dict[int, int]:
    token_of = prepared.token_of()
    out = {}
    for k, pw in enumerate(screen.pixel_words):
        if pw.clickable is not None and k in token_of:
            out[token_of[k]] = int(pw.clickable)
    return out


def relation_pairs(screen: ScreenSentence, prepared: PreparedScreen) -> List[Tuple[int, int, int]]:
    token_of = prepared.token_of()
    return [(token_of[i], token_of[j], label) for i, j, label in (screen.relations or [])
            if i in token_of and j in token_of]


def _task_params(model, head, freeze_encoder):
    head_params = model.head_parameters(head)
    return head_params if freeze_encoder else model.encoder_parameters() + head_params


def train_clickability(model, screens, opt_cfg, seed=0, n_steps=None, epochs=None,
                       freeze_encoder=False) -> TrainResult:
    screens = list(screens)
    prepared = model.prepare(screens)
    labels = [click_labels(s, p) for s, p in zip(screens, prepared)]
    keep = [k for k, lab in enumerate(labels) if lab]
    if not keep:
        raise ValueError("no clickability labels in the training screens")

    def loss_fn(idx, rng):
        chosen = [keep[i] for i in idx]
        batch = PreparedBatch.from_screens([prepared[k] for k in chosen])
        return model.click_loss(batch, [labels[k] for k in chosen])[0]

    return run_training(_task_params(model, "click_head", freeze_encoder), opt_cfg, len(keep),
                        loss_fn, seed, n_steps, epochs)


def train_relation(model, screens, opt_cfg, seed=0, n_steps=None, epochs=None,
                   freeze_encoder=False) -> TrainResult:
    screens = list(screens)
    prepared = model.prepare(screens)
    pairs = [relation_pairs(s, p) for s, p in zip(screens, prepared)]
    keep = [k for k, pl in enumerate(pairs) if pl]
    if not keep:
        raise ValueError("no relation labels in the training screens")

    def loss_fn(idx, rng):
        chosen = [keep[i] for i in idx]
        batch = PreparedBatch.from_screens([prepared[k] for k in chosen])
        return model.relation_loss(batch, [pairs[k] for k in chosen])[0]

    return run_training(_task_params(model, "relation_head", freeze_encoder), opt_cfg, len(keep),
                        loss_fn, seed, n_steps, epochs)


def train_app(model, screens, labels, opt_cfg, seed=0, n_steps=None, epochs=None,
              freeze_encoder=False) -> TrainResult:
    prepared = model.prepare(list(screens))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(prepared),):
        raise ValueError("need one app label per screen")

    def loss_fn(idx, rng):
        batch = PreparedBatch.from_screens([prepared[i] for i in idx])
        return model.app_loss(batch, labels[idx])[0]

    return run_training(_task_params(model, "app_head", freeze_encoder), opt_cfg, len(prepared),
                        loss_fn, seed, n_steps, epochs)


def encode_many(model: ScreenTransformer, screens, batch_size: int = 64):
    """Per-screen encoder outputs, each (n_tokens, d_model)."""
    prepared = model.prepare(list(screens))
    outs = []
    for k in range(0, len(prepared), batch_size):
        chunk = prepared[k:k + batch_size]
        out, _ = model.forward(PreparedBatch.from_screens(chunk))
        outs.extend(out.data[b, :s.n_tokens] for b, s in enumerate(chunk))
    return prepared, outs


# -- retrieval -----------------------------------------------------------------

@dataclass
class RetrievalIndex:
    screen_ids: List[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.screen_ids):
            raise ValueError(f"{len(self.screen_ids)} ids but vectors of shape {self.vectors.shape}")
        if len(set(self.screen_ids)) != len(self.screen_ids):
            raise ValueError("screen ids in a retrieval index must be unique")
        if not np.isfinite(self.vectors).all():
            raise ValueError("retrieval vectors must be finite")

    def __len__(self):
        return len(self.screen_ids)

    def query(self, vector, k: int = 10) -> List[Tuple[str, float]]:
        if not self.screen_ids:
            raise EmptyIndex("retrieval index is empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(vector, dtype=np.float64)
        qn = np.linalg.norm(q)
        norms = np.linalg.norm(self.vectors, axis=1)
        denom = norms * qn
        dots = self.vectors @ q
        cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        ranked = sorted(zip(self.screen_ids, cos.tolist()), key=lambda t: (-t[1], t[0]))
        return ranked[:min(k, len(ranked))]


def build_index(screens, model: ScreenTransformer) -> RetrievalIndex:
    screens = list(screens)
    _, outs = encode_many(model, screens)
    return RetrievalIndex([s.screen_id for s in screens], np.stack([screen_repr(o) for o in outs])
                          if outs else np.zeros((0, model.config.d_model)))


def retrieve(query, index: RetrievalIndex, k: int, model: ScreenTransformer):
    if len(index) == 0:
        raise EmptyIndex("retrieval index is empty")
    return index.query(screen_repr(model.encode_screen(query)), k)


# -- task accuracy ---------------------------------------------------------------

def click_accuracy(model: ScreenTransformer, screens) -> Tuple[float, int]:
    """(accuracy, number of labelled Pixel-Words) at threshold 0.5."""
    prepared, outs = encode_many(model, screens)
    hits = [int(model.clickability_forward(o, t) > 0.5) == label
            for s, p, o in zip(screens, prepared, outs) for t, label in click_labels(s, p).items()]
    return (float(np.mean(hits)) if hits else float("nan")), len(hits)


def relation_accuracy(model: ScreenTransformer, screens) -> Tuple[float, int]:
    prepared, outs = encode_many(model, screens)
    hits = [int(model.relation_forward(o, i, j) > 0.5) == label
            for s, p, o in zip(screens, prepared, outs) for i, j, label in relation_pairs(s, p)]
    return (float(np.mean(hits)) if hits else float("nan")), len(hits)


def app_accuracy(model: ScreenTransformer, screens, labels=None) -> Tuple[float, int]:
    screens = list(screens)
    labels = [s.app_type for s in screens] if labels is None else list(labels)
    _, outs = encode_many(model, screens)
    hits = [model.app_classify(o) == y for o, y in zip(outs, labels) if y is not None]
    return (float(np.mean(hits)) if hits else float("nan")), len(hits)
