"""scikit-learn style wrappers around the Screen Transformer.

``X`` is always a sequence of ScreenSentence objects. The task estimators
fine-tune a private copy of a fitted ScreenEncoder's network, or a freshly
initialised one when no encoder is given.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .embed import LayoutAutoencoder, layout_raster
from .model import (
    ScreenTransformer,
    ScreenTransformerConfig,
    build_index,
    click_labels,
    encode_many,
    pretrain,
    relation_pairs,
    screen_repr,
    train_app,
    train_clickability,
    train_relation,
)
from .nn import OptimizerConfig
from .validation import check_is_fitted_attr, check_screens

_MODEL_PARAMS = ("layers", "d_model", "heads", "ffn_dim", "max_len", "mask_ratio",
                 "app_classes", "text_dim", "layout_grid")


def _model_config(est) -> ScreenTransformerConfig:
    return ScreenTransformerConfig(**{k: getattr(est, k) for k in _MODEL_PARAMS})


def _opt_config(est) -> OptimizerConfig:
    return OptimizerConfig(lr=est.lr, batch_size=est.batch_size, warmup_epochs=est.warmup_epochs,
                           weight_decay=est.weight_decay)


class ScreenEncoder(TransformerMixin, BaseEstimator):
    """Masked Pixel-Word pretraining; ``transform`` gives max-pooled screen vectors."""

    def __init__(self, layers=6, d_model=128, heads=4, ffn_dim=256, max_len=128, mask_ratio=0.15,
                 app_classes=26, text_dim=384, layout_grid=32, lr=1e-4, batch_size=64,
                 warmup_epochs=5, weight_decay=0.01, n_steps=500, layout_epochs=200, seed=0):
        self.layers = layers
        self.d_model = d_model
        self.heads = heads
        self.ffn_dim = ffn_dim
        self.max_len = max_len
        self.mask_ratio = mask_ratio
        self.app_classes = app_classes
        self.text_dim = text_dim
        self.layout_grid = layout_grid
        self.lr = lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.weight_decay = weight_decay
        self.n_steps = n_steps
        self.layout_epochs = layout_epochs
        self.seed = seed

    def fit(self, X, y=None):
        screens = check_screens(X)
        if not screens:
            raise ValueError("ScreenEncoder.fit needs at least one screen")
        rasters = np.stack([layout_raster(s, self.layout_grid) for s in screens])
        self.layout_encoder_ = LayoutAutoencoder(grid=self.layout_grid, d_model=self.d_model,
                                                 epochs=self.layout_epochs, seed=self.seed).fit(rasters)
        self.model_ = ScreenTransformer(_model_config(self), seed=self.seed,
                                        layout_encoder=self.layout_encoder_)
        result = pretrain(self.model_, screens, _opt_config(self), seed=self.seed, n_steps=self.n_steps)
        self.loss_history_ = result.losses
        return self

    def transform(self, X):
        check_is_fitted_attr(self, "model_")
        screens = check_screens(X)
        _, outs = encode_many(self.model_, screens)
        return np.stack([screen_repr(o) for o in outs]) if outs else np.zeros((0, self.d_model))


class _TaskEstimator(BaseEstimator):
    def _fresh_model(self) -> ScreenTransformer:
        if self.encoder is not None:
            check_is_fitted_attr(self.encoder, "model_")
            return self.encoder.model_.clone()
        cfg = ScreenTransformerConfig(app_classes=self.app_classes) if self.config is None else self.config
        return ScreenTransformer(cfg, seed=self.seed)

    def _opt(self):
        return OptimizerConfig(lr=self.lr, batch_size=self.batch_size, warmup_epochs=self.warmup_epochs)

    def _outputs(self, X):
        check_is_fitted_attr(self, "model_")
        screens = check_screens(X)
        prepared, outs = encode_many(self.model_, screens)
        return screens, prepared, outs


class ClickabilityClassifier(ClassifierMixin, _TaskEstimator):
    """Per-Pixel-Word clickability. Predictions are flattened over screens in Pixel-Word order."""

    def __init__(self, encoder: Optional[ScreenEncoder] = None, config=None, app_classes=26,
                 lr=1e-4, batch_size=64, warmup_epochs=5, n_steps=300, freeze_encoder=False, seed=0):
        self.encoder = encoder
        self.config = config
        self.app_classes = app_classes
        self.lr = lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.n_steps = n_steps
        self.freeze_encoder = freeze_encoder
        self.seed = seed

    def fit(self, X, y=None):
        screens = check_screens(X)
        self.classes_ = np.array([0, 1])
        self.model_ = self._fresh_model()
        result = train_clickability(self.model_, screens, self._opt(), seed=self.seed,
                                    n_steps=self.n_steps, freeze_encoder=self.freeze_encoder)
        self.loss_history_ = result.losses
        return self

    def predict_proba(self, X):
        screens, prepared, outs = self._outputs(X)
        rows = []
        for s, p, o in zip(screens, prepared, outs):
            token_of = p.token_of()
            for k in range(len(s.pixel_words)):
                rows.append(self.model_.clickability_probs(o, token_of[k]) if k in token_of
                            else np.array([np.nan, np.nan]))
        return np.array(rows).reshape(-1, 2)

    def predict(self, X):
        proba = self.predict_proba(X)
        return np.where(np.isnan(proba[:, 1]), -1, (proba[:, 1] > 0.5).astype(np.int64))

    def score(self, X, y=None, sample_weight=None):
        screens = check_screens(X)
        pred = self.predict(screens)
        truth = np.array([-1 if p.clickable is None else int(p.clickable)
                          for s in screens for p in s.pixel_words])
        keep = (truth >= 0) & (pred >= 0)
        if not keep.any():
            raise ValueError("no labelled Pixel-Words to score")
        return float(np.mean(pred[keep] == truth[keep]))


class RelationClassifier(ClassifierMixin, _TaskEstimator):
    """Binary relation between two Pixel-Words; predictions follow each screen's relation list."""

    def __init__(self, encoder: Optional[ScreenEncoder] = None, config=None, app_classes=26,
                 lr=1e-4, batch_size=64, warmup_epochs=5, n_steps=300, freeze_encoder=False, seed=0):
        self.encoder = encoder
        self.config = config
        self.app_classes = app_classes
        self.lr = lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.n_steps = n_steps
        self.freeze_encoder = freeze_encoder
        self.seed = seed

    def fit(self, X, y=None):
        screens = check_screens(X)
        self.classes_ = np.array([0, 1])
        self.model_ = self._fresh_model()
        result = train_relation(self.model_, screens, self._opt(), seed=self.seed,
                                n_steps=self.n_steps, freeze_encoder=self.freeze_encoder)
        self.loss_history_ = result.losses
        return self

    def pair_proba(self, screen, i: int, j: int) -> float:
        """Probability that Pixel-Words ``i`` and ``j`` (list indices) are related."""
        _, prepared, outs = self._outputs([screen])
        token_of = prepared[0].token_of()
        return self.model_.relation_forward(outs[0], token_of[i], token_of[j])

    def predict_proba(self, X):
        screens, prepared, outs = self._outputs(X)
        p1 = []
        for s, p, o in zip(screens, prepared, outs):
            p1.extend(self.model_.relation_forward(o, i, j) for i, j, _ in relation_pairs(s, p))
        p1 = np.asarray(p1, dtype=np.float64)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def score(self, X, y=None, sample_weight=None):
        screens = check_screens(X)
        truth = []
        for s, p in zip(screens, encode_many(self.model_, screens)[0]):
            truth.extend(label for _, _, label in relation_pairs(s, p))
        if not truth:
            raise ValueError("no relation labels to score")
        return float(np.mean(self.predict(screens) == np.asarray(truth)))


class AppTypeClassifier(ClassifierMixin, _TaskEstimator):
    def __init__(self, encoder: Optional[ScreenEncoder] = None, config=None, app_classes=26,
                 lr=1e-4, batch_size=64, warmup_epochs=5, n_steps=300, freeze_encoder=False, seed=0):
        self.encoder = encoder
        self.config = config
        self.app_classes = app_classes
        self.lr = lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.n_steps = n_steps
        self.freeze_encoder = freeze_encoder
        self.seed = seed

    def fit(self, X, y=None):
        screens = check_screens(X)
        if y is None:
            if any(s.app_type is None for s in screens):
                raise ValueError("every screen needs an app_type when y is not given")
            y = [s.app_type for s in screens]
        y = np.asarray(y, dtype=np.int64)
        self.model_ = self._fresh_model()
        n_classes = self.model_.config.app_classes
        if y.shape != (len(screens),) or y.min() < 0 or y.max() >= n_classes:
            raise ValueError(f"app labels must be one integer in 0..{n_classes - 1} per screen")
        self.classes_ = np.arange(n_classes)
        result = train_app(self.model_, screens, y, self._opt(), seed=self.seed,
                           n_steps=self.n_steps, freeze_encoder=self.freeze_encoder)
        self.loss_history_ = result.losses
        return self

    def decision_function(self, X):
        _, _, outs = self._outputs(X)
        return np.stack([self.model_.app_logits(o) for o in outs])

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def score(self, X, y=None, sample_weight=None):
        screens = check_screens(X)
        y = [s.app_type for s in screens] if y is None else y
        return float(np.mean(self.predict(screens) == np.asarray(y)))


class ScreenRetriever(BaseEstimator):
    """Exhaustive cosine search over encoded screens."""

    def __init__(self, encoder: Optional[ScreenEncoder] = None, k=10):
        self.encoder = encoder
        self.k = k

    def fit(self, X, y=None):
        if self.encoder is None:
            raise ValueError("ScreenRetriever needs a fitted ScreenEncoder")
        check_is_fitted_attr(self.encoder, "model_")
        self.index_ = build_index(check_screens(X), self.encoder.model_)
        return self

    def kneighbors(self, X, k: Optional[int] = None) -> List[list]:
        check_is_fitted_attr(self, "index_")
        vectors = self.encoder.transform(X)
        return [self.index_.query(v, k or self.k) for v in vectors]
