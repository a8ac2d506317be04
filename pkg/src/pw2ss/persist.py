"""Checkpoint round-trips for the Screen Transformer and the proposal classifier."""

from __future__ import annotations

from typing import Optional

from .embed import LayoutAutoencoder
from .errors import ConfigError
from .label_gen import ProposalClassifier
from .model import ScreenTransformer, ScreenTransformerConfig
from .nn import AdamW, load_checkpoint, save_checkpoint

AE_PREFIX = "layout_ae/"


def save_model(path, model: ScreenTransformer, optimizer: Optional[AdamW] = None, meta=None, step=0):
    params = dict(model.state_dict())
    meta = dict(meta or {})
    meta["kind"] = "screen_transformer"
    meta["config"] = model.config.to_dict()
    ae = model.layout_encoder
    if ae is not None:
        meta["layout_ae"] = {"grid": ae.grid, "hidden": ae.hidden, "d_model": ae.d_model}
        params.update({AE_PREFIX + k: v for k, v in ae.state_dict().items()})
    moments = optimizer.state() if optimizer is not None else None
    save_checkpoint(path, params, moments=moments, meta=meta,
                    step=optimizer.t if optimizer is not None else step)


def load_model(path, seed: int = 0) -> ScreenTransformer:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "screen_transformer":
        raise ConfigError(f"{path} does not hold a Screen Transformer checkpoint")
    ae = None
    if "layout_ae" in ckpt.meta:
        state = {k[len(AE_PREFIX):]: v for k, v in ckpt.params.items() if k.startswith(AE_PREFIX)}
        ae = LayoutAutoencoder.from_state(state, **ckpt.meta["layout_ae"])
    model = ScreenTransformer(ScreenTransformerConfig.from_dict(ckpt.meta["config"]), seed=seed,
                              layout_encoder=ae)
    model.load_state_dict({k: v for k, v in ckpt.params.items() if not k.startswith(AE_PREFIX)})
    return model


def save_proposal_classifier(path, clf: ProposalClassifier, meta=None):
    meta = dict(meta or {})
    meta["kind"] = "proposal_classifier"
    meta["params"] = clf.get_params()
    save_checkpoint(path, clf.state_dict(), meta=meta)


def load_proposal_classifier(path) -> ProposalClassifier:
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "proposal_classifier":
        raise ConfigError(f"{path} does not hold a proposal-classifier checkpoint")
    return ProposalClassifier.from_state(ckpt.params, **ckpt.meta.get("params", {}))
