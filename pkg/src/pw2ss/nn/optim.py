"""AdamW with decoupled weight decay and a linear-warmup schedule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.01
    batch_size: int = 64
    warmup_epochs: int = 5
    total_epochs: int = 50

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def lr_schedule(step: int, steps_per_epoch: int, cfg: OptimizerConfig) -> float:
    """Linear ramp from 0 to ``cfg.lr`` over the warmup epochs, then flat."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    if warmup <= 0 or step >= warmup:
        return cfg.lr
    return cfg.lr * step / warmup


class AdamW:
    """Per-parameter first/second moments keyed by parameter name."""

    def __init__(self, params, cfg: OptimizerConfig):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names) or None in names:
            raise ValueError("AdamW needs uniquely named parameters")
        self.cfg = cfg
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        self.t += 1
        adamw_step(self.params, self.cfg, self.t, self.m, self.v, lr=lr)

    def state(self):
        moments = {}
        for name in self.m:
            moments[f"m/{name}"] = self.m[name]
            moments[f"v/{name}"] = self.v[name]
        return moments

    def load_state(self, moments, t):
        for name in self.m:
            self.m[name][...] = moments[f"m/{name}"]
            self.v[name][...] = moments[f"v/{name}"]
        self.t = int(t)


def adamw_step(params, cfg: OptimizerConfig, t: int, m: dict, v: dict, lr=None):
    """One in-place AdamW update at step ``t`` (1-based)."""
    if t < 1:
        raise ValueError("AdamW step index starts at 1")
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        mp, vp = m[p.name], v[p.name]
        mp *= b1
        mp += (1.0 - b1) * g
        vp *= b2
        vp += (1.0 - b2) * g * g
        m_hat = mp / c1
        v_hat = vp / c2
        p.data -= lr * cfg.weight_decay * p.data + lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return max(1, math.ceil(n_samples / batch_size))
