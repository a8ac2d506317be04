"""Compare tape gradients against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .autograd import Parameter, Tape


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    n_checked: Dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def failures(self) -> List[str]:
        return [n for n, e in self.max_rel_error.items() if not e < self.tolerance]


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero
    gradients from turning round-off into huge ratios."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _pick_coords(grad, n_coords, rng):
    size = grad.size
    if size <= n_coords:
        return np.arange(size)
    # Half from where the gradient is non-zero (embedding tables are mostly
    # untouched rows), half uniformly.
    nonzero = np.flatnonzero(grad.reshape(-1))
    picks = []
    if nonzero.size:
        k = min(max(n_coords // 2, 1), nonzero.size)
        picks.extend(rng.choice(nonzero, size=k, replace=False).tolist())
    rest = np.setdiff1d(np.arange(size), picks)
    picks.extend(rng.choice(rest, size=n_coords - len(picks), replace=False).tolist())
    return np.sort(np.asarray(picks, dtype=np.int64))


def grad_check(loss_fn: Callable[[], object], params: List[Parameter], tolerance=1e-5,
               n_coords=32, h=1e-5, seed=0, floor=1e-6) -> GradCheckReport:
    """Check ``loss_fn``'s gradient w.r.t. ``params``.

    ``loss_fn`` must build its scalar loss from the current parameter values
    each time it is called.  At least ``n_coords`` coordinates (or all of them,
    if fewer) are sampled per parameter.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    report = GradCheckReport(tolerance)
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = _pick_coords(analytic, n_coords, rng)
        worst = 0.0
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            up = float(loss_fn().data)
            flat[c] = old - h
            down = float(loss_fn().data)
            flat[c] = old
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[c], numeric, floor)))
        report.max_rel_error[name] = worst
        report.n_checked[name] = int(len(coords))
    return report
