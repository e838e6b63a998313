"""Adam and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class OptimizerError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Parameters with no gradient (``None``) are treated as having a zero
    gradient so the moment estimates decay consistently for all of them.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise OptimizerError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class Adam:
    def __init__(self, named_params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(named_params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step(
            {n: p.data for n, p in self.params.items()},
            {n: p.grad for n, p in self.params.items()},
            self.state,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def lr_schedule(epoch: int, base_lr: float, hold_epochs: int = 30, decay: float = 0.95) -> float:
    """Constant for the first ``hold_epochs`` epochs, then 5% lower every epoch."""
    if epoch < hold_epochs:
        return base_lr
    return base_lr * decay ** (epoch - hold_epochs + 1)
