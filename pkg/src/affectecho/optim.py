"""Adam optimizer with explicit, serializable state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                              [a.copy() for a in self.m], [a.copy() for a in self.v])

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array(self.step), "hyper": np.array([self.lr, self.beta1, self.beta2, self.eps])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "OptimizerState":
        lr, b1, b2, eps = (float(a) for a in arrays["hyper"])
        n = sum(1 for k in arrays if k.startswith("m"))
        return cls(lr, b1, b2, eps, int(arrays["step"]),
                   [np.array(arrays[f"m{i}"]) for i in range(n)],
                   [np.array(arrays[f"v{i}"]) for i in range(n)])


def optimizer_step(params: list[np.ndarray], grads: list[np.ndarray | None],
                   state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / corr1
        vhat = v / corr2
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Thin wrapper binding a parameter list to an :class:`OptimizerState`."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.clip_norm = clip_norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads if g is not None))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                grads = [None if g is None else g * scale for g in grads]
        optimizer_step([p.data for p in self.params], grads, self.state)
