"""Adam with per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float, **kw) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), lr, **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam update; returns the new parameter array."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    return (param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)


class Adam:
    """Adam over parameter groups ``[(params, lr), ...]``.

    Parameters whose ``grad`` is None after backward are skipped entirely so a
    module outside the loss graph keeps its moments and values untouched.
    """

    def __init__(self, groups: Sequence[Tuple[Sequence[Tensor], float]],
                 betas=(0.9, 0.999), eps: float = 1e-7):
        self.params: List[Tensor] = []
        self.states: List[AdamState] = []
        for params, lr in groups:
            for p in params:
                self.params.append(p)
                self.states.append(AdamState.for_param(p.data, lr, beta1=betas[0],
                                                       beta2=betas[1], eps=eps))

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, st in zip(self.params, self.states):
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad.astype(p.dtype, copy=False), st)

    def set_lr(self, lr: float, group: Optional[Sequence[Tensor]] = None):
        targets = {id(p) for p in group} if group is not None else None
        for p, st in zip(self.params, self.states):
            if targets is None or id(p) in targets:
                st.lr = lr
