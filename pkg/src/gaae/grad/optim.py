"""Adam with bias correction.

Default betas follow the BigGAN convention used throughout the GAN updates
(beta1 = 0, beta2 = 0.999); plain classifiers pass beta1 = 0.9 explicitly.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError
from .tensor import Tensor


class AdamState:
    """First/second moment buffers plus a strictly increasing step counter."""

    def __init__(self, params: dict[str, Tensor], beta1: float, beta2: float, eps: float):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def state_dict(self) -> dict:
        return {
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step_count": self.step_count, "m": self.m, "v": self.v,
        }

    def load_state_dict(self, state: dict) -> None:
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One in-place Adam update over named parameters."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Owns the state for one parameter group; reads grads off the tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.0, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.state = AdamState(self.params, beta1, beta2, eps)

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return self.state.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.state.load_state_dict(state)
