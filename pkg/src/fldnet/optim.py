"""Bias-corrected Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: list[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("Adam needs uniquely named parameters")
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.data)
            self.state.v[p.name] = np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        """One update with learning rate ``lr``; gradients are zeroed afterwards."""
        st = self.state
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        st.t += 1
        c1 = 1.0 - st.beta1 ** st.t
        c2 = 1.0 - st.beta2 ** st.t
        for p in self.params:
            g = p.grad
            m = st.m[p.name] = st.beta1 * st.m[p.name] + (1.0 - st.beta1) * g
            v = st.v[p.name] = st.beta2 * st.v[p.name] + (1.0 - st.beta2) * g * g
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + st.eps)).astype(p.data.dtype)
            p.grad = np.zeros_like(p.data)


def adam_step(params: list[Parameter], state: AdamState, lr: float) -> None:
    """Functional form over an externally held ``AdamState``."""
    opt = Adam.__new__(Adam)
    opt.params = list(params)
    opt.state = state
    for p in opt.params:
        state.m.setdefault(p.name, np.zeros_like(p.data))
        state.v.setdefault(p.name, np.zeros_like(p.data))
    opt.step(lr)
