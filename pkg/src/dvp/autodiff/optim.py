"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradientError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               m=[np.zeros_like(p.data) for p in self.params],
                               v=[np.zeros_like(p.data) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update using the gradients stored on the parameters.

        The whole step is rejected (nothing is modified) if any gradient is
        non-finite or mis-shaped.
        """
        st = self.state
        grads = []
        for i, p in enumerate(self.params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise GradientError(f"gradient {i} has shape {g.shape}, parameter has {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {i}; step aborted")
            grads.append(g)
        st.step += 1
        t = st.step
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.data -= (st.lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.data.dtype)
