"""Training objective: the noise-approximation loss, the partial-linearity
penalty and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, mean, mul, square, sub, sum as tsum
from .noise import AuxiliarySample
from .perturb import PerturbationSet, WeightMap

Denoiser = Callable[[Tensor], Tensor]


def lhat_from_output(out: Tensor, y: np.ndarray, z: np.ndarray, alpha) -> Tensor:
    """Mean over pixels of ``(out - (y - z / alpha))**2``.

    ``alpha`` may be a scalar or an array broadcastable against ``y``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha == 0):
        raise ValueError("alpha must be non-zero")
    target = (np.asarray(y) - np.asarray(z) / alpha).astype(out.dtype)
    return mean(square(sub(out, target)))


def loss_lhat(R: Denoiser, s: AuxiliarySample, y: np.ndarray) -> Tensor:
    if s.alpha == 0:
        raise ValueError("alpha must be non-zero")
    return lhat_from_output(R(Tensor(_nchw(s.yhat))), _nchw(y), _nchw(s.z), s.alpha)


def lc_from_outputs(r1: Tensor, r2: Tensor, r3: Tensor, tau1, w: np.ndarray, count: int) -> Tensor:
    """``sum((W * (tau1 r1 + (1 - tau1) r2 - r3))**2) / count``.

    ``tau1`` is a scalar or one value per batch item; ``w`` is zero off S and
    ``count`` is the total number of S pixels.
    """
    t = np.asarray(tau1, dtype=r1.dtype)
    if t.ndim == 1:
        t = t.reshape(-1, 1, 1, 1)
    comb = sub(mul(r1, t) + mul(r2, 1 - t), r3)
    w2 = np.asarray(w, dtype=r1.dtype) ** 2
    return mul(tsum(mul(square(comb), w2)), 1.0 / max(count, 1))


def loss_lc(R: Denoiser, p: PerturbationSet, W: WeightMap) -> Tensor:
    r1 = R(Tensor(_nchw(p.yhat1)))
    r2 = R(Tensor(_nchw(p.yhat2)))
    r3 = R(Tensor(_nchw(p.yhat3)))
    return lc_from_outputs(r1, r2, r3, p.tau1, _nchw(W.w), len(p.S))


@dataclass
class BatchItem:
    y: np.ndarray
    aux: AuxiliarySample
    pert: PerturbationSet
    weights: WeightMap


def loss_all(R: Denoiser, batch: list[BatchItem], gamma: float) -> Tensor:
    """``L_hat + gamma * L_c`` averaged over the batch items (W fixed per item)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    total = None
    for item in batch:
        term = loss_lhat(R, item.aux, item.y)
        if gamma > 0:
            term = term + mul(loss_lc(R, item.pert, item.weights), gamma)
        total = term if total is None else total + term
    return mul(total, 1.0 / len(batch))


def _nchw(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return a[:, None]
    return a
