"""Noise synthesis, the variance model ``f`` and the auxiliary vector ``z``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSpec:
    """Synthetic corruption: ``kind`` is ``"gaussian"`` (reads ``sigma``) or
    ``"poisson"`` (reads ``lam``, the conditional-variance slope)."""

    kind: str = "gaussian"
    sigma: float = 25 / 255
    lam: float = 1 / 60
    stream: int = 0

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.sigma > 0:
                raise ValueError("gaussian noise needs sigma > 0")
        elif self.kind == "poisson":
            if not self.lam > 0:
                raise ValueError("poisson noise needs lambda > 0")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def variance(self, x: np.ndarray) -> np.ndarray:
        """Ground-truth conditional variance Var(n | x)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gaussian":
            return np.full_like(x, self.sigma ** 2)
        return self.lam * x

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return add_gaussian_noise(x, self.sigma, rng)
        return add_poisson_noise(x, self.lam, rng)


def add_gaussian_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``x + n`` with i.i.d. N(0, sigma^2) noise; no clipping."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x)
    if sigma == 0:
        return x.copy()
    return x + sigma * rng.standard_normal(x.shape).astype(x.dtype, copy=False)


def add_poisson_noise(x: np.ndarray, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Scaled Poisson: ``lam * Poisson(x / lam)``, so E[y|x] = x and Var(y|x) = lam * x."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    x = np.asarray(x)
    if np.any(x < 0):
        raise ValueError("poisson noise requires non-negative intensities")
    return (lam * rng.poisson(x / lam)).astype(x.dtype if x.dtype.kind == "f" else np.float64)


@dataclass
class VarianceModel:
    """``f(y) = sum_k beta_k * y**k`` (monomials of degree ``0..K-1``),
    clamped below at ``eps_var``. ``eps_var = 0`` disables the floor."""

    beta: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.0]))
    eps_var: float = 1e-8

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=np.float64).ravel()
        if self.beta.size < 1:
            raise ValueError("variance model needs at least one coefficient")
        if self.eps_var < 0:
            raise ValueError("eps_var must be non-negative")

    @property
    def K(self) -> int:
        return int(self.beta.size)

    def basis(self, y: np.ndarray) -> np.ndarray:
        """Stack of basis functions evaluated at ``y``: shape (K, *y.shape)."""
        y = np.asarray(y, dtype=np.float64)
        return np.stack([y ** k for k in range(self.K)])

    def copy(self) -> "VarianceModel":
        return VarianceModel(self.beta.copy(), self.eps_var)


def eval_f(model: VarianceModel, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros_like(y)
    for k in range(model.K - 1, -1, -1):  # Horner
        out = out * y + model.beta[k]
    return np.maximum(out, model.eps_var)


def sample_z(y: np.ndarray, model: VarianceModel, rng: np.random.Generator) -> np.ndarray:
    """z_i ~ N(0, f(y_i)), independent across pixels given ``y``."""
    y = np.asarray(y)
    std = np.sqrt(eval_f(model, y))
    dtype = y.dtype if y.dtype.kind == "f" else np.float64
    return (std * rng.standard_normal(y.shape)).astype(dtype, copy=False)


@dataclass
class AuxiliarySample:
    z: np.ndarray
    alpha: float
    yhat: np.ndarray


def make_yhat(y: np.ndarray, z: np.ndarray, alpha: float) -> AuxiliarySample:
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    y = np.asarray(y)
    z = np.asarray(z, dtype=y.dtype)
    return AuxiliarySample(z=z, alpha=float(alpha), yhat=y + np.asarray(alpha, dtype=y.dtype) * z)
