"""Perturbed samples for the partial-linearity penalty and the variation
estimator: the pixel subset S, the triple yhat1/yhat2/yhat3 and the weights W."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .noise import AuxiliarySample, VarianceModel, eval_f

logger = logging.getLogger(__name__)

PATCH = 5
_NEIGHBOURS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])


@dataclass
class SubsetS:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple[int, int]
    patch: int = PATCH

    def __len__(self) -> int:
        return int(self.rows.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def flat(self) -> np.ndarray:
        return self.rows * self.shape[1] + self.cols


def _patch_range(start: int, patch: int, n: int) -> np.ndarray:
    # candidate coordinates along one axis: inside the patch, off the image border
    r = np.arange(start, start + patch)
    return r[(r > 0) & (r < n - 1)]


def select_subset(height: int, width: int, rng: np.random.Generator, patch: int = PATCH) -> SubsetS:
    """One pixel per complete ``patch x patch`` tile (tiling from the top-left).

    Pixels are never on the image border, and a pixel that would be 4-adjacent
    to one already chosen in the tile to its left or above is redrawn
    uniformly from the non-adjacent candidates of its own tile.
    """
    pr, pc = height // patch, width // patch
    if pr == 0 or pc == 0:
        logger.warning("image %dx%d is smaller than one %dx%d patch; S is empty",
                       height, width, patch, patch)
        empty = np.zeros(0, dtype=np.int64)
        return SubsetS(empty, empty.copy(), (height, width), patch)
    rows = np.empty((pr, pc), dtype=np.int64)
    cols = np.empty((pr, pc), dtype=np.int64)
    rr = [_patch_range(a * patch, patch, height) for a in range(pr)]
    cc = [_patch_range(b * patch, patch, width) for b in range(pc)]
    # vectorised first draw, conflicts repaired in raster order below
    for a in range(pr):
        rows[a] = rr[a][rng.integers(0, rr[a].size, size=pc)]
    for b in range(pc):
        cols[:, b] = cc[b][rng.integers(0, cc[b].size, size=pr)]
    for a in range(pr):
        for b in range(pc):
            r, c = rows[a, b], cols[a, b]
            left = b > 0 and rows[a, b - 1] == r and cols[a, b - 1] == c - 1
            up = a > 0 and cols[a - 1, b] == c and rows[a - 1, b] == r - 1
            if not (left or up):
                continue
            gr, gc = np.meshgrid(rr[a], cc[b], indexing="ij")
            ok = np.ones(gr.shape, dtype=bool)
            if b > 0:
                ok &= ~((gr == rows[a, b - 1]) & (gc == cols[a, b - 1] + 1))
            if a > 0:
                ok &= ~((gc == cols[a - 1, b]) & (gr == rows[a - 1, b] + 1))
            k = rng.integers(0, int(ok.sum()))
            rows[a, b], cols[a, b] = gr[ok][k], gc[ok][k]
    return SubsetS(rows.ravel(), cols.ravel(), (height, width), patch)


@dataclass
class PerturbationSet:
    yhat1: np.ndarray
    yhat2: np.ndarray
    yhat3: np.ndarray
    S: SubsetS
    tau1: float
    nb_rows: np.ndarray
    nb_cols: np.ndarray


def make_perturbed(aux: AuxiliarySample, y: np.ndarray, vm: VarianceModel, S: SubsetS,
                   rng: np.random.Generator) -> PerturbationSet:
    """yhat2 replaces each S pixel by ``y[i'] + alpha * z'`` for a random
    4-neighbour ``i'`` and a fresh ``z' ~ N(0, f(y[i']))``; yhat3 is the convex
    combination ``tau1 * yhat1 + (1 - tau1) * yhat2`` with ``tau1 ~ U(0, 1)``."""
    y1 = aux.yhat
    if y.shape != y1.shape or y.shape != S.shape:
        raise ValueError(f"shape mismatch: y {y.shape}, yhat {y1.shape}, S {S.shape}")
    y2 = y1.copy()
    choice = rng.integers(0, 4, size=len(S))
    nr = S.rows + _NEIGHBOURS[choice, 0]
    nc = S.cols + _NEIGHBOURS[choice, 1]
    if len(S):
        yn = y[nr, nc]
        zn = np.sqrt(eval_f(vm, yn)) * rng.standard_normal(len(S))
        y2[S.rows, S.cols] = yn + aux.alpha * zn
    tau1 = float(rng.uniform(0.0, 1.0))
    t = np.asarray(tau1, dtype=y1.dtype)
    y3 = t * y1 + (1 - t) * y2
    return PerturbationSet(y1, y2, y3, S, tau1, nr, nc)


@dataclass
class WeightMap:
    w: np.ndarray
    eps_s: float


def compute_weights(r1: np.ndarray, r2: np.ndarray, S: SubsetS, yhat1: np.ndarray,
                    yhat2: np.ndarray, eps_var: float = 1e-8) -> WeightMap:
    """``W_ii = 1 / (|r1_i - r2_i| + eps_S)`` on S and 0 elsewhere, with
    ``eps_S = 0.1 * sigma_S`` and ``sigma_S^2`` the mean squared input change on S.
    The weights are plain arrays: no gradient flows through them."""
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    w = np.zeros(S.shape, dtype=np.float64)
    if len(S) == 0:
        return WeightMap(w, float("nan"))
    d = (np.asarray(yhat1, np.float64) - np.asarray(yhat2, np.float64))[S.rows, S.cols]
    sigma_s = float(np.sqrt(np.mean(d * d)))
    eps_s = 0.1 * sigma_s
    if eps_s == 0.0:
        eps_s = float(np.sqrt(eps_var)) if eps_var > 0 else float(np.finfo(np.float64).eps)
    w[S.rows, S.cols] = 1.0 / (np.abs(r1 - r2)[S.rows, S.cols] + eps_s)
    return WeightMap(w, eps_s)
