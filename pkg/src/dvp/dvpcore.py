"""Variance update from the denoiser's variation (step S2).

From cached outputs ``r1 = R(yhat1)``, ``r2 = R(yhat2)`` the variation
``dR = r2 - r1`` is split at each S pixel into its 4-neighbour average and a
non-smooth remainder ``dR_perp``. A per-intensity-bin regression of
``dR_perp`` on ``dy`` gives ``L_perp``, which maps to the ratio ``M`` between
the variance of z and the noise variance. The variance coefficients are then
moved towards the values that would make ``M = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .noise import VarianceModel, eval_f
from .perturb import SubsetS

NBINS = 10
DROP_FRACTION = 0.2
KEEP_FRACTION = 0.03
MIN_BIN_COUNT = 8
M_DENOM_MIN = 1e-6


def compute_variation(r1, r2, y1, y2):
    """Return ``(dR, dy) = (r2 - r1, y2 - y1)``."""
    return np.asarray(r2, np.float64) - np.asarray(r1, np.float64), \
        np.asarray(y2, np.float64) - np.asarray(y1, np.float64)


def neighbor_average(dR: np.ndarray, rows, cols):
    """Mean of the four axis neighbours of ``dR`` at interior pixels ``(rows, cols)``."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    h, w = dR.shape[-2:]
    if np.any((rows < 1) | (rows > h - 2) | (cols < 1) | (cols > w - 2)):
        raise ValueError("neighbor_average is only defined at interior pixels")
    return 0.25 * (dR[..., rows - 1, cols] + dR[..., rows + 1, cols]
                   + dR[..., rows, cols - 1] + dR[..., rows, cols + 1])


def bin_index(values: np.ndarray, lo: float, hi: float, nbins: int = NBINS) -> np.ndarray:
    """Equal-width bins over ``[lo, hi]``; a degenerate range maps everything to bin 0."""
    values = np.asarray(values, dtype=np.float64)
    if not hi > lo:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * nbins).astype(np.int64)
    return np.clip(idx, 0, nbins - 1)


def select_regions(r1_s, dRt_s, dy_s, lo: float, hi: float, nbins: int = NBINS,
                   drop: float = DROP_FRACTION, keep: float = KEEP_FRACTION) -> list[np.ndarray]:
    """Per-bin indices (into the S arrays) of pixels used to estimate ``L_perp``.

    In each bin the ``floor(drop * n)`` members with the smallest ``|dy|`` are
    removed, then the ``floor(keep * n')`` survivors with the smallest
    ``|dRt / dy|`` are kept. Ties are broken by position in the S arrays.
    Empty lists mark invalid bins.
    """
    r1_s = np.asarray(r1_s, np.float64)
    dRt_s = np.asarray(dRt_s, np.float64)
    dy_s = np.asarray(dy_s, np.float64)
    bins = bin_index(r1_s, lo, hi, nbins)
    out = []
    for b in range(nbins):
        members = np.flatnonzero(bins == b)
        if members.size == 0:
            out.append(members)
            continue
        order = np.argsort(np.abs(dy_s[members]), kind="stable")
        survivors = members[order[int(np.floor(drop * members.size)):]]
        survivors = np.sort(survivors)  # restore index order for the next stable sort
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(dRt_s[survivors] / dy_s[survivors])
        ratio = np.where(np.isfinite(ratio), ratio, np.inf)
        order = np.argsort(ratio, kind="stable")
        out.append(survivors[order[:int(np.floor(keep * survivors.size))]])
    return out


def estimate_lperp(bins: list[np.ndarray], dRperp, dy, min_count: int = MIN_BIN_COUNT) -> np.ndarray:
    """Per-bin slope ``sum(dRperp * dy) / sum(dy**2)``; NaN for invalid bins."""
    dRperp = np.asarray(dRperp, np.float64)
    dy = np.asarray(dy, np.float64)
    out = np.full(len(bins), np.nan)
    for b, idx in enumerate(bins):
        if idx.size < min_count:
            continue
        den = float(np.dot(dy[idx], dy[idx]))
        if den > 0:
            out[b] = float(np.dot(dRperp[idx], dy[idx])) / den
    return out


def compute_m(lperp, alpha):
    """``M = (1 - L) / (1 + alpha^2 L)``; NaN where the denominator is below 1e-6."""
    lperp = np.asarray(lperp, np.float64)
    a2 = np.asarray(alpha, np.float64) ** 2
    den = 1.0 + a2 * lperp
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (1.0 - lperp) / den
    return np.where(np.abs(den) < M_DENOM_MIN, np.nan, m)


def lperp_from_m(m, alpha):
    """Inverse of :func:`compute_m`: ``L = (1 - M) / (1 + alpha^2 M)``."""
    m = np.asarray(m, np.float64)
    return (1.0 - m) / (1.0 + np.asarray(alpha, np.float64) ** 2 * m)


def build_a_average(r_out, values, lo: float | None = None, hi: float | None = None,
                    nbins: int = NBINS) -> np.ndarray:
    """Bin means of ``values`` with pixels grouped by the bin of ``r_out``.

    This is the conditional-expectation operator with the clean image replaced
    by the denoised estimate; empty bins are NaN.
    """
    r_out = np.asarray(r_out, np.float64).ravel()
    values = np.asarray(values, np.float64).ravel()
    lo = float(r_out.min()) if lo is None else lo
    hi = float(r_out.max()) if hi is None else hi
    bins = bin_index(r_out, lo, hi, nbins)
    counts = np.bincount(bins, minlength=nbins).astype(np.float64)
    sums = np.bincount(bins, weights=values, minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


def apply_a(r_out, values, lo=None, hi=None, nbins: int = NBINS) -> np.ndarray:
    """``A @ values``: every pixel replaced by the mean of its bin."""
    r = np.asarray(r_out, np.float64)
    lo = float(r.min()) if lo is None else lo
    hi = float(r.max()) if hi is None else hi
    means = build_a_average(r, values, lo, hi, nbins)
    return means[bin_index(r, lo, hi, nbins)].reshape(np.shape(values))


@dataclass
class DvpEstimate:
    bins: list[np.ndarray]
    dy: np.ndarray
    dR: np.ndarray
    dRt: np.ndarray
    dRperp: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    lperp: np.ndarray
    m: np.ndarray
    bin_centers: np.ndarray
    bin_edges: tuple[float, float] = (0.0, 1.0)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.m)


def estimate(r1_s, dR_s, dRt_s, dy_s, y_s, alpha_s, lo: float, hi: float,
             nbins: int = NBINS, min_count: int = MIN_BIN_COUNT) -> DvpEstimate:
    """Full per-bin ``L_perp`` / ``M`` estimate from pooled S-pixel data."""
    r1_s = np.asarray(r1_s, np.float64)
    dR_s = np.asarray(dR_s, np.float64)
    dRt_s = np.asarray(dRt_s, np.float64)
    dy_s = np.asarray(dy_s, np.float64)
    alpha_s = np.broadcast_to(np.asarray(alpha_s, np.float64), r1_s.shape)
    dRperp = dR_s - dRt_s
    bins = select_regions(r1_s, dRt_s, dy_s, lo, hi, nbins)
    lperp = estimate_lperp(bins, dRperp, dy_s, min_count)
    a2 = np.array([np.mean(alpha_s[idx] ** 2) if idx.size else np.nan for idx in bins])
    m = compute_m(lperp, np.sqrt(a2))
    centers = np.array([np.mean(r1_s[idx]) if idx.size else np.nan for idx in bins])
    return DvpEstimate(bins, dy_s, dR_s, dRt_s, dRperp, np.asarray(y_s, np.float64), alpha_s,
                       lperp, m, centers, (lo, hi))


@dataclass
class BetaUpdate:
    model: VarianceModel
    beta_star: np.ndarray
    valid_bins: int
    fallback: bool


def update_beta(vm: VarianceModel, est: DvpEstimate, upsilon: float) -> BetaUpdate:
    """Least-squares target coefficients followed by the moving average.

    Solves ``min_beta sum_b ([A f_beta(y)]_b - [A 1/M]_b [A f_l(y)]_b)^2`` over
    valid bins, where the bin averages run over the selected pixels. The
    system is solved for the increment ``beta - beta_l`` so that ``M = 1`` in
    every valid bin is an exact fixed point. With a rank-deficient design only
    the constant coefficient is updated.
    """
    valid = [b for b in range(len(est.bins)) if np.isfinite(est.m[b]) and est.bins[b].size]
    beta = vm.beta
    if not valid:
        return BetaUpdate(vm.copy(), beta.copy(), 0, True)
    X = np.empty((len(valid), vm.K))
    t = np.empty(len(valid))
    for row, b in enumerate(valid):
        yb = est.y[est.bins[b]]
        basis = vm.basis(yb)
        X[row] = basis.mean(axis=1)
        lin = beta @ basis
        if np.all(lin >= vm.eps_var):
            fl = X[row] @ beta
        else:
            fl = float(np.mean(eval_f(vm, yb)))
        inv_m = 1.0 / est.m[b]  # bin-constant M, so the A-average of 1/M is 1/M_b
        t[row] = inv_m * fl - fl
    fallback = np.linalg.matrix_rank(X) < vm.K
    delta = np.zeros(vm.K)
    if fallback:
        delta[0] = np.linalg.lstsq(X[:, :1], t, rcond=None)[0][0]
    else:
        delta = np.linalg.lstsq(X, t, rcond=None)[0]
    beta_star = beta + delta
    new = VarianceModel(beta + upsilon * (beta_star - beta), vm.eps_var)
    return BetaUpdate(new, beta_star, len(valid), bool(fallback))


@dataclass
class UpdateBuffer:
    """Pooled S-pixel statistics over a delay window of iterations."""

    entries: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, y: np.ndarray, yhat1: np.ndarray, yhat2: np.ndarray, r1: np.ndarray,
             r2: np.ndarray, subsets: list[SubsetS], alpha: float) -> None:
        """Add one iteration's batch; arrays are (N, H, W) or (N, 1, H, W)."""
        y, yhat1, yhat2, r1, r2 = (np.asarray(a, np.float64).reshape(len(subsets), *subsets[0].shape)
                                   for a in (y, yhat1, yhat2, r1, r2))
        dR, dy = compute_variation(r1, r2, yhat1, yhat2)
        rows = np.concatenate([s.rows for s in subsets])
        cols = np.concatenate([s.cols for s in subsets])
        item = np.concatenate([np.full(len(s), i) for i, s in enumerate(subsets)])
        dRt = 0.25 * (dR[item, rows - 1, cols] + dR[item, rows + 1, cols]
                      + dR[item, rows, cols - 1] + dR[item, rows, cols + 1])
        self.entries.append(dict(
            r1_s=r1[item, rows, cols], dR_s=dR[item, rows, cols], dRt_s=dRt,
            dy_s=dy[item, rows, cols], y_s=y[item, rows, cols],
            alpha_s=np.full(rows.size, float(alpha)),
            lo=float(r1.min()), hi=float(r1.max())))

    def flush(self) -> dict:
        if not self.entries:
            raise ValueError("flush on an empty buffer")
        keys = ("r1_s", "dR_s", "dRt_s", "dy_s", "y_s", "alpha_s")
        pooled = {k: np.concatenate([e[k] for e in self.entries]) for k in keys}
        pooled["lo"] = min(e["lo"] for e in self.entries)
        pooled["hi"] = max(e["hi"] for e in self.entries)
        self.entries = []
        return pooled


def s2_update(vm: VarianceModel, pooled: dict, upsilon: float) -> tuple[BetaUpdate, DvpEstimate]:
    est = estimate(pooled["r1_s"], pooled["dR_s"], pooled["dRt_s"], pooled["dy_s"],
                   pooled["y_s"], pooled["alpha_s"], pooled["lo"], pooled["hi"])
    return update_beta(vm, est, upsilon), est
