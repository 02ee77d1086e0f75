"""Monte Carlo checks of the noise-approximation identity, the
variance-matching condition and the closed-form ``L_perp``.

Every check draws scalar "pixels" from a synthetic model:
``x ~ U[0.2, 0.8]``, Gaussian noise ``n`` with standard deviation ``sigma``
and an auxiliary ``z ~ N(0, M sigma^2)``. Pass/fail decisions for Monte Carlo
quantities use estimated standard errors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..dvpcore import compute_m
from ..noise import VarianceModel, eval_f

MIN_SAMPLES = 10_000
X_RANGE = (0.2, 0.8)
THEOREM1_GRID = {"M": (0.5, 1.0, 1.5), "alpha": (0.2, 0.5, 1.0), "L": (0.0, 0.3, 0.7)}


@dataclass
class MonteCarloReport:
    name: str
    params: dict
    estimate: float
    target: float
    tolerance: float
    passed: bool
    control_passed: bool | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """Passes, and the negative control (if any) is rejected."""
        return self.passed and not self.control_passed

    def row(self) -> str:
        params = ",".join(f"{k}={v!r}" for k, v in self.params.items())
        control = "-" if self.control_passed is None else ("pass" if self.control_passed else "fail")
        return "\t".join([self.name, params, repr(self.estimate), repr(self.target),
                          repr(self.tolerance), "pass" if self.passed else "fail", control])


REPORT_HEADER = "check\tparams\testimate\ttarget\ttolerance\tresult\tcontrol"


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(v.size))


def verify_theorem1(M: float, alpha: float, L: float, n: int, rng: np.random.Generator,
                    sigma: float = 0.1, a: float = 0.9, c_form: str = "proof",
                    k_se: float = 4.0) -> MonteCarloReport:
    """Compare ``L_hat(R)`` with ``E|R_n - M n|^2 + c`` for ``R(yhat) = a x + L (n + alpha z)``.

    ``c_form="proof"`` uses ``c = c1 + c2`` with the terms exactly as defined
    in the original derivation; ``"expanded"`` uses ``2 c1 + c2``, which is
    what expanding the square gives (the cross term appears twice). The two
    agree only when ``c1 = M (1 - M) sigma^2`` vanishes, i.e. ``M = 1``.
    The negative control drops ``c`` altogether.
    """
    if n < MIN_SAMPLES:
        raise ValueError(f"refusing Monte Carlo check with N={n} < {MIN_SAMPLES}")
    if c_form not in ("proof", "expanded"):
        raise ValueError(f"unknown c_form {c_form!r}")
    x = rng.uniform(*X_RANGE, size=n)
    noise = sigma * rng.standard_normal(n)
    z = np.sqrt(M) * sigma * rng.standard_normal(n)
    y = x + noise
    r = a * x + L * (noise + alpha * z)
    lhat = (r - (y - z / alpha)) ** 2
    A = (y - r) - M * noise
    B = M * noise - z / alpha
    c1 = (noise - M * noise) * B
    c2 = B * B
    weight = 1.0 if c_form == "proof" else 2.0
    rhs = A * A + weight * c1 + c2
    lhs_m, lhs_se = _mean_se(lhat)
    rhs_m, rhs_se = _mean_se(rhs)
    ctl_m, ctl_se = _mean_se(A * A)
    tol = k_se * np.hypot(lhs_se, rhs_se)
    control_tol = k_se * np.hypot(lhs_se, ctl_se)
    return MonteCarloReport(
        "theorem1", {"M": M, "alpha": alpha, "L": L, "N": n, "c": c_form},
        lhs_m, rhs_m, float(tol), abs(lhs_m - rhs_m) <= tol,
        control_passed=abs(lhs_m - ctl_m) <= control_tol,
        extra={"c1": float(np.mean(c1)), "c2": float(np.mean(c2)), "lhs_se": lhs_se, "rhs_se": rhs_se},
    )


def theorem1_grid(n: int, seed: int, c_form: str = "proof") -> list[MonteCarloReport]:
    """All 27 points of the (M, alpha, L) grid, one independent stream each."""
    points = list(itertools.product(*THEOREM1_GRID.values()))
    streams = np.random.SeedSequence(seed).spawn(len(points))
    return [verify_theorem1(M, alpha, L, n, np.random.default_rng(s), c_form=c_form)
            for (M, alpha, L), s in zip(points, streams)]


def _poisson_sample(x: np.ndarray, lam: float, rng: np.random.Generator) -> np.ndarray:
    return lam * rng.poisson(x / lam)


def verify_prop2(kind: str, n: int, seed: int, sigma: float = 25 / 255, lam: float = 1 / 60,
                 scale: float = 1.2, nbins: int = 10, tol: float = 0.02,
                 control_min: float = 0.05) -> MonteCarloReport:
    """Per-bin ratio ``E[f(y) | x] / Var(n | x)`` for the matching ``f``.

    ``kind="gaussian"``: ``f = sigma^2``; ``kind="poisson"``: scaled Poisson
    noise with ``f(y) = lam y``. Passes if every bin is within ``tol`` of 1.
    The control uses ``scale * f`` and is detected if every bin deviates by
    at least ``control_min``.
    """
    if n < MIN_SAMPLES:
        raise ValueError(f"refusing Monte Carlo check with N={n} < {MIN_SAMPLES}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(*X_RANGE, size=n)
    if kind == "gaussian":
        y = x + sigma * rng.standard_normal(n)
        var = np.full(n, sigma ** 2)
        vm = VarianceModel([sigma ** 2], eps_var=0.0)
    elif kind == "poisson":
        y = _poisson_sample(x, lam, rng)
        var = lam * x
        vm = VarianceModel([0.0, lam], eps_var=0.0)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    fy = eval_f(vm, y)
    edges = np.linspace(*X_RANGE, nbins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, nbins - 1)
    num = np.bincount(idx, weights=fy, minlength=nbins)
    den = np.bincount(idx, weights=var, minlength=nbins)
    ratios = num / den
    control = scale * ratios
    dev = float(np.max(np.abs(ratios - 1)))
    return MonteCarloReport(
        "prop2", {"kind": kind, "N": n, "scale": scale}, dev, 0.0, tol, dev <= tol,
        control_passed=not bool(np.all(np.abs(control - 1) >= control_min)),
        extra={"ratios": ratios, "control_ratios": control},
    )


def lperp_closed_form(M: float, alpha: float) -> float:
    return (1.0 - M) / (1.0 + alpha ** 2 * M)


def verify_appendix_a(M: float, alpha: float, n: int, seed: int, sigma: float = 0.1,
                      tol: float = 1e-3) -> MonteCarloReport:
    """Least-squares ``L`` minimising ``E|L (n + alpha z) - (1 - M) n|^2``
    from sample second moments, against ``(1 - M) / (1 + alpha^2 M)``."""
    if not (M > 0 and alpha > 0):
        raise ValueError("M and alpha must be positive")
    if n < MIN_SAMPLES:
        raise ValueError(f"refusing Monte Carlo check with N={n} < {MIN_SAMPLES}")
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(n)
    z = np.sqrt(M) * sigma * rng.standard_normal(n)
    nhat = noise + alpha * z
    ldag = (1.0 - M) * float(np.dot(noise, nhat)) / float(np.dot(nhat, nhat))
    target = lperp_closed_form(M, alpha)
    m_back = float(compute_m(ldag, alpha))
    return MonteCarloReport(
        "appendixA", {"M": M, "alpha": alpha, "N": n}, ldag, target, tol,
        abs(ldag - target) <= tol, extra={"m_roundtrip": m_back})
