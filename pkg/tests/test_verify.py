import numpy as np
import pytest

from dvp.dvpcore import compute_m
from dvp.eval.verify import (lperp_closed_form, theorem1_grid, verify_appendix_a, verify_prop2,
                             verify_theorem1)

N = 10**6


def test_theorem1_refuses_low_power():
    with pytest.raises(ValueError, match="refusing"):
        verify_theorem1(1.0, 0.5, 0.0, 9999, np.random.default_rng(0))


@pytest.mark.parametrize("alpha", [0.2, 1.0])
def test_theorem1_m_one_passes_and_control_fails(alpha):
    r = verify_theorem1(1.0, alpha, 0.0, N, np.random.default_rng(1))
    assert r.passed and not r.control_passed
    assert r.extra["c1"] == pytest.approx(0.0, abs=5 * r.extra["lhs_se"])


def test_theorem1_wiener_coefficient():
    # M = 1 and the scalar coefficient minimising the noise error, L = 1 / (1 + alpha^2)
    alpha = 0.5
    r = verify_theorem1(1.0, alpha, 1 / (1 + alpha ** 2), N, np.random.default_rng(2))
    assert r.ok


def test_theorem1_expanded_constant_holds_on_grid():
    reports = theorem1_grid(200_000, 3, c_form="expanded")
    assert len(reports) == 27
    assert all(r.ok for r in reports)


def test_theorem1_cross_term_constant():
    r = verify_theorem1(0.5, 1.0, 0.3, N, np.random.default_rng(4), sigma=0.1)
    # c1 = M (1 - M) sigma^2
    assert r.extra["c1"] == pytest.approx(0.25 * 0.01, rel=0.02)


def test_prop2_gaussian_is_exact():
    r = verify_prop2("gaussian", N, 0)
    assert np.all(np.abs(r.extra["ratios"] - 1) <= 1e-12)
    assert r.ok


def test_prop2_poisson_and_control():
    r = verify_prop2("poisson", N, 1)
    assert r.ok
    assert np.allclose(r.extra["control_ratios"], 1.2, atol=0.03)


def test_appendix_a_examples():
    assert verify_appendix_a(1.0, 0.5, 10**5, 0).estimate == 0.0
    assert lperp_closed_form(0.5, 1.0) == pytest.approx(1 / 3)
    r = verify_appendix_a(0.5, 1.0, N, 1)
    assert r.passed and abs(r.estimate - 1 / 3) <= 1e-3
    assert verify_appendix_a(2.0, 0.5, N, 2).estimate < 0
    with pytest.raises(ValueError):
        verify_appendix_a(0.0, 1.0, N, 0)


@pytest.mark.parametrize("M", [0.5, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("alpha", [0.2, 1.0])
def test_appendix_a_feeds_back_to_m(M, alpha):
    # L_dagger from N = 1e6 sample moments, pushed through the M formula
    r = verify_appendix_a(M, alpha, N, 0)
    assert abs(float(compute_m(r.estimate, alpha)) - M) <= 1e-3
