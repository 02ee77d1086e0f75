"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a PASS/FAIL line through the ``criterion`` fixture and
then asserts it. Criterion 8 trains the desk-scale run (about 1.5 h on one
core) unless a finished run is cached; see ``desk_run.py``.
"""
import time

import numpy as np
import pytest

from dvp import cli, trainer
from dvp.autodiff import Tensor, conv2d
from dvp.config import desk_profile
from dvp.dvpcore import compute_m, lperp_from_m, update_beta
from dvp.eval import psnr, ssim, theorem1_grid, variance_metrics, verify_appendix_a, verify_prop2
from dvp.noise import VarianceModel
from dvp.objective import loss_lc
from dvp.perturb import compute_weights
from gradcheck import lall_gradcheck
from oracles import ssim_direct
from test_autodiff import PRIMITIVES, gradcheck
from test_dvpcore import _estimate_with
from test_objective import _pert

N = 10**6


def test_c1_theorem1_identity(criterion):
    t0 = time.perf_counter()
    reports = theorem1_grid(N, 0, c_form="proof")
    secs = time.perf_counter() - t0
    held = sum(r.passed for r in reports)
    rejected = sum(not r.control_passed for r in reports)
    ok = held == 27 and rejected == 27 and secs <= 60
    criterion(1, ok, f"identity with c = c1 + c2 holds at {held}/27 grid points, "
                     f"control rejected at {rejected}/27, {secs:.1f} s")
    assert ok


def test_c1_supplement_expanded_constant(criterion):
    # the cross term E[(R n - M n)(M n - z/alpha)] enters the square twice
    reports = theorem1_grid(N, 0, c_form="expanded")
    held = sum(r.passed for r in reports)
    rejected = sum(not r.control_passed for r in reports)
    ok = held == 27 and rejected == 27
    criterion(1, ok, f"(supplement) identity with c = 2 c1 + c2 holds at {held}/27, control rejected at {rejected}/27")
    assert ok


def test_c2_m_lperp_round_trip(criterion):
    rng = np.random.default_rng(2)
    m = rng.uniform(0.1, 2.0, 1000)
    alpha = rng.uniform(0.05, 1.0, 1000)
    t0 = time.perf_counter()
    back = np.array([float(compute_m(lperp_from_m(mi, ai), ai)) for mi, ai in zip(m, alpha)])
    secs = time.perf_counter() - t0
    worst = float(np.max(np.abs(back - m)))
    ok = worst <= 1e-12 and secs < 1
    criterion(2, ok, f"max |dM| = {worst:.2e} over 1000 draws, {secs * 1e3:.1f} ms")
    assert ok


def test_c3_appendix_a_optimality(criterion):
    t0 = time.perf_counter()
    reports = [verify_appendix_a(M, a, N, 0) for M in (0.5, 1.0, 1.5, 2.0) for a in (0.2, 1.0)]
    secs = time.perf_counter() - t0
    worst = max(abs(r.estimate - r.target) for r in reports)
    ok = all(r.passed for r in reports) and secs <= 10
    criterion(3, ok, f"max |L_dagger - (1-M)/(1+a^2 M)| = {worst:.2e} over 8 points, {secs:.1f} s")
    assert ok


def test_c4_proposition2(criterion):
    g = verify_prop2("gaussian", N, 0)
    p = verify_prop2("poisson", N, 0)
    g_exact = bool(np.all(np.abs(g.extra["ratios"] - 1) <= 1e-12))
    p_dev = float(np.max(np.abs(p.extra["ratios"] - 1)))
    ctrl = min(float(np.min(np.abs(r.extra["control_ratios"] - 1))) for r in (g, p))
    ok = g_exact and p.passed and ctrl >= 0.05
    criterion(4, ok, f"gaussian exact={g_exact}, poisson max bin deviation {p_dev:.4f}, "
                     f"scaled control min deviation {ctrl:.3f}")
    assert ok


def test_c5_fixed_point(criterion):
    rng = np.random.default_rng(5)
    bitwise = True
    for _ in range(100):
        vm = VarianceModel(rng.uniform(0.001, 0.05, size=2))
        est = _estimate_with(1.0)
        est.lperp = np.zeros(10)
        est.m = compute_m(est.lperp, 0.3)
        bitwise &= bool(np.array_equal(update_beta(vm, est, 5e-4).model.beta, vm.beta))
    beta1 = 0.0123
    star = update_beta(VarianceModel([beta1]), _estimate_with(0.5), 0.0).beta_star[0]
    ok = bitwise and abs(star - 2 * beta1) <= 1e-10
    criterion(5, ok, f"L_perp = 0 leaves beta bitwise unchanged: {bitwise}; "
                     f"M = 0.5 gives |beta1* - 2 beta1| = {abs(star - 2 * beta1):.1e}")
    assert ok


def test_c6_gradient_integrity(criterion):
    worst = {}
    for name in sorted(PRIMITIVES):
        build, make = PRIMITIVES[name]
        rng = np.random.default_rng(1000 + len(worst))
        worst[name] = max(gradcheck(build, make(rng)) for _ in range(100))
    rng = np.random.default_rng(6)
    worst["L_all"] = max(lall_gradcheck(rng, coords=10) for _ in range(100))
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err <= 1e-6
    criterion(6, ok, f"{len(PRIMITIVES)} primitives + L_all, 100 instances each, "
                     f"worst relative error {err:.1e} ({name})")
    assert ok


def test_c7_partial_linearity_penalty(criterion):
    rng = np.random.default_rng(7)
    k = Tensor(rng.standard_normal((1, 1, 3, 3)))
    b = Tensor(rng.standard_normal(1))
    c = rng.uniform(size=(1, 1, 20, 20))

    def linear(t):
        return conv2d(t, k, b)

    def constant(t):
        return Tensor(c) + t * 0.0

    lin, const = [], []
    for _ in range(50):
        _, _, p = _pert(rng)
        r1 = linear(Tensor(p.yhat1[None, None])).data[0, 0]
        r2 = linear(Tensor(p.yhat2[None, None])).data[0, 0]
        lin.append(float(loss_lc(linear, p, compute_weights(r1, r2, p.S, p.yhat1, p.yhat2)).data))
        const.append(float(loss_lc(constant, p, compute_weights(c[0, 0], c[0, 0], p.S, p.yhat1, p.yhat2)).data))
    ok = max(lin) <= 1e-10 and max(const) <= 1e-10
    criterion(7, ok, f"max L_c: linear {max(lin):.1e}, constant {max(const):.1e} over 50 draws")
    assert ok


@pytest.fixture(scope="module")
def desk():
    from desk_run import RUN_DIR, desk_config, ensure_run, heldout_pairs
    state, _ = ensure_run()
    timing = (RUN_DIR / "timing.txt").read_text().split()
    seconds = sum(float(v) for v in timing[1::2])
    return state, seconds, heldout_pairs(desk_config())


def test_c8_desk_regression(criterion, desk):
    state, seconds, pairs = desk
    target = (25 / 255) ** 2
    beta1 = float(state.vm.beta[0])
    rel = (beta1 - target) / target
    gains = []
    for x, y in pairs:
        gains.append(psnr(x, cli.denoise_image(state.model, y)) - psnr(x, y))
    gain = float(np.mean(gains))
    ok = abs(rel) <= 0.2 and gain >= 3 and seconds <= 7200 and state.step == desk_profile().total_steps
    criterion(8, ok, f"beta1 = {beta1:.5f} ({100 * rel:+.1f}% vs 0.00961), held-out PSNR gain "
                     f"{gain:.2f} dB (per image {', '.join(f'{g:.2f}' for g in gains)}), "
                     f"train time {seconds / 60:.0f} min")
    assert ok


def test_c9_reference_relative_errors(criterion):
    a = variance_metrics(3.841e-2, 3.845e-2).relative_error
    b = variance_metrics(0.970e-2, 0.961e-2).relative_error
    ok = round(100 * a, 3) == -0.093 and round(100 * b, 3) == 0.931
    criterion(9, ok, f"printed pairs give {100 * a:.3f}% and {100 * b:.3f}% "
                     f"(reference values -0.093% and 0.931%)")
    assert ok


def test_c9_supplement_reference_consistency(criterion):
    # exact ground truths (50/255)^2 and (25/255)^2; estimates known to +-half a printed digit
    spans = []
    for est, gt, printed in ((3.841e-2, (50 / 255) ** 2, -0.093), (0.970e-2, (25 / 255) ** 2, 0.931)):
        half = 0.0005e-2
        lo = variance_metrics(est - half, gt).relative_error * 100
        hi = variance_metrics(est + half, gt).relative_error * 100
        spans.append((lo, hi, printed))
    ok = all(lo <= p <= hi for lo, hi, p in spans)
    criterion(9, ok, "(supplement) printed errors lie in the ranges "
              + ", ".join(f"[{lo:.3f}, {hi:.3f}]%" for lo, hi, _ in spans)
              + " implied by exact ground truth and the printed estimates")
    assert ok


def test_c9_supplement_psnr_ssim_fixtures(criterion):
    x = np.zeros((10, 10))
    rng = np.random.default_rng(9)
    u = rng.uniform(size=(16, 16))
    v = np.clip(u + 0.1 * rng.standard_normal((16, 16)), 0, 1)
    checks = {
        "psnr mse 0.01": psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9),
        "psnr mse 0.001": psnr(x, x + np.sqrt(0.001)) == pytest.approx(30.0, abs=1e-9),
        "psnr identical": psnr(x, x) == float("inf"),
        "ssim identical": ssim(u, u) == pytest.approx(1.0, abs=1e-12),
        "ssim inverted": ssim(u, 1 - u) < 1.0,
        "ssim direct": abs(ssim(u, v) - ssim_direct(u, v)) <= 1e-10,
    }
    failed = [k for k, good in checks.items() if not good]
    ok = not failed
    criterion(9, ok, f"(supplement) PSNR/SSIM fixtures {len(checks) - len(failed)}/{len(checks)}"
                     + (f", failed: {', '.join(failed)}" if failed else ""))
    assert ok


def test_c10_determinism(criterion, tmp_path):
    # desk architecture, batch and crop; step counts cut so three runs fit in minutes
    cfg = desk_profile()
    cfg.pretrain_steps, cfg.full_steps, cfg.beta_freeze_steps, cfg.s2_delay = 10, 20, 5, 5
    cfg.seed = 3
    from desk_run import training_data
    for name in ("a", "b"):
        trainer.train(cfg, training_data(cfg), tmp_path / name, deterministic=True)
    same = (tmp_path / "a" / "metrics.tsv").read_bytes() == (tmp_path / "b" / "metrics.tsv").read_bytes()
    trainer.train(cfg, training_data(cfg), tmp_path / "c", deterministic=True, stop_at=17)
    resumed = trainer.load_state(tmp_path / "c" / "checkpoint.ckpt")
    trainer.train(cfg, training_data(cfg), tmp_path / "c", state=resumed, deterministic=True)
    resume_ok = (tmp_path / "c" / "metrics.tsv").read_bytes() == (tmp_path / "a" / "metrics.tsv").read_bytes()
    resume_ok &= (tmp_path / "c" / "checkpoint.ckpt").read_bytes() == (tmp_path / "a" / "checkpoint.ckpt").read_bytes()
    s2 = (tmp_path / "a" / "metrics.tsv").read_text().count("\ns2\t")
    ok = same and resume_ok and s2 == 3
    criterion(10, ok, f"repeat run byte-identical: {same}; resume at step 17 matches log and "
                      f"final checkpoint: {resume_ok}; {s2} variance updates in 30 steps")
    assert ok
