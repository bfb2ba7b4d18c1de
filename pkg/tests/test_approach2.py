import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from conftest import A2_TRUTH
from t2plan import synth
from t2plan.approach2 import (
    Approach2Config,
    Approach2Fit,
    approach2_sse,
    beta_params,
    beta_pass_at_k,
    fit_beta_regression,
    naive_pass_at_k,
    predict_inference_corrected_acc,
    predict_pass_at_k,
)
from t2plan.chinchilla import ChinchillaFit, FitError, predict_loss
from t2plan.passk import PassTarget

FAST = Approach2Config(n_restarts=12)
TRUE_FIT = A2_TRUTH.approach2()


def _fit(theta, base=None):
    base = base or A2_TRUTH.chinchilla()
    return Approach2Fit(base, *[float(t) for t in theta])


ULP_SLACK = 8 * np.finfo(float).eps


def _quad_pass(a, b, k, epsrel=1e-11):
    """Adaptive quadrature of E[1 - (1 - p)^k], windowed to +-60 sd for peaked densities."""
    mean, sd = a / (a + b), math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    lo, hi = max(0.0, mean - 60 * sd), min(1.0, mean + 60 * sd)
    f = lambda p: -math.expm1(k * math.log1p(-p)) * stats.beta.pdf(p, a, b)
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=epsrel, limit=500, points=[mean])
    return val


theta_st = st.tuples(
    st.floats(1.5, 4.0), st.floats(0.1, 20.0), st.floats(0.05, 1.0), st.floats(-3.0, 8.0), st.floats(-2.0, 2.0)
)
nd_st = st.tuples(st.floats(6.0, 11.0), st.floats(8.0, 13.0))


def test_theta4_zero_gives_constant_concentration():
    fit = _fit((3.0, 2.0, 0.9, 1.7, 0.0))
    n = np.geomspace(1e6, 1e11, 7)
    _, _, _, nu = beta_params(fit, n, 20 * n)
    assert_allclose(nu, math.exp(1.7), rtol=1e-15)


def test_sigmoid_midpoint():
    n, d = 2e8, 4e9
    fit = _fit((predict_loss(A2_TRUTH.chinchilla(), n, d), 3.0, 0.8, 1.0, 0.0))
    assert_allclose(beta_params(fit, n, d)[2], 0.4, rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(theta=theta_st, nd=nd_st)
def test_mean_identity(theta, nd):
    fit = _fit(theta)
    a, b, mu, nu = beta_params(fit, 10 ** nd[0], 10 ** nd[1])
    assert abs(a / (a + b) - mu) <= 1e-12
    assert a > 0 and b > 0 and nu > 0
    assert_allclose(a + b, nu, rtol=1e-15)


def test_exact_small_values():
    exact = 1 - Fraction(1, 30) / Fraction(1, 12)
    assert exact == Fraction(3, 5)
    assert abs(beta_pass_at_k(2.0, 3.0, 2) - float(exact)) <= 1e-12
    assert abs(beta_pass_at_k(2.0, 3.0, 1) - 0.4) <= 1e-12


def test_a2_b3_k8_against_two_oracles():
    closed = beta_pass_at_k(2.0, 3.0, 8)
    assert abs(closed - _quad_pass(2.0, 3.0, 8)) <= 1e-8
    p = np.random.default_rng(7).beta(2.0, 3.0, size=1_000_000)
    draws = 1.0 - (1.0 - p) ** 8
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - closed) <= 3 * se


@settings(max_examples=100, deadline=None)
@given(theta=theta_st, nd=nd_st)
def test_k1_equals_mu_and_ceiling(theta, nd):
    fit = _fit(theta)
    n, d = 10 ** nd[0], 10 ** nd[1]
    mu = beta_params(fit, n, d)[2]
    p1 = predict_pass_at_k(fit, n, d, 1)
    assert abs(p1 - mu) <= 1e-12
    assert p1 <= fit.theta2 + 1e-15


@settings(max_examples=100, deadline=None)
@given(theta=theta_st, nd=nd_st, k=st.floats(1.0, 1e4))
def test_jensen_naive_upper_bound(theta, nd, k):
    fit = _fit(theta)
    n, d = 10 ** nd[0], 10 ** nd[1]
    beta = predict_pass_at_k(fit, n, d, k)
    assert naive_pass_at_k(fit, n, d, k) >= beta * (1 - ULP_SLACK)
    assert abs(naive_pass_at_k(fit, n, d, 1) - predict_pass_at_k(fit, n, d, 1)) <= 1e-12


def test_monotone_and_limit_in_k():
    ks = np.geomspace(1, 1e8, 200)
    vals = predict_pass_at_k(TRUE_FIT, 1e8, 2e9, ks)
    assert np.all(np.diff(vals) > 0)
    # 1 - pass@k decays like k^-a, so the limit is 1 at a known rate
    a = beta_params(TRUE_FIT, 1e8, 2e9)[0]
    slope = math.log((1 - predict_pass_at_k(TRUE_FIT, 1e8, 2e9, 1e12)) / (1 - predict_pass_at_k(TRUE_FIT, 1e8, 2e9, 1e10)))
    assert_allclose(slope / math.log(1e-2), a, rtol=1e-3)
    assert beta_pass_at_k(2.0, 3.0, 1e6) > 1 - 1e-10


def test_concentrated_beta_matches_naive():
    fit = _fit((3.2, 4.0, 0.9, 20.0, 0.0))
    for n in (1e7, 1e8, 1e9):
        gap = naive_pass_at_k(fit, n, 20 * n, 8) - predict_pass_at_k(fit, n, 20 * n, 8)
        assert 0 <= gap < 1e-4
        a, b, _, _ = beta_params(fit, n, 20 * n)
        assert abs(predict_pass_at_k(fit, n, 20 * n, 8) - _quad_pass(a, b, 8, epsrel=1e-8)) < 1e-6


def test_inference_corrected_anchors():
    n, d = 3e8, 6e9
    assert abs(predict_inference_corrected_acc(TRUE_FIT, n, d, 2 * n) - beta_params(TRUE_FIT, n, d)[2]) <= 1e-12
    assert predict_inference_corrected_acc(TRUE_FIT, 70e9, 1.4e12, 140e9) == predict_pass_at_k(
        TRUE_FIT, 70e9, 1.4e12, 1.0
    )
    c_inf = 1e12
    assert predict_inference_corrected_acc(TRUE_FIT, n / 2, d, c_inf) == predict_pass_at_k(
        TRUE_FIT, n / 2, d, c_inf / n
    )
    with pytest.raises(ValueError):
        predict_inference_corrected_acc(TRUE_FIT, n, d, n)


def test_recovery_and_sse(a2_targets):
    fit = fit_beta_regression(A2_TRUTH.chinchilla(), a2_targets, FAST)
    assert_allclose(fit.theta, A2_TRUTH.theta, rtol=0.03)
    y = np.array([t.mean_pass for t in a2_targets])
    assert fit.sse <= 1e-8 * float(np.sum((y - y.mean()) ** 2))
    assert_allclose(fit.sse, approach2_sse(fit, a2_targets), rtol=1e-10, atol=1e-30)


def test_naive_generated_targets_give_large_concentration(grid):
    truth = synth.GroundTruth(**{k: getattr(A2_TRUTH, k) for k in ("E", "A", "alpha", "B", "beta")}, theta=(3.2, 4.0, 0.9, 20.0, 0.0))
    fit = fit_beta_regression(truth.chinchilla(), synth.generate_pass_targets(truth, grid), FAST)
    n = np.array([g[0] for g in grid])
    d = np.array([g[1] for g in grid])
    assert np.all(beta_params(fit, n, d)[3] > 1e3)


def test_single_k_rejected(grid):
    ts = synth.generate_pass_targets(A2_TRUTH, grid, k_grid=(1,))
    with pytest.raises(FitError, match="k values"):
        fit_beta_regression(A2_TRUTH.chinchilla(), ts, FAST)


def test_task_mismatch_rejected(a2_targets):
    base = ChinchillaFit(E=1.69, A=406.4, alpha=0.34, B=410.7, beta=0.28, task_id="other")
    with pytest.raises(FitError, match="task"):
        fit_beta_regression(base, a2_targets, FAST)


def test_degenerate_targets_rejected(grid):
    ts = [
        PassTarget(f"m{i}", int(n), int(d), k, "synthetic", 0.5, math.log(2), 10)
        for i, (n, d) in enumerate(grid[:8])
        for k in (1, 2)
    ]
    with pytest.raises(FitError):
        fit_beta_regression(A2_TRUTH.chinchilla(), ts, FAST)


def test_ceiling_of_one_allowed_and_zero_rejected():
    _fit((3.0, 2.0, 1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        _fit((3.0, 2.0, 0.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        _fit((3.0, 2.0, 1.2, 1.0, 0.0))


def test_json_round_trip():
    fit = TRUE_FIT
    obj = json.loads(json.dumps(fit.to_json()))
    for key in ("base", "theta0", "theta1", "theta2", "theta3", "theta4", "sse", "task_id", "config_digest"):
        assert key in obj
    assert Approach2Fit.from_json(obj) == fit
