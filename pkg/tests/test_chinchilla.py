import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from t2plan import optimizer, synth
from t2plan.chinchilla import (
    ChinchillaConfig,
    ChinchillaFit,
    FitError,
    LossObservation,
    _ProfileSSE,
    _derived_seed,
    closed_form_optimum,
    fit_chinchilla,
    inverse_variance_weights,
    observations_from_checkpoints,
    predict_loss,
    weighted_sse,
)
from t2plan.dataset import group_isoflop

FAST = ChinchillaConfig(n_e_grid=10, n_restarts=8)
TRUTH = ChinchillaFit(E=1.7, A=400.0, alpha=0.34, B=410.0, beta=0.28)


def observations(law, grid):
    out = []
    for i, (n, d) in enumerate(grid):
        n, d = round(n), round(d)
        out.append(LossObservation(f"m{i}", float(n), float(d), predict_loss(law, n, d)))
    return out


@pytest.fixture(scope="module")
def noiseless_obs(grid):
    return observations(TRUTH, grid)


@pytest.fixture(scope="module")
def fast_fit(noiseless_obs):
    return fit_chinchilla(noiseless_obs, config=FAST)


class TestPredict:
    def test_hand_value(self):
        assert predict_loss(ChinchillaFit(1, 2, 1, 3, 1), 2, 3) == 3.0

    def test_floor(self):
        fit = ChinchillaFit(E=1.3, A=0.0, alpha=0.3, B=0.0, beta=0.3)
        assert_allclose(predict_loss(fit, np.geomspace(1, 1e12, 7), 1e5), 1.3, rtol=0, atol=0)

    def test_monotone(self, grid):
        n, d = np.array(grid).T
        assert (predict_loss(TRUTH, n, d) > predict_loss(TRUTH, 2 * n, d)).all()
        assert (predict_loss(TRUTH, n, d) > predict_loss(TRUTH, n, 2 * d)).all()


class TestClosedForm:
    def test_symmetric_exponents(self):
        fit = ChinchillaFit(E=1.0, A=300.0, alpha=0.31, B=500.0, beta=0.31)
        assert fit.a == 0.5 and fit.b == 0.5

    def test_grid_oracle(self):
        c = 1e20
        n_star, d_star = closed_form_optimum(TRUTH, c)
        ns = np.geomspace(1e4, c / 6, 1_000_000)
        n_grid = ns[np.argmin(predict_loss(TRUTH, ns, c / (6 * ns)))]
        assert abs(n_grid / n_star - 1) <= 1e-4
        assert 6 * n_star * d_star == pytest.approx(c, rel=1e-15)

    def test_doubling(self):
        n1, _ = closed_form_optimum(TRUTH, 1e19)
        n2, _ = closed_form_optimum(TRUTH, 2e19)
        assert n2 / n1 == pytest.approx(2 ** (TRUTH.beta / (TRUTH.alpha + TRUTH.beta)), rel=1e-13)

    @settings(max_examples=100)
    @given(
        st.floats(1.0, 1e4), st.floats(0.1, 0.8), st.floats(1.0, 1e4), st.floats(0.1, 0.8),
        st.floats(1e16, 1e24),
    )
    def test_agrees_with_scalar_search(self, A, alpha, B, beta, c):
        fit = ChinchillaFit(E=1.0, A=A, alpha=alpha, B=B, beta=beta)
        n_star, _ = closed_form_optimum(fit, c)
        lo, hi = math.log(n_star) - 10, math.log(n_star) + 10

        def f(u):
            return predict_loss(fit, math.exp(u), c / (6 * math.exp(u)))

        u, _ = optimizer.minimize_scalar(f, lo, hi)
        assert abs(math.exp(u) / n_star - 1) <= 5e-4

    def test_rejects_bad_budget(self):
        with pytest.raises(ValueError):
            closed_form_optimum(TRUTH, 0.0)


class TestFit:
    def test_noiseless_recovery(self, fast_fit):
        for name in ("E", "A", "alpha", "B", "beta"):
            assert getattr(fast_fit, name) == pytest.approx(getattr(TRUTH, name), rel=1e-2), name

    def test_sse_small_relative_to_variance(self, fast_fit, noiseless_obs):
        y = np.array([o.loss for o in noiseless_obs])
        assert weighted_sse(fast_fit, noiseless_obs) <= 1e-6 * np.var(y) * len(y)

    def test_winner_beats_every_inner_solution(self, noiseless_obs):
        cfg = ChinchillaConfig(n_e_grid=4, n_restarts=4, polish=False)
        fit = fit_chinchilla(noiseless_obs, config=cfg)
        w, _ = inverse_variance_weights(noiseless_obs)
        log_n = np.log([o.n_params for o in noiseless_obs])
        log_d = np.log([o.n_tokens for o in noiseless_obs])
        y = np.array([o.loss for o in noiseless_obs])
        y_min = y.min()
        bounds = optimizer.Bounds.from_pairs([(-20, 40), (-20, 40), (0.01, 2.5), (0.01, 2.5)])
        sampler = optimizer.box_sampler([0, 0, 0.05, 0.05], [math.log(1e6), math.log(1e6), 1, 1])
        for i, e in enumerate(np.linspace(0.01 * y_min, 0.95 * y_min, 4)):
            res = optimizer.multi_start(
                _ProfileSSE(e, log_n, log_d, y, w), bounds, sampler, 4, seed=_derived_seed(0, i)
            )
            assert fit.sse <= res.f_best

    def test_b_free_data(self, grid):
        law = ChinchillaFit(E=1.7, A=400.0, alpha=0.34, B=0.0, beta=0.28)
        obs = observations(law, grid)
        fit = fit_chinchilla(obs, config=FAST)
        n = np.array([o.n_params for o in obs])
        d = np.array([o.n_tokens for o in obs])
        reducible = fit.A * n ** -fit.alpha + fit.B * d ** -fit.beta
        assert (fit.B * d ** -fit.beta < 0.01 * reducible).all()

    def test_single_group(self):
        obs = [LossObservation(f"m{i}", 1e6 * (i + 1), 1e9 / (i + 1), 3.0 + 0.1 * i) for i in range(6)]
        with pytest.raises(FitError):
            fit_chinchilla(obs, config=FAST)

    def test_too_few_points(self, noiseless_obs):
        with pytest.raises(FitError):
            fit_chinchilla(noiseless_obs[:4], config=FAST)

    def test_degenerate(self, noiseless_obs):
        flat = [LossObservation(o.model_id, o.n_params, o.n_tokens, 2.0) for o in noiseless_obs]
        with pytest.raises(FitError):
            fit_chinchilla(flat, config=FAST)

    def test_json_round_trip(self, fast_fit):
        again = ChinchillaFit.from_json(fast_fit.to_json())
        assert again == fast_fit
        keys = {"E", "A", "alpha", "B", "beta", "sse", "task_id", "config_digest"}
        assert keys <= set(fast_fit.to_json())

    def test_deterministic(self, noiseless_obs, fast_fit):
        assert fit_chinchilla(noiseless_obs, config=FAST) == fast_fit

    def test_from_checkpoints_with_groups(self, grid):
        truth = synth.GroundTruth(1.7, 400.0, 0.34, 410.0, 0.28, noise_sigma=0.01, seed=1)
        cset = synth.generate_nll_data(truth, grid, n_questions=20)
        obs = observations_from_checkpoints(cset, "synthetic")
        fit = fit_chinchilla(obs, group_isoflop(cset), FAST, task_id="synthetic")
        assert fit.E == pytest.approx(1.7, rel=0.05)
        assert fit.task_id == "synthetic"


class TestWeights:
    def test_singleton_gets_median(self):
        obs = [
            LossObservation("a", 1e3, 1e6, 3.0),
            LossObservation("b", 2e3, 5e5, 3.2),
            LossObservation("c", 1e3, 1e9, 2.0),
            LossObservation("d", 2e3, 5e8, 2.4),
            LossObservation("e", 1e3, 1e12, 1.0),
        ]
        w, n_groups = inverse_variance_weights(obs)
        assert n_groups == 3
        v1, v2 = 0.01, 0.04
        assert_allclose(w[:4], [1 / v1, 1 / v1, 1 / v2, 1 / v2], rtol=1e-12)
        assert w[4] == pytest.approx(1 / np.median([v1, v2]), rel=1e-12)

    def test_variance_floor(self):
        obs = [LossObservation("a", 1e3, 1e6, 3.0), LossObservation("b", 2e3, 5e5, 3.0)]
        w, _ = inverse_variance_weights(obs, variance_floor=1e-6)
        assert_allclose(w, 1e6)
