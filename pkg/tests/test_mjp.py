import math

import numpy as np
import pytest
from scipy import stats

from frankenfilter.core import RngStream
from frankenfilter.mjp import (
    CleUnavailableError,
    ReactionNetwork,
    _conditioned_hazard_batch,
    _conditioned_hazard_info,
    _poisson_logpmf,
    bridge_simulate,
    bridge_simulate_batch,
    cle_transition_density,
    conditioned_hazard,
    gillespie_simulate,
    num_tau_steps,
    tau_leap_batch,
    tau_leap_simulate,
)
from frankenfilter.models import build_model
from frankenfilter.oracle import tau_leap_exact_convolution


def death_net():
    return build_model("death").network


def dimer_net():
    return build_model("dimer").network


class TestReactionNetwork:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ReactionNetwork(2, 1, np.array([[1]]), lambda x, th: x, 1)

    def test_rates_clamped_at_zero(self):
        net = ReactionNetwork(1, 1, np.array([[-1]]), lambda x, th: -np.ones(1), 0)
        assert net.rates(np.array([3]), np.empty(0)) == 0.0


class TestGillespie:
    def test_death_model_transition_is_binomial(self):
        # After time t each of x0 individuals survives independently with
        # probability exp(-theta t); check the empirical law against it.
        net = death_net()
        theta = np.array([0.5])
        gen = RngStream(7).generator()
        draws = np.array([gillespie_simulate(net, [20], theta, 0.0, 1.0, gen)[0]
                          for _ in range(4000)])
        p = math.exp(-0.5)
        assert draws.mean() == pytest.approx(20 * p, abs=4 * math.sqrt(20 * p * (1 - p) / 4000))
        ks = np.arange(21)
        expected = 4000 * stats.binom.pmf(ks, 20, p)
        observed = np.bincount(draws, minlength=21)
        keep = expected > 5
        chi2 = ((observed[keep] - expected[keep]) ** 2 / expected[keep]).sum()
        assert chi2 < stats.chi2.ppf(0.999, keep.sum() - 1)

    def test_absorbing_state_freezes(self):
        net = death_net()
        out = gillespie_simulate(net, [0], np.array([1.0]), 0.0, 5.0, RngStream(1).generator())
        assert out[0] == 0

    def test_rejects_reversed_times(self):
        with pytest.raises(ValueError):
            gillespie_simulate(death_net(), [5], np.array([1.0]), 1.0, 0.0,
                               RngStream(1).generator())


class TestTauLeap:
    def test_num_tau_steps(self):
        assert num_tau_steps(1.0, 0.1) == 10
        assert num_tau_steps(0.5, 0.5) == 1
        with pytest.raises(ValueError):
            num_tau_steps(1.0, 0.3)
        with pytest.raises(ValueError):
            num_tau_steps(0.0, 0.1)

    def test_counts_recorded(self):
        net = death_net()
        x, counts = tau_leap_simulate(net, [50], np.array([0.1]), 0.0, 1.0, 0.5,
                                      RngStream(3).generator())
        assert counts.shape == (1, 2)
        assert x[0] == 50 - counts.sum()

    def test_batch_matches_single_in_law(self):
        net = dimer_net()
        theta = np.array([0.00332, 0.2])
        gen = RngStream(9).generator()
        batch = tau_leap_batch(net, np.tile([20, 1], (3000, 1)), theta, 1.0, 0.1, gen)
        singles = np.array([tau_leap_simulate(net, [20, 1], theta, 0.0, 1.0, 0.1, gen)[0]
                            for _ in range(3000)])
        for j in range(2):
            _, pval = stats.ks_2samp(batch[:, j], singles[:, j])
            assert pval > 1e-4

    def test_negative_states_are_left_alone(self):
        # A hazard that ignores the sign of x keeps firing; species counts may
        # go negative and the leap must not raise.
        net = ReactionNetwork(1, 1, np.array([[-1]]), lambda x, th: np.full(x.shape[:-1] + (1,), 5.0), 0)
        x = tau_leap_batch(net, np.array([[1]]), np.empty(0), 1.0, 0.5, RngStream(4).generator())
        assert x.shape == (1, 1)


class TestConditionedHazard:
    def test_moves_toward_observation(self):
        net = death_net()
        x = np.array([100.0])
        theta = np.array([0.01])
        F = np.array([[1]])
        h_free = net.rates(x, theta)
        h_down = conditioned_hazard(net, x, theta, np.array([90.0]), F, 1.0)
        h_up = conditioned_hazard(net, x, theta, np.array([100.0]), F, 1.0)
        assert h_down[0] > h_free[0]
        assert h_up[0] < h_free[0]

    def test_singular_system_falls_back(self):
        # Zero hazard makes the observed-space matrix singular.
        net = ReactionNetwork(1, 1, np.array([[-1]]), lambda x, th: np.zeros(x.shape[:-1] + (1,)), 0)
        h, fell_back = _conditioned_hazard_info(net, np.array([5.0]), np.empty(0),
                                                np.array([3.0]), np.array([[1.0]]), 1.0)
        assert fell_back
        assert h[0] == 0.0

    @pytest.mark.parametrize("model_name,y", [("death", [90.0]), ("dimer", [18.0, 2.0])])
    def test_batch_matches_per_state(self, model_name, y):
        model = build_model(model_name)
        net = model.network
        theta = np.array([0.01]) if model_name == "death" else np.array([0.00332, 0.2])
        gen = RngStream(11).generator()
        d = net.num_species
        states = gen.integers(1, 30, size=(40, d))
        F = np.eye(d)
        y = np.asarray(y, dtype=np.float64)
        batch = _conditioned_hazard_batch(net, states, theta, y, F, 0.7)
        for i in range(states.shape[0]):
            single = conditioned_hazard(net, states[i].astype(np.float64), theta, y, F, 0.7)
            np.testing.assert_allclose(batch[i], single, rtol=1e-10, atol=1e-12)


class TestPoissonLogPmf:
    def test_zero_rate_conventions(self):
        assert _poisson_logpmf(0, 0.0) == 0.0
        assert _poisson_logpmf(3, 0.0) == -math.inf

    def test_matches_scipy_on_positive_rates(self):
        ks = np.arange(6)
        lam = 2.3
        np.testing.assert_allclose(_poisson_logpmf(ks, lam), stats.poisson.logpmf(ks, lam),
                                   rtol=1e-12)


class TestBridge:
    def test_single_and_batch_agree_in_law(self):
        net = death_net()
        theta = np.array([0.01])
        F = np.array([[1]])
        gen = RngStream(21).generator()
        n = 3000
        _, log_w, match = bridge_simulate_batch(net, np.tile([100], (n, 1)), theta,
                                                np.array([99.0]), F, 1.0, 0.5, gen)
        singles = [bridge_simulate(net, [100], theta, np.array([99.0]), F, 1.0, 0.5, gen)
                   for _ in range(n)]
        w_batch = np.exp(log_w[match])
        w_single = np.array([math.exp(r.log_weight) for r in singles
                             if r.log_weight > -math.inf])
        se = math.sqrt(w_batch.var() / len(w_batch) + w_single.var() / len(w_single))
        assert abs(w_batch.sum() / n - w_single.sum() / n) < 4 * se

    def test_mean_weight_estimates_transition_probability(self):
        # E[exp(log_w)] over bridges equals the tau-leap transition probability.
        net = death_net()
        theta = np.array([0.01])
        F = np.array([[1]])
        gen = RngStream(22).generator()
        n = 40_000
        _, log_w, _ = bridge_simulate_batch(net, np.tile([100], (n, 1)), theta,
                                            np.array([99.0]), F, 1.0, 0.5, gen)
        w = np.where(np.isfinite(log_w), np.exp(log_w), 0.0)
        oracle = tau_leap_exact_convolution(net, [100], theta, 1.0, 0.5, [99.0], F)
        se = w.std(ddof=1) / math.sqrt(n)
        assert abs(w.mean() - oracle.probability) < 4 * se + oracle.truncation_deficit

    def test_mismatched_endpoint_gets_zero_weight(self):
        net = death_net()
        res = bridge_simulate(net, [100], np.array([0.01]), np.array([150.0]),
                              np.array([[1]]), 1.0, 0.5, RngStream(23).generator())
        assert res.log_weight == -math.inf


class TestCleDensity:
    def test_matches_gaussian_formula(self):
        net = death_net()
        x = np.array([100.0])
        theta = np.array([0.01])
        h = theta[0] * x[0]
        mean = x[0] - h * 1.0
        var = h * 1.0
        expected = stats.norm.pdf(99.0, loc=mean, scale=math.sqrt(var))
        got = cle_transition_density(net, x, theta, np.array([99.0]), np.array([[1]]), 1.0)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_degenerate_covariance_raises(self):
        net = death_net()
        with pytest.raises(CleUnavailableError):
            cle_transition_density(net, np.array([0.0]), np.array([0.01]),
                                   np.array([0.0]), np.array([[1]]), 1.0)
