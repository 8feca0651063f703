import math

import numpy as np
import pytest

from frankenfilter.core import (
    Dataset,
    IntervalRecord,
    LikelihoodEstimate,
    RngStream,
)
from frankenfilter.pmmh import (
    PilotResult,
    ProposalConfig,
    ess_multivariate,
    ess_univariate,
    pilot_workflow,
    pmmh_run,
    var_log_phat,
)

DATA = Dataset(times=(1.0,), observations=[[0]], obs_matrix=[[1]])


def const_estimator(log_value=0.0, cost=0):
    def estimator(theta, data, rng):
        return LikelihoodEstimate(log_value, (IntervalRecord(log_value, cost, 1),), cost)
    return estimator


def lognormal_estimator(sigma=1.0):
    def estimator(theta, data, rng):
        z = rng.generator().standard_normal()
        return LikelihoodEstimate(sigma * z, (), 1)
    return estimator


def flat_in_log_space(theta):
    # Improper prior proportional to 1/prod(theta): cancels the Jacobian term.
    return -float(np.log(theta).sum())


class TestProposalConfig:
    def test_rejects_non_positive_definite(self):
        with pytest.raises(ValueError):
            ProposalConfig(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            ProposalConfig(np.array([[1.0, 0.5], [0.4, 1.0]]))

    def test_default_scale_is_dimension_dependent(self):
        assert ProposalConfig(np.eye(2)).scale() == pytest.approx(2.38**2 / 2)
        assert ProposalConfig(np.eye(2), gamma=0.5).scale() == 0.5


class TestPmmhRun:
    def test_constant_estimator_flat_prior_accepts_everything(self):
        chain = pmmh_run(const_estimator(), DATA, flat_in_log_space,
                         np.array([1.0]), ProposalConfig(np.eye(1)), 200, RngStream(1))
        assert chain.accepted.all()

    def test_rejected_steps_copy_previous_state(self):
        def prior(theta):
            return 0.0 if theta[0] < 1.5 else -math.inf

        chain = pmmh_run(const_estimator(), DATA, prior, np.array([1.0]),
                         ProposalConfig(np.eye(1)), 500, RngStream(2))
        rejected = np.nonzero(~chain.accepted[1:])[0] + 1
        assert rejected.size > 0
        for i in rejected:
            assert chain.draws[i] == chain.draws[i - 1]
            assert chain.log_liks[i] == chain.log_liks[i - 1]

    def test_acceptance_invariant_to_loglik_shift(self):
        a = pmmh_run(lognormal_estimator(), DATA, flat_in_log_space, np.array([1.0]),
                     ProposalConfig(np.eye(1)), 300, RngStream(3))

        def shifted(theta, data, rng):
            base = lognormal_estimator()(theta, data, rng)
            return LikelihoodEstimate(base.log_p_hat + 123.0, (), 1)

        b = pmmh_run(shifted, DATA, flat_in_log_space, np.array([1.0]),
                     ProposalConfig(np.eye(1)), 300, RngStream(3))
        np.testing.assert_array_equal(a.accepted, b.accepted)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_zero_estimate_proposals_always_rejected(self):
        calls = {"n": 0}

        def sometimes_dead(theta, data, rng):
            calls["n"] += 1
            dead = calls["n"] % 2 == 0
            return LikelihoodEstimate(-math.inf if dead else 0.0, (), 1)

        chain = pmmh_run(sometimes_dead, DATA, flat_in_log_space, np.array([1.0]),
                         ProposalConfig(np.eye(1)), 100, RngStream(4))
        assert np.isfinite(chain.log_liks).all()

    def test_infinite_prior_at_start_raises(self):
        with pytest.raises(ValueError):
            pmmh_run(const_estimator(), DATA, lambda th: -math.inf, np.array([1.0]),
                     ProposalConfig(np.eye(1)), 10, RngStream(5))

    def test_cost_tracks_proposal_evaluations(self):
        chain = pmmh_run(const_estimator(cost=7), DATA, flat_in_log_space,
                         np.array([1.0]), ProposalConfig(np.eye(1)), 50, RngStream(6))
        assert set(chain.cost.tolist()) <= {0, 7}
        assert (chain.cost == 7).any()


class TestVarLogPhat:
    def test_deterministic_estimator(self):
        v, zf = var_log_phat(const_estimator(), np.array([1.0]), DATA, 100, RngStream(7))
        assert v == 0.0
        assert zf == 0.0

    def test_lognormal_surrogate_variance(self):
        v, zf = var_log_phat(lognormal_estimator(1.0), np.array([1.0]), DATA,
                             10_000, RngStream(8))
        se = math.sqrt(2.0 / 9_999)
        assert abs(v - 1.0) < 3 * se
        assert zf == 0.0

    def test_all_dead_raises(self):
        dead = const_estimator(log_value=-math.inf)
        with pytest.raises(RuntimeError, match="estimator dead"):
            var_log_phat(dead, np.array([1.0]), DATA, 10, RngStream(9))

    def test_zero_fraction_reported_and_excluded(self):
        def half_dead(theta, data, rng):
            z = rng.generator().uniform()
            return LikelihoodEstimate(-math.inf if z < 0.5 else 0.0, (), 1)

        v, zf = var_log_phat(half_dead, np.array([1.0]), DATA, 2000, RngStream(10))
        assert 0.4 < zf < 0.6
        assert v == 0.0


class TestEss:
    def test_iid_series(self):
        x = RngStream(11).generator().standard_normal(100_000)
        assert 0.9 <= ess_univariate(x) / 100_000 <= 1.1

    def test_ar1_series(self):
        gen = RngStream(12).generator()
        n = 100_000
        rho = 0.5
        x = np.empty(n)
        x[0] = gen.standard_normal()
        eps = gen.standard_normal(n) * math.sqrt(1 - rho**2)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + eps[i]
        assert abs(ess_univariate(x) - n / 3) < 0.15 * n / 3

    def test_constant_series_returns_n(self):
        assert ess_univariate(np.full(50, 3.0)) == 50.0

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            ess_univariate(np.arange(5))

    def test_multivariate_d1_agrees_with_univariate(self):
        x = RngStream(13).generator().standard_normal(20_000)
        assert ess_multivariate(x[:, None]) == pytest.approx(ess_univariate(x), rel=0.01)

    def test_multivariate_iid(self):
        x = RngStream(14).generator().standard_normal((100_000, 2))
        assert 0.85 <= ess_multivariate(x) / 100_000 <= 1.15

    def test_multivariate_two_ar1(self):
        gen = RngStream(15).generator()
        n = 100_000
        rho = 0.5
        x = np.empty((n, 2))
        x[0] = gen.standard_normal(2)
        eps = gen.standard_normal((n, 2)) * math.sqrt(1 - rho**2)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + eps[i]
        assert abs(ess_multivariate(x) - n / 3) < 0.2 * n / 3

    def test_degenerate_chain_raises(self):
        x = np.ones((200, 2))
        x[:, 0] = np.arange(200.0)
        with pytest.raises(ValueError, match="degenerate chain"):
            ess_multivariate(x)


class TestPilotWorkflow:
    def test_deterministic_family_returns_smallest_knob(self):
        result = pilot_workflow(lambda knob: const_estimator(), DATA,
                                flat_in_log_space, [np.array([1.0])], RngStream(16),
                                knob_lo=4, knob_hi=64, replicates=10,
                                pilot_iterations=50)
        assert result.knob == 4
        assert isinstance(result, PilotResult)

    def test_bisection_finds_variance_one_knob(self):
        # Surrogate whose log-estimate variance is 16/knob: variance hits 1
        # (within the 0.25 tolerance) around knob = 13.
        def family(knob):
            return lognormal_estimator(sigma=4.0 / math.sqrt(knob))

        result = pilot_workflow(family, DATA, flat_in_log_space,
                                [np.array([1.0])], RngStream(17),
                                knob_lo=2, knob_hi=256, replicates=400,
                                pilot_iterations=50)
        assert 10 <= result.knob <= 18

    def test_bracket_failure_names_theta(self):
        def family(knob):
            return lognormal_estimator(sigma=10.0)

        with pytest.raises(RuntimeError, match=r"theta=\[2\.0\]"):
            pilot_workflow(family, DATA, flat_in_log_space, [np.array([2.0])],
                           RngStream(18), knob_lo=2, knob_hi=8, replicates=50,
                           pilot_iterations=10)
