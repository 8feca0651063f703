"""Pseudo-marginal Metropolis-Hastings over any likelihood-estimator handle,
with log-estimate variance probes, batch-means ESS diagnostics, and the
pilot-run workflow that sizes an estimator before a main chain.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LikelihoodEstimator, RngStream, derive_substream

__all__ = [
    "Chain",
    "ProposalConfig",
    "PilotResult",
    "pmmh_run",
    "var_log_phat",
    "ess_univariate",
    "ess_multivariate",
    "pilot_workflow",
]


@dataclass(frozen=True)
class ProposalConfig:
    """Random-walk innovation covariance (applied on the log scale) and the
    global scale multiplying it."""

    innovation_cov: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.innovation_cov, dtype=np.float64))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("innovation_cov must be square")
        if not np.allclose(cov, cov.T):
            raise ValueError("innovation_cov must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("innovation_cov must be positive definite") from None
        object.__setattr__(self, "innovation_cov", cov)

    @property
    def d_theta(self) -> int:
        return self.innovation_cov.shape[0]

    def scale(self) -> float:
        # Classical optimal-scaling default when no scale is given.
        return self.gamma if self.gamma is not None else 2.38 ** 2 / self.d_theta

    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.scale() * self.innovation_cov)


@dataclass
class Chain:
    """PMMH trace: draws, retained log-estimates, acceptance flags, and the
    per-iteration simulation cost."""

    draws: np.ndarray        # (iterations, d_theta)
    log_liks: np.ndarray     # (iterations,) retained log-estimates
    accepted: np.ndarray     # (iterations,) bool
    cost: np.ndarray         # (iterations,) total simulations
    seconds: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())


def pmmh_run(estimator: LikelihoodEstimator, data: Dataset, prior, theta0,
             proposal: ProposalConfig, iterations: int, rng: RngStream,
             init_retries: int = 10) -> Chain:
    """Run a pseudo-marginal chain with a Gaussian random walk on log(theta).

    The acceptance ratio includes the Jacobian of the log transform
    (sum log theta' - sum log theta).  A proposal whose estimate is -inf is
    always rejected, and the retained estimate is reused verbatim, never
    refreshed.  The initial estimate alone may be redrawn up to
    ``init_retries`` times (the chain cannot start from a zero estimate,
    and redrawing it leaves the invariant distribution untouched).
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if np.any(theta0 <= 0.0):
        raise ValueError("theta0 must be strictly positive (log-scale walk)")
    lp0 = prior(theta0)
    if lp0 == -math.inf:
        raise ValueError("prior(theta0) must be finite")
    chol = proposal.chol()
    d = theta0.shape[0]
    gen = rng.generator()
    start = time.perf_counter()

    cur_theta = theta0
    init_stream = derive_substream(rng, 0)
    cur_ll = -math.inf
    for attempt in range(max(1, init_retries)):
        cur_ll = estimator(theta0, data, derive_substream(init_stream, attempt)).log_p_hat
        if cur_ll > -math.inf:
            break
    if cur_ll == -math.inf:
        raise ValueError("estimator returned a zero estimate at theta0")
    cur_lp = lp0

    draws = np.empty((iterations, d))
    log_liks = np.empty(iterations)
    accepted = np.zeros(iterations, dtype=bool)
    cost = np.empty(iterations, dtype=np.int64)

    for i in range(iterations):
        eps = chol @ gen.standard_normal(d)
        prop_theta = cur_theta * np.exp(eps)
        prop_lp = prior(prop_theta)
        step_cost = 0
        if prop_lp > -math.inf:
            prop_est = estimator(prop_theta, data, derive_substream(rng, i + 1))
            step_cost = prop_est.total_simulations
            prop_ll = prop_est.log_p_hat
            if prop_ll > -math.inf:
                log_ratio = (prop_ll + prop_lp + np.log(prop_theta).sum()
                             - cur_ll - cur_lp - np.log(cur_theta).sum())
                if math.log(gen.uniform()) < log_ratio:
                    cur_theta, cur_ll, cur_lp = prop_theta, prop_ll, prop_lp
                    accepted[i] = True
        draws[i] = cur_theta
        log_liks[i] = cur_ll
        cost[i] = step_cost
    return Chain(draws, log_liks, accepted, cost,
                 seconds=time.perf_counter() - start)


def var_log_phat(estimator: LikelihoodEstimator, theta, data: Dataset,
                 replicates: int, rng: RngStream) -> tuple[float, float]:
    """Sample variance of the finite log-estimates at a fixed theta, plus the
    fraction of zero (log = -inf) outcomes.

    Zero estimates are excluded from the variance — it is undefined whenever
    the estimator can return 0 — so callers must check the zero fraction
    before trusting the variance.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    theta = np.asarray(theta, dtype=np.float64)
    logs = np.array([estimator(theta, data, derive_substream(rng, r)).log_p_hat
                     for r in range(replicates)])
    finite = logs[np.isfinite(logs)]
    zero_fraction = 1.0 - finite.size / replicates
    if finite.size == 0:
        raise RuntimeError("estimator dead at theta")
    variance = float(finite.var(ddof=1)) if finite.size >= 2 else 0.0
    return variance, zero_fraction


def _batches(n: int) -> int:
    return int(math.floor(math.sqrt(n)))


def ess_univariate(series) -> float:
    """Batch-means effective sample size, clipped to [1, n].

    A constant series returns n by convention (zero autocorrelation).
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n < 10:
        raise ValueError("series must have length >= 10")
    s2 = x.var(ddof=1)
    if s2 == 0.0:
        return float(n)
    b = _batches(n)
    a = n // b
    means = x[: a * b].reshape(a, b).mean(axis=1)
    sigma2 = b * means.var(ddof=1)
    if sigma2 == 0.0:
        return float(n)
    return float(np.clip(n * s2 / sigma2, 1.0, n))


def ess_multivariate(draws) -> float:
    """Determinant-based multivariate ESS: n (|Lambda| / |Sigma|)^(1/d) with
    batch-means long-run covariance, clipped to [1, n]."""
    x = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    n, d = x.shape
    if n < d * d:
        raise ValueError("need n >= d^2 draws")
    lam = np.cov(x, rowvar=False).reshape(d, d)
    sign_l, logdet_l = np.linalg.slogdet(lam)
    if sign_l <= 0:
        raise ValueError("degenerate chain")
    b = _batches(n)
    a = n // b
    means = x[: a * b].reshape(a, b, d).mean(axis=1)
    sigma = b * np.cov(means, rowvar=False).reshape(d, d)
    sign_s, logdet_s = np.linalg.slogdet(sigma)
    if sign_s <= 0:
        raise ValueError("degenerate chain")
    return float(np.clip(n * math.exp((logdet_l - logdet_s) / d), 1.0, n))


@dataclass(frozen=True)
class PilotResult:
    """Output of the sizing-then-pilot workflow."""

    knob: int
    theta_start: np.ndarray
    proposal: ProposalConfig
    pilot_chain: Chain
    per_theta_knobs: tuple[int, ...]


def pilot_workflow(estimator_family, data: Dataset, prior, theta_samples,
                   rng: RngStream, knob_lo: int, knob_hi: int,
                   replicates: int = 50, pilot_iterations: int = 1000,
                   tolerance: float = 0.25) -> PilotResult:
    """Size an estimator, then run a pilot chain to seed the main run.

    ``estimator_family(knob)`` must return a likelihood-estimator handle
    whose log-estimate variance decreases in ``knob``.  For each theta
    sample the smallest knob with var(log P-hat) within ``tolerance`` of 1
    (or below) is found by bisection; the max over samples is kept.  A pilot
    chain at that size then supplies the start point (posterior mean of the
    pilot draws) and the empirical covariance of log-draws for the main
    proposal.
    """
    theta_samples = [np.asarray(t, dtype=np.float64) for t in theta_samples]
    if not theta_samples:
        raise ValueError("need at least one theta sample")
    knobs = []
    for j, theta in enumerate(theta_samples):
        sub = derive_substream(rng, 2 * j)

        def probe(knob):
            v, _ = var_log_phat(estimator_family(knob), theta, data,
                                replicates, derive_substream(sub, knob))
            return v

        v_lo = probe(knob_lo)
        if v_lo <= 1.0 + tolerance:
            knobs.append(knob_lo)
            continue
        v_hi = probe(knob_hi)
        if v_hi > 1.0 + tolerance:
            raise RuntimeError(
                f"sizing bracket failure at theta={theta.tolist()}: "
                f"variance {v_hi:.3g} at knob {knob_hi}")
        lo, hi = knob_lo, knob_hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if probe(mid) <= 1.0 + tolerance:
                hi = mid
            else:
                lo = mid
        knobs.append(hi)
    knob = max(knobs)

    estimator = estimator_family(knob)
    theta0 = theta_samples[0]
    d = theta0.shape[0]
    pilot_prop = ProposalConfig(np.eye(d) * 0.01)
    pilot = pmmh_run(estimator, data, prior, theta0, pilot_prop,
                     pilot_iterations, derive_substream(rng, 1))
    theta_start = pilot.draws.mean(axis=0)
    log_cov = np.cov(np.log(pilot.draws), rowvar=False).reshape(d, d)
    # Guard against a pilot that barely moved.
    if np.linalg.matrix_rank(log_cov) < d or np.any(np.diag(log_cov) <= 0):
        log_cov = np.eye(d) * 0.01
    proposal = ProposalConfig(log_cov)
    return PilotResult(knob=knob, theta_start=theta_start, proposal=proposal,
                       pilot_chain=pilot, per_theta_knobs=tuple(knobs))
