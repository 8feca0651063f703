"""Tuning rules: success-target selection, relative-second-moment closed
forms and bounds, the simulation-cap rule, and the partial-observation
relative-variance estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, FilterConfig, RngStream, derive_substream
from .mjp import CleUnavailableError, cle_transition_density
from .models import StudyModel

__all__ = [
    "TuningReport",
    "success_target",
    "relative_second_moment",
    "vrel_exact_obs",
    "mplus_rule",
    "capped_second_moment_bound",
    "bernstein_tail_bound",
    "vrel_partial_estimate",
    "solve_s_for_vrel",
    "BracketError",
]


class BracketError(ValueError):
    """Bisection bracket does not straddle the target value."""


@dataclass(frozen=True)
class TuningReport:
    """Recommended stopping-rule settings and the evidence behind them."""

    s_recommended: int
    m_plus_recommended: int
    v_rel_target: float
    kappa: float
    method: str  # "exact-obs" | "partial-obs"
    per_interval_p_estimates: tuple[float, ...] | None = None

    def __post_init__(self):
        # s = 2 cannot control the relative variance as p -> 0.
        if self.s_recommended < 3:
            raise ValueError("s_recommended must be at least 3")


def success_target(T: int, v_rel: float, rounding: str = "ceiling") -> int:
    """Success threshold achieving a target relative variance with exact
    observations: round(2 + T / log(1 + V)).

    Too-high s only costs a little compute while too-low s can hurt mixing
    badly, so the default rounds up; "nearest" reproduces settings chosen
    by round-to-nearest.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    raw = 2.0 + T / math.log1p(v_rel)
    if rounding == "ceiling":
        return int(math.ceil(raw))
    if rounding == "nearest":
        return int(round(raw))
    raise ValueError(f"unknown rounding mode {rounding!r}")


def relative_second_moment(s_target: int, p: float):
    """E[P^2]/p^2 for the fully alive single-interval estimator.

    Exact closed forms for s in {2, 3}; a (lower, upper) bound pair for
    s >= 4.  Returns a float for the exact cases and a tuple of bounds
    otherwise; p = 1 gives the limit 1 in every case.
    """
    if s_target < 2:
        raise ValueError("s_target must be >= 2")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if p == 1.0:
        return 1.0 if s_target in (2, 3) else (1.0, 1.0)
    if s_target == 2:
        return -math.log(p) / (1.0 - p)
    if s_target == 3:
        return 2.0 / (1.0 - p) + 2.0 * p * math.log(p) / (1.0 - p) ** 2
    s = float(s_target)
    lower = 1.0 + (1.0 - (1.0 + 2.0 / (s - 3.0)) * p) / (s - 2.0)
    upper = 1.0 + (1.0 - p) / (s - 2.0)
    return (lower, upper)


def s3_bounds(p: float) -> tuple[float, float]:
    """The s = 3 bound pair [1 + (1-p)/3, 2 - p]."""
    return (1.0 + (1.0 - p) / 3.0, 2.0 - p)


def vrel_exact_obs(s_target: int, T: int) -> float:
    """Approximate relative variance with T exact observations:
    exp(T/(s-2)) - 1."""
    if s_target < 3:
        raise ValueError("s_target must be >= 3")
    if T < 1:
        raise ValueError("T must be >= 1")
    return math.expm1(T / (s_target - 2.0))


def mplus_rule(s_target: int, p_min: float, kappa: float = 10.0) -> int:
    """Simulation cap such that m_plus * p = kappa * s at the smallest
    per-interval probability."""
    if not p_min > 0.0:
        raise ValueError("p_min must be positive")
    return int(math.ceil(kappa * s_target / p_min))


def bernstein_tail_bound(s_target: float, w_star: float, kappa: float) -> float:
    """Bound on P(sum of m_plus capped weights < s) when m_plus p = kappa s."""
    if kappa < 7.0 / 4.0:
        raise ValueError("Bernstein bound inapplicable: kappa < 7/4")
    return math.exp(-3.0 * (kappa - 7.0 / 4.0) * s_target / (8.0 * w_star))


def capped_second_moment_bound(s_target: float, p: float, w_star: float, m_plus: int,
                               tail_probability: float | None = None) -> float:
    """Upper bound on E[P^2]/p^2 for the one-step filter with weights capped
    at ``w_star``: 1 + w*/(s - 2w*) + (s/(m_plus p)) * P(sum W < s).

    The tail probability may be supplied exactly; otherwise the Bernstein
    bound is used, which requires m_plus p = kappa s with kappa >= 7/4.
    """
    if not s_target > 2.0 * w_star:
        raise ValueError("requires s_target > 2 * w_star")
    if tail_probability is None:
        kappa = m_plus * p / s_target
        tail_probability = bernstein_tail_bound(s_target, w_star, kappa)
    return (1.0 + w_star / (s_target - 2.0 * w_star)
            + (s_target / (m_plus * p)) * tail_probability)


class VrelEstimateError(RuntimeError):
    """A transition-density approximation failed during the estimate."""


def vrel_partial_estimate(model: StudyModel, theta, data: Dataset, s_target: int,
                          replicates: int, rng: RngStream,
                          proposal: str = "forward",
                          m_plus: float = math.inf) -> float:
    """Relative-variance estimate for partially observed models.

    Runs the adaptive filter ``replicates`` times; on each run and at each
    interval, averages the Gaussian-approximation transition density over
    the first s-1 success states of the previous interval (the particles
    the next interval resamples from), then combines the replicate products:
    exp(T/(s-2)) * mean(prod^2) / mean(prod)^2 - 1.

    With complete observations every replicate product coincides and this
    collapses exactly to exp(T/(s-2)) - 1.
    """
    from .filters import frankenfilter_general  # local import to avoid a cycle

    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    if s_target < 3:
        raise ValueError("s_target must be >= 3")
    theta = np.asarray(theta, dtype=np.float64)
    config = FilterConfig(s_target=float(s_target), m_minus=0, m_plus=m_plus)
    T = data.n_obs
    F = data.obs_matrix
    x0 = model.x0_fixed()
    prods = np.empty(replicates)
    for r in range(replicates):
        _, pools = frankenfilter_general(model, theta, data, config, proposal,
                                         derive_substream(rng, r),
                                         collect_successes=True)
        log_prod = 0.0
        prev_t = 0.0
        for t in range(T):
            dt = data.times[t] - prev_t
            prev_t = data.times[t]
            ancestors = x0[None, :] if t == 0 else pools[t - 1]
            if ancestors.shape[0] == 0:
                log_prod = -math.inf
                break
            try:
                dens = [cle_transition_density(model.network, a, theta,
                                               data.observations[t], F, dt)
                        for a in ancestors]
            except CleUnavailableError as exc:
                raise VrelEstimateError(f"CLE approximation failed at interval {t}") from exc
            p_bar = float(np.mean(dens))
            if p_bar <= 0.0:
                log_prod = -math.inf
                break
            log_prod += math.log(p_bar)
        prods[r] = math.exp(log_prod) if log_prod > -math.inf else 0.0
    mean1 = prods.mean()
    if mean1 <= 0.0:
        raise VrelEstimateError("all replicate products were zero")
    mean2 = (prods ** 2).mean()
    return math.exp(T / (s_target - 2.0)) * mean2 / mean1 ** 2 - 1.0


def solve_s_for_vrel(evaluator, v_target: float, s_lo: int, s_hi: int) -> int:
    """Smallest integer s in (s_lo, s_hi] whose (replicate-averaged)
    relative-variance estimate drops to the target.

    The evaluator is assumed monotone decreasing in expectation; callers
    should pre-smooth noisy evaluators (averaging replicated estimates)
    before handing them in.
    """
    e_lo = evaluator(s_lo)
    e_hi = evaluator(s_hi)
    if not (e_lo > v_target >= e_hi):
        raise BracketError(
            f"no sign change over [{s_lo}, {s_hi}]: evaluator gives "
            f"({e_lo:.6g}, {e_hi:.6g}) around target {v_target:.6g}")
    lo, hi = s_lo, s_hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if evaluator(mid) <= v_target:
            hi = mid
        else:
            lo = mid
    return hi
