"""Independent brute-force verifiers: exact enumeration of the stopping-rule
estimators over binary outcome trees, negative-binomial reference sampling,
and an exact convolution oracle for the tau-leap transition law.

These deliberately re-derive every quantity from first principles; none of
them call into the filter implementations they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from .core import RngStream
from .mjp import ReactionNetwork

__all__ = [
    "Leaf",
    "OutcomeTree",
    "enumerate_bernoulli_estimator",
    "negbin_trials_sample",
    "tau_leap_exact_convolution",
    "ConvolutionResult",
]

_MASS_TOL = Fraction(1, 10**14)


@dataclass(frozen=True)
class Leaf:
    probability: Fraction
    estimate: Fraction
    m: int
    k: int


@dataclass(frozen=True)
class OutcomeTree:
    leaves: tuple[Leaf, ...]

    def total_mass(self) -> Fraction:
        return sum((leaf.probability for leaf in self.leaves), Fraction(0))

    def expectation(self) -> Fraction:
        return sum((leaf.probability * leaf.estimate for leaf in self.leaves), Fraction(0))

    def second_moment(self) -> Fraction:
        return sum((leaf.probability * leaf.estimate ** 2 for leaf in self.leaves), Fraction(0))


def _stopped(algorithm: str, m: int, n_succ: int, s_target: int, m_minus: int, m_plus: int) -> bool:
    if algorithm == "alg3" and m < m_minus:
        return False
    if m >= m_plus:
        return True
    return n_succ >= s_target


def _leaf_estimate(algorithm: str, m: int, n_succ: int, last_success: bool,
                   s_target: int, m_minus: int, m_plus: int) -> tuple[Fraction, int]:
    """Estimate and stop-kind at a stopped prefix, per the named algorithm."""
    if algorithm == "alg1":
        # Hard threshold: reaching m_plus zeroes the estimate, even when the
        # s-th success landed exactly there.
        if m == m_plus:
            return Fraction(0), 2
        return Fraction(s_target - 1, m - 1), 1
    if algorithm == "alg2":
        if n_succ < s_target:
            return Fraction(n_succ, m), 2
        # The final trial is necessarily the s-th success.
        return Fraction(n_succ - 1, m - 1), 1
    if algorithm == "alg3":
        if m == m_minus:
            return Fraction(n_succ, m), 0
        if n_succ < s_target:
            return Fraction(n_succ, m), 2
        return Fraction(n_succ - 1, m - 1), 1
    raise ValueError(f"unknown algorithm {algorithm!r}")


def enumerate_bernoulli_estimator(p, s_target: int, m_minus: int, m_plus: int,
                                  algorithm: str):
    """Walk every stopped binary outcome prefix exactly.

    ``p`` may be a :class:`Fraction` (fully exact) or a float (converted to
    its exact binary rational).  Returns ``(expectation, second_moment,
    tree)`` with exact rational arithmetic throughout; the leaf masses are
    checked to sum to one.
    """
    if m_plus > 24:
        raise ValueError("m_plus > 24 would enumerate over 2^24 prefixes")
    if algorithm in ("alg1", "alg2"):
        m_minus = 0
    pf = p if isinstance(p, Fraction) else Fraction(p)
    qf = 1 - pf
    leaves: list[Leaf] = []

    def walk(m: int, n_succ: int, prob: Fraction, last: bool):
        if _stopped(algorithm, m, n_succ, s_target, m_minus, m_plus):
            est, k = _leaf_estimate(algorithm, m, n_succ, last, s_target, m_minus, m_plus)
            leaves.append(Leaf(prob, est, m, k))
            return
        if pf > 0:
            walk(m + 1, n_succ + 1, prob * pf, True)
        if qf > 0:
            walk(m + 1, n_succ, prob * qf, False)

    walk(0, 0, Fraction(1), False)
    tree = OutcomeTree(tuple(leaves))
    if abs(tree.total_mass() - 1) > _MASS_TOL:
        raise AssertionError("enumeration leaf masses do not sum to one")
    return tree.expectation(), tree.second_moment(), tree


def negbin_trials_sample(p: float, s_target: int, rng: RngStream | np.random.Generator,
                         size=None):
    """Trial count of the s-th success in i.i.d. Bernoulli(p) draws.

    M - 1 follows the shifted negative-binomial law that underpins the
    relative-second-moment closed forms.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if p == 1.0:
        return s_target if size is None else np.full(size, s_target)
    failures = gen.negative_binomial(s_target, p, size=size)
    return failures + s_target


@dataclass(frozen=True)
class ConvolutionResult:
    probability: float
    truncation_deficit: float


def _poisson_kernel(lam: float, mass_tol: float = 1e-12):
    """Support and pmf of Poisson(lam), truncated at cumulative mass 1 - tol."""
    if lam <= 0.0:
        return np.array([0]), np.array([1.0]), 0.0
    hi = int(stats.poisson.ppf(1.0 - mass_tol, lam)) + 1
    ks = np.arange(hi + 1)
    pmf = stats.poisson.pmf(ks, lam)
    return ks, pmf, float(max(0.0, 1.0 - pmf.sum()))


def tau_leap_exact_convolution(net: ReactionNetwork, x_prev, theta, dt: float,
                               tau: float, y_t, F, state_cap: int = 10_000) -> ConvolutionResult:
    """Exact dynamic programming over the N-step tau-leap chain.

    Propagates the full state distribution step by step (Poisson step
    kernels truncated at cumulative mass 1 - 1e-12) and returns
    P(F'X_t = F'y_t | x_prev) together with the accumulated truncation
    deficit, which bounds the error from below-threshold mass.
    """
    n_steps = dt / tau
    N = round(n_steps)
    if N < 1 or abs(n_steps - N) > 1e-9 or N > 4:
        raise ValueError("dt/tau must be an integer between 1 and 4")
    theta = np.asarray(theta, dtype=np.float64)
    Ff = np.asarray(F, dtype=np.float64)
    S = net.stoich
    dist: dict[tuple, float] = {tuple(int(v) for v in np.asarray(x_prev)): 1.0}
    deficit = 0.0
    for _ in range(N):
        nxt: dict[tuple, float] = {}
        for state, prob in dist.items():
            x = np.asarray(state, dtype=np.float64)
            rates = net.rates(x, theta) * tau
            kernels = [_poisson_kernel(float(lam)) for lam in rates]
            deficit += prob * sum(d for _, _, d in kernels)
            # convolve the per-reaction counts one reaction at a time
            partial = {state: prob}
            for i, (ks, pmf, _) in enumerate(kernels):
                new_partial: dict[tuple, float] = {}
                col = S[:, i]
                for st, pr in partial.items():
                    base = np.asarray(st, dtype=np.int64)
                    for kk, pk in zip(ks, pmf):
                        tgt = tuple((base + kk * col).tolist())
                        new_partial[tgt] = new_partial.get(tgt, 0.0) + pr * pk
                partial = new_partial
            for st, pr in partial.items():
                nxt[st] = nxt.get(st, 0.0) + pr
        if len(nxt) > state_cap:
            raise ValueError(f"state space exceeded the cap ({len(nxt)} states)")
        dist = nxt
    y_arr = np.atleast_1d(np.asarray(y_t, dtype=np.float64))
    # Accept either a full-state vector (projected via F) or an already
    # observed-space vector of length d_y.
    target = y_arr @ Ff if y_arr.shape[0] == Ff.shape[0] else y_arr
    prob = 0.0
    for st, pr in dist.items():
        if np.array_equal(np.asarray(st, dtype=np.float64) @ Ff, target):
            prob += pr
    return ConvolutionResult(probability=prob, truncation_deficit=deficit)
