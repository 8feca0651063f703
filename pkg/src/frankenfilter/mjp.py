"""Markov-jump-process simulation: Gillespie, tau-leaping, conditioned-hazard
bridge proposals and the Gaussian (chemical Langevin) transition-density
approximation.

All operations are pure given their RNG generator and safe to run
concurrently on independent substreams.  Batch variants operate on an
``(n, d)`` array of states and are the hot path for the filters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgWarning, cho_factor, cho_solve, lu_factor
from scipy.special import gammaln

__all__ = [
    "ReactionNetwork",
    "BridgeResult",
    "CleUnavailableError",
    "gillespie_simulate",
    "tau_leap_simulate",
    "conditioned_hazard",
    "bridge_simulate",
    "bridge_simulate_batch",
    "cle_transition_density",
    "num_tau_steps",
]

_PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class ReactionNetwork:
    """Stoichiometry and hazard specification of a reaction network.

    ``hazard(x, theta)`` must accept states with species on the last axis
    (shape ``(d,)`` or ``(n, d)``) and return rates on the last axis; rates
    are clamped at zero before use, so hazards may go negative on
    out-of-support states produced by tau-leaping.
    """

    num_species: int
    num_reactions: int
    stoich: np.ndarray  # (d_x, r) int
    hazard: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_dim: int

    def __post_init__(self):
        S = np.asarray(self.stoich, dtype=np.int64)
        if S.shape != (self.num_species, self.num_reactions):
            raise ValueError("stoich must have shape (num_species, num_reactions)")
        object.__setattr__(self, "stoich", S)

    def rates(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Hazard clamped at zero component-wise."""
        return np.maximum(self.hazard(x, theta), 0.0)


@dataclass(frozen=True)
class BridgeResult:
    end_state: np.ndarray
    log_weight: float
    event_counts: np.ndarray  # (r, N) int


class CleUnavailableError(ValueError):
    """Gaussian transition-density approximation unavailable (covariance not
    positive definite)."""


def gillespie_simulate(net, x0, theta, t0, t1, rng) -> np.ndarray:
    """Exact MJP simulation by the direct method.

    Draws exponential waiting times at the total rate, picks the reaction
    proportionally to its hazard and applies its stoichiometry column.  A
    zero total rate freezes the state (valid absorbing case).
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    x = np.array(x0, dtype=np.int64, copy=True)
    t = float(t0)
    S = net.stoich
    while True:
        h = net.rates(x, theta)
        h0 = h.sum()
        if h0 <= 0.0:
            return x
        t += rng.exponential(1.0 / h0)
        if t > t1:
            return x
        i = rng.choice(net.num_reactions, p=h / h0)
        x += S[:, i]


def num_tau_steps(dt: float, tau: float) -> int:
    """Number of sub-steps in ``dt``; rejects non-integer ``dt/tau``."""
    n = dt / tau
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-9 * max(1.0, n_round):
        raise ValueError(f"dt/tau = {n} is not a positive integer")
    return int(n_round)


def tau_leap_simulate(net, x0, theta, t0, t1, tau, rng):
    """Fixed-step Poisson (tau-leap) simulation.

    Returns the final state and the full per-step reaction-count record
    (shape ``(r, N)``), which the bridge weight needs.  Species counts may go
    negative; hazards are clamped, states are left as-is.
    """
    N = num_tau_steps(t1 - t0, tau)
    x = np.array(x0, dtype=np.int64, copy=True)
    S = net.stoich
    counts = np.zeros((net.num_reactions, N), dtype=np.int64)
    for k in range(N):
        dn = rng.poisson(net.rates(x, theta) * tau)
        counts[:, k] = dn
        x += S @ dn
    return x, counts


def tau_leap_batch(net, states, theta, dt, tau, rng) -> np.ndarray:
    """Tau-leap a batch of states (shape ``(n, d)``) over ``dt``."""
    N = num_tau_steps(dt, tau)
    x = np.array(states, dtype=np.int64, copy=True)
    S_T = net.stoich.T  # (r, d)
    for _ in range(N):
        dn = rng.poisson(net.rates(x, theta) * tau)
        x += dn @ S_T
    return x


def conditioned_hazard(net, x_s, theta, y_t, F, dt_remaining):
    """Moment-matched hazard conditioned to hit the observed part of ``y_t``.

    Falls back to the unconditioned hazard when the inner observed-space
    matrix is singular (smallest pivot below 1e-12).
    """
    h, fell_back = _conditioned_hazard_info(net, np.asarray(x_s, dtype=np.float64),
                                            theta, np.asarray(y_t, dtype=np.float64),
                                            np.asarray(F, dtype=np.float64),
                                            float(dt_remaining))
    return h


def _conditioned_hazard_info(net, x_s, theta, y_t, F, dt_remaining):
    h = net.rates(x_s, theta)
    S = net.stoich.astype(np.float64)
    SH = S * h  # S @ diag(h)
    A = F.T @ SH @ S.T @ F * dt_remaining
    resid = y_t - F.T @ x_s - (F.T @ S @ h) * dt_remaining
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(A)
    except Exception:
        return h, True
    if np.abs(np.diag(lu)).min() <= _PIVOT_TOL:
        return h, True
    sol = np.linalg.solve(A, resid)
    cond = h + (SH.T @ F) @ sol
    return np.maximum(cond, 0.0), False


def _conditioned_hazard_batch(net, states, theta, y_t, F, dt_remaining):
    """Vectorised conditioned hazard for a batch of states.

    Fast paths for 1- and 2-dimensional observation spaces (the study
    models); general d_y falls back to a per-state loop.
    """
    n = states.shape[0]
    h = net.rates(states, theta)  # (n, r)
    S = net.stoich.astype(np.float64)  # (d, r)
    d_y = F.shape[1]
    G = (S.T @ F)  # (r, d_y)
    xf = states.astype(np.float64)
    # residual in observed space: y - F'x - F'S h dt
    resid = y_t[None, :] - xf @ F - (h @ G) * dt_remaining  # (n, d_y)
    if d_y == 1:
        a = (h @ (G[:, 0] ** 2)) * dt_remaining  # (n,)
        ok = a > _PIVOT_TOL
        scale = np.where(ok, resid[:, 0] / np.where(ok, a, 1.0), 0.0)
        cond = h + (h * G[:, 0][None, :]) * scale[:, None]
        return np.where(ok[:, None], np.maximum(cond, 0.0), h)
    if d_y == 2:
        # A = G' diag(h) G dt, per state; invert 2x2 explicitly
        g0, g1 = G[:, 0], G[:, 1]
        a00 = (h @ (g0 * g0)) * dt_remaining
        a01 = (h @ (g0 * g1)) * dt_remaining
        a11 = (h @ (g1 * g1)) * dt_remaining
        det = a00 * a11 - a01 * a01
        ok = np.abs(det) > _PIVOT_TOL
        det_safe = np.where(ok, det, 1.0)
        r0, r1 = resid[:, 0], resid[:, 1]
        s0 = (a11 * r0 - a01 * r1) / det_safe
        s1 = (-a01 * r0 + a00 * r1) / det_safe
        cond = h * (1.0 + g0[None, :] * s0[:, None] + g1[None, :] * s1[:, None])
        return np.where(ok[:, None], np.maximum(cond, 0.0), h)
    out = np.empty_like(h)
    for i in range(n):
        out[i], _ = _conditioned_hazard_info(net, xf[i], theta, y_t, F, dt_remaining)
    return out


def _poisson_logpmf(k, lam):
    """log Po(k; lam) with the conventions Po(0; 0) = 1 and Po(k>0; 0) = 0."""
    k = np.asarray(k, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = k * np.log(np.where(lam > 0.0, lam, 1.0)) - lam - gammaln(k + 1.0)
    zero_rate = lam <= 0.0
    out = np.where(zero_rate & (k == 0), 0.0, out)
    out = np.where(zero_rate & (k > 0), -np.inf, out)
    return out


def bridge_simulate_batch(net, states, theta, y_t, F, dt, tau, rng):
    """Tau-leap a batch of states under the conditioned hazard.

    The conditioned hazard is refreshed at every sub-step with the current
    state and remaining time.  Returns ``(end_states, log_weights, match)``
    where ``match`` flags trajectories that hit the observation and
    each log-weight is the endpoint-match indicator (in log space) plus the
    accumulated log Poisson ratio of unconditioned to conditioned rates.
    """
    N = num_tau_steps(dt, tau)
    Ff = np.asarray(F, dtype=np.float64)
    y = np.asarray(y_t, dtype=np.float64)
    x = np.array(states, dtype=np.int64, copy=True)
    S_T = net.stoich.T
    log_w = np.zeros(x.shape[0])
    for k in range(N):
        remaining = dt - k * tau
        h = net.rates(x, theta)
        h_cond = _conditioned_hazard_batch(net, x, theta, y, Ff, remaining)
        dn = rng.poisson(h_cond * tau)
        log_w += (_poisson_logpmf(dn, h * tau) - _poisson_logpmf(dn, h_cond * tau)).sum(axis=1)
        x += dn @ S_T
    match = np.all(x.astype(np.float64) @ Ff == y[None, :], axis=1)
    log_w = np.where(match, log_w, -np.inf)
    return x, log_w, match


def bridge_simulate(net, x_prev, theta, y_t, F, dt, tau, rng) -> BridgeResult:
    """Single conditioned-hazard bridge with the full event-count record."""
    N = num_tau_steps(dt, tau)
    Ff = np.asarray(F, dtype=np.float64)
    y = np.asarray(y_t, dtype=np.float64)
    x = np.array(x_prev, dtype=np.int64, copy=True)
    S = net.stoich
    counts = np.zeros((net.num_reactions, N), dtype=np.int64)
    log_w = 0.0
    for k in range(N):
        remaining = dt - k * tau
        h = net.rates(x, theta)
        h_cond, _ = _conditioned_hazard_info(net, x.astype(np.float64), theta, y, Ff, remaining)
        dn = rng.poisson(h_cond * tau)
        counts[:, k] = dn
        log_w += float((_poisson_logpmf(dn, h * tau) - _poisson_logpmf(dn, h_cond * tau)).sum())
        x += S @ dn
    if not np.all(x.astype(np.float64) @ Ff == y):
        log_w = -math.inf
    return BridgeResult(end_state=x, log_weight=log_w, event_counts=counts)


def cle_transition_density(net, x_prev, theta, y_t, F, dt) -> float:
    """Gaussian transition density of the observed part under the chemical
    Langevin approximation: N(F'y_t; F'(x + S h dt), F' S diag(h) S' F dt).
    """
    x = np.asarray(x_prev, dtype=np.float64)
    Ff = np.asarray(F, dtype=np.float64)
    y = np.asarray(y_t, dtype=np.float64)
    h = net.rates(x, theta)
    S = net.stoich.astype(np.float64)
    alpha = S @ h
    beta = (S * h) @ S.T
    mean = Ff.T @ (x + alpha * dt)
    cov = Ff.T @ beta @ Ff * dt
    try:
        c, low = cho_factor(cov)
    except np.linalg.LinAlgError as exc:
        raise CleUnavailableError("observed-space covariance is not positive definite") from exc
    if np.abs(np.diag(c)).min() <= math.sqrt(_PIVOT_TOL):
        raise CleUnavailableError("observed-space covariance is numerically singular")
    resid = y - mean
    quad = float(resid @ cho_solve((c, low), resid))
    log_det = 2.0 * float(np.log(np.abs(np.diag(c))).sum())
    d = len(y)
    return math.exp(-0.5 * (quad + log_det + d * math.log(2.0 * math.pi)))
