"""Adaptive and fixed-size particle filters.

The adaptive filters simulate a random number of trials per inter-observation
interval, stopping once a success threshold is met or a simulation bound is
hit, and apply a three-branch estimator that keeps the product estimate
unbiased.  The hard-threshold alive filter is included as a (biased)
baseline, together with a bootstrap particle filter with multinomial
resampling.

Trials are drawn in geometrically growing chunks so the hot loops stay in
numpy; chunk overdraws are discarded, which leaves the stopping law (and the
per-seed output, for a fixed chunk schedule) unchanged.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .core import (Dataset, FilterConfig, IntervalRecord, LikelihoodEstimate,
                   RngStream)
from .mjp import bridge_simulate_batch
from .models import StudyModel

__all__ = [
    "frankenfilter_basic",
    "frankenfilter_one_step",
    "ancestor_sample",
    "frankenfilter_general",
    "alive_filter",
    "alive_hard_threshold",
    "bootstrap_pf",
    "AliveFilterAbortError",
    "make_frankenfilter_estimator",
    "make_bootstrap_estimator",
    "make_alive_estimator",
    "make_alive_hard_estimator",
]

_BASE_CHUNK = 16


class AliveFilterAbortError(RuntimeError):
    """The fully alive filter exceeded its total-simulation guard.

    Raised (never converted to a zero estimate) so unbiasedness is not
    silently violated.
    """


def _chunk_schedule(m: int, m_plus: float, s_target: float) -> int:
    base = max(_BASE_CHUNK, int(math.ceil(2.0 * max(s_target, 1.0))))
    c = max(base, m)
    if math.isfinite(m_plus):
        c = min(c, int(m_plus) - m)
    return c


def frankenfilter_basic(trial_sampler, s_target: int, m_plus: float, rng: RngStream) -> float:
    """Single-interval success-probability estimator with binary weights.

    ``trial_sampler(gen, n)`` returns n i.i.d. weights in {0,1}.  Simulation
    stops at ``m_plus`` trials or once ``s_target`` successes are seen.  The
    branch between the two estimators tests the success sum, not whether
    ``m_plus`` was reached: the threshold can be met exactly on the last
    permitted trial, and that case takes the (m-1)-denominator form.
    """
    if s_target < 2:
        raise ValueError("the basic filter requires s_target >= 2")
    gen = rng.generator()
    m = 0
    total = 0.0
    kept: list[np.ndarray] = []
    cross_at = -1
    while m < m_plus and total < s_target:
        c = _chunk_schedule(m, m_plus, s_target)
        w = np.asarray(trial_sampler(gen, c), dtype=np.float64)
        cum = total + np.cumsum(w)
        crossed = np.nonzero(cum >= s_target)[0]
        if crossed.size:
            j = int(crossed[0])
            kept.append(w[: j + 1])
            m += j + 1
            total = float(cum[j])
            cross_at = m
            break
        kept.append(w)
        m += c
        total = float(cum[-1])
    w_all = np.concatenate(kept) if kept else np.empty(0)
    if total < s_target:
        return float(w_all.sum() / m)
    return float(w_all[: m - 1].sum() / (m - 1))


def frankenfilter_one_step(trial_sampler, config: FilterConfig, rng: RngStream) -> float:
    """Single-interval estimator with general weights and success measures.

    ``trial_sampler(gen, n)`` returns n i.i.d. ``(w, s)`` pairs as two
    arrays.  Draws ``m_minus`` pairs up front, extends while the success sum
    is short of the threshold, and returns the all-``m`` mean when the run
    stopped at ``m_minus`` or without sufficient success, else the
    first-``(m-1)`` mean.
    """
    gen = rng.generator()
    w_all, s_all, m, k = _adaptive_trials(
        lambda n: trial_sampler(gen, n), config.s_target, config.m_minus, config.m_plus)
    if k == 1:
        return float(w_all[: m - 1].sum() / (m - 1))
    return float(w_all.sum() / m)


def _adaptive_trials(draw, s_target, m_minus, m_plus):
    """Shared stopping loop: returns (w, s, m, k) with arrays truncated at m."""
    ws: list[np.ndarray] = []
    ss: list[np.ndarray] = []
    m = 0
    total = 0.0
    if m_minus > 0:
        w, s = draw(m_minus)
        ws.append(np.asarray(w, dtype=np.float64))
        ss.append(np.asarray(s, dtype=np.float64))
        m = m_minus
        total = float(ss[0].sum())
    while m < m_plus and total < s_target:
        c = _chunk_schedule(m, m_plus, s_target)
        w, s = draw(c)
        w = np.asarray(w, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        cum = total + np.cumsum(s)
        crossed = np.nonzero(cum >= s_target)[0]
        if crossed.size:
            j = int(crossed[0])
            ws.append(w[: j + 1])
            ss.append(s[: j + 1])
            m += j + 1
            total = float(cum[j])
            break
        ws.append(w)
        ss.append(s)
        m += c
        total = float(cum[-1])
    w_all = np.concatenate(ws) if ws else np.empty(0)
    s_all = np.concatenate(ss) if ss else np.empty(0)
    if m == m_minus:
        k = 0
    elif total < s_target:
        k = 2
    else:
        k = 1
    return w_all, s_all, m, k


def ancestor_sample(m: int, k: int, weights, rng: RngStream) -> int:
    """Draw one ancestor index (0-based) proportional to the usable weights.

    Stop-kind 1 excludes the final trial (the one that crossed the
    threshold); kinds 0 and 2 use all ``m`` weights.
    """
    w = np.asarray(weights, dtype=np.float64)[: m - 1 if k == 1 else m]
    tot = w.sum()
    if tot <= 0.0:
        raise ValueError("zero total weight: caller must have short-circuited")
    return int(rng.generator().choice(len(w), p=w / tot))


def _log_mean(log_w: np.ndarray, denom: int) -> float:
    """log((1/denom) * sum exp(log_w)) with max-shift; -inf when empty/zero."""
    if denom == 0 or log_w.size == 0:
        return -math.inf
    val = logsumexp(log_w)
    if val == -math.inf:
        return -math.inf
    return float(val - math.log(denom))


def _ancestor_probs(log_w_usable: np.ndarray) -> np.ndarray:
    shift = log_w_usable - log_w_usable.max()
    p = np.exp(shift)
    return p / p.sum()


def _run_general(draw_trials, T: int, config: FilterConfig,
                 collect_successes: bool = False):
    """Generic multi-interval adaptive filter loop.

    ``draw_trials(t_idx, n, prev_states, prev_log_w, gen_for_chunk)`` draws n
    fresh trials (resampling its own ancestors from the usable previous
    weights) and returns ``(states, log_w, s)``.
    """
    records: list[IntervalRecord] = []
    success_pools: list[np.ndarray] = []
    prev_states = None
    prev_log_w = None

    def finish(t_done):
        for _ in range(t_done, T):
            records.append(IntervalRecord(-math.inf, 0, 2, visited=False))
        est = LikelihoodEstimate.from_intervals(records)
        return (est, success_pools) if collect_successes else est

    for t in range(T):
        s_t = config.s_for(t)
        states_chunks: list[np.ndarray] = []
        logw_chunks: list[np.ndarray] = []
        _, s_all, m, k = _adaptive_trials_logw(
            draw_trials, t, prev_states, prev_log_w, s_t, config.m_minus, config.m_plus,
            states_chunks, logw_chunks)
        log_w = np.concatenate(logw_chunks) if logw_chunks else np.empty(0)
        states = np.concatenate(states_chunks) if states_chunks else np.empty((0, 1))
        denom = m - 1 if k == 1 else m
        log_p_t = _log_mean(log_w[:denom], denom)
        records.append(IntervalRecord(log_p_hat_t=log_p_t, m_t=m, k_t=k))
        if collect_successes:
            pool_n = max(int(round(s_t)) - 1, 1)
            succ = states[s_all > 0.0][:pool_n]
            success_pools.append(succ)
        if log_p_t == -math.inf:
            return finish(t + 1)
        prev_states = states[:denom]
        prev_log_w = log_w[:denom]
    est = LikelihoodEstimate.from_intervals(records)
    return (est, success_pools) if collect_successes else est


def _w_from_logw(lw):
    with np.errstate(over="ignore"):
        return np.exp(lw)


def _adaptive_trials_logw(draw_trials, t, prev_states, prev_log_w, s_target,
                          m_minus, m_plus, states_chunks, logw_chunks):
    """As :func:`_adaptive_trials` but recording states and log-weights."""
    ss: list[np.ndarray] = []
    m = 0
    total = 0.0

    def draw(n):
        st, lw, s = draw_trials(t, n, prev_states, prev_log_w)
        return st, np.asarray(lw, dtype=np.float64), np.asarray(s, dtype=np.float64)

    if m_minus > 0:
        st, lw, s = draw(m_minus)
        states_chunks.append(st)
        logw_chunks.append(lw)
        ss.append(s)
        m = m_minus
        total = float(s.sum())
    while m < m_plus and total < s_target:
        c = _chunk_schedule(m, m_plus, s_target)
        st, lw, s = draw(c)
        cum = total + np.cumsum(s)
        crossed = np.nonzero(cum >= s_target)[0]
        if crossed.size:
            j = int(crossed[0])
            states_chunks.append(st[: j + 1])
            logw_chunks.append(lw[: j + 1])
            ss.append(s[: j + 1])
            m += j + 1
            total = float(cum[j])
            break
        states_chunks.append(st)
        logw_chunks.append(lw)
        ss.append(s)
        m += c
        total = float(cum[-1])
    s_all = np.concatenate(ss) if ss else np.empty(0)
    if m == m_minus:
        k = 0
    elif total < s_target:
        k = 2
    else:
        k = 1
    return None, s_all, m, k


def _interval_spans(model: StudyModel, data: Dataset):
    prev = 0.0
    spans = []
    for t in data.times:
        spans.append(t - prev)
        prev = t
    return spans


def _make_draw_trials(model: StudyModel, theta, data: Dataset, proposal: str,
                      config: FilterConfig, gen: np.random.Generator):
    """Build the per-interval trial sampler for a study model."""
    theta = np.asarray(theta, dtype=np.float64)
    F = data.obs_matrix
    spans = _interval_spans(model, data)
    if proposal == "bridge" and model.inferential_kind != "tau-leap":
        raise ValueError("bridge proposals require a tau-leap inferential model")

    def draw_trials(t, n, prev_states, prev_log_w):
        if t == 0:
            anc = model.sample_x0(n, gen)
        else:
            idx = gen.choice(prev_states.shape[0], size=n, p=_ancestor_probs(prev_log_w))
            anc = prev_states[idx]
        y_t = data.observations[t]
        if proposal == "forward":
            new = model.transition_batch(anc, theta, spans[t], gen)
            match = np.all(new @ F == y_t[None, :], axis=1)
            log_w = np.where(match, 0.0, -math.inf)
        else:
            new, log_w, match = bridge_simulate_batch(
                model.network, anc, theta, y_t, F, spans[t], model.tau, gen)
        if config.success_kind == "weight-equals-success":
            s = _w_from_logw(log_w)
        else:
            s = match.astype(np.float64)
        return new, log_w, s

    return draw_trials


def frankenfilter_general(model: StudyModel, theta, data: Dataset, config: FilterConfig,
                          proposal: str, rng: RngStream,
                          collect_successes: bool = False):
    """Adaptive unbiased filter over a study model.

    Particles resample their ancestors from the usable previous weights,
    propagate by forward simulation or conditioned-hazard bridges, and each
    interval applies the three-branch stop-kind logic.  A zero per-interval
    estimate short-circuits to ``-inf`` with later intervals marked
    unvisited.
    """
    gen = rng.generator()
    draw_trials = _make_draw_trials(model, theta, data, proposal, config, gen)
    return _run_general(draw_trials, data.n_obs, config, collect_successes=collect_successes)


def _indicator_success_filter(model: StudyModel, theta, data: Dataset, s_target: int,
                              m_plus: float, gen: np.random.Generator,
                              hard_threshold: bool, max_total: float = 1e9):
    """Shared loop for the alive filter and its hard-threshold variant.

    Ancestors are uniform over the first ``s_target - 1`` previous success
    states; the per-interval estimate is (s-1)/(m-1).  With the hard
    threshold, hitting ``m_plus`` returns an overall zero even when the
    final trial was the s-th success (the baseline's documented behaviour).
    """
    theta = np.asarray(theta, dtype=np.float64)
    if s_target < 2:
        raise ValueError("indicator alive filters require s_target >= 2")
    F = data.obs_matrix
    spans = _interval_spans(model, data)
    records: list[IntervalRecord] = []
    pool = None  # previous success states
    grand_total = 0

    def finish(t_done):
        for _ in range(t_done, data.n_obs):
            records.append(IntervalRecord(-math.inf, 0, 2, visited=False))
        return LikelihoodEstimate.from_intervals(records)

    for t in range(data.n_obs):
        y_t = data.observations[t]
        m = 0
        n_succ = 0
        succ_states: list[np.ndarray] = []
        while m < m_plus and n_succ < s_target:
            c = _chunk_schedule(m, m_plus, s_target)
            if t == 0:
                anc = model.sample_x0(c, gen)
            else:
                anc = pool[gen.integers(0, pool.shape[0], size=c)]
            new = model.transition_batch(anc, theta, spans[t], gen)
            match = np.all(new @ F == y_t[None, :], axis=1)
            cum = n_succ + np.cumsum(match)
            crossed = np.nonzero(cum >= s_target)[0]
            if crossed.size:
                j = int(crossed[0])
                m += j + 1
                grand_total += j + 1
                succ_states.append(new[: j + 1][match[: j + 1]])
                n_succ = int(cum[j])
                break
            m += c
            succ_states.append(new[match])
            n_succ = int(cum[-1])
            grand_total += c
            if grand_total > max_total:
                raise AliveFilterAbortError(
                    f"total simulations exceeded {max_total:g} at interval {t}")
        if hard_threshold and m >= m_plus:
            records.append(IntervalRecord(-math.inf, int(m), 2))
            return finish(t + 1)
        if n_succ < s_target:  # unreachable for the pure alive filter
            records.append(IntervalRecord(-math.inf, int(m), 2))
            return finish(t + 1)
        log_p_t = math.log(s_target - 1) - math.log(m - 1)
        records.append(IntervalRecord(log_p_hat_t=log_p_t, m_t=int(m), k_t=1))
        pool = np.concatenate(succ_states)[: s_target - 1]
    return LikelihoodEstimate.from_intervals(records)


def alive_filter(model: StudyModel, theta, data: Dataset, s_target: int, rng: RngStream,
                 max_total: float = 1e9) -> LikelihoodEstimate:
    """Fully alive filter: unbounded trials per interval, estimate
    (s-1)/(M-1).  Exceeding ``max_total`` simulations raises rather than
    returning zero."""
    return _indicator_success_filter(model, theta, data, s_target, math.inf,
                                     rng.generator(), hard_threshold=False,
                                     max_total=max_total)


def alive_hard_threshold(model: StudyModel, theta, data: Dataset, s_target: int,
                         m_plus: int, rng: RngStream) -> LikelihoodEstimate:
    """Alive filter with a hard trial cap: hitting the cap zeroes the whole
    estimate.  Biased; included as the baseline it is."""
    return _indicator_success_filter(model, theta, data, s_target, m_plus,
                                     rng.generator(), hard_threshold=True)


def bootstrap_pf(model: StudyModel, theta, data: Dataset, n_particles: int,
                 proposal: str, rng: RngStream) -> LikelihoodEstimate:
    """Fixed-size bootstrap particle filter with multinomial resampling."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    gen = rng.generator()
    theta = np.asarray(theta, dtype=np.float64)
    F = data.obs_matrix
    spans = _interval_spans(model, data)
    if proposal == "bridge" and model.inferential_kind != "tau-leap":
        raise ValueError("bridge proposals require a tau-leap inferential model")
    records: list[IntervalRecord] = []
    states = None
    log_w = None
    for t in range(data.n_obs):
        if t == 0:
            anc = model.sample_x0(n_particles, gen)
        else:
            idx = gen.choice(n_particles, size=n_particles, p=_ancestor_probs(log_w))
            anc = states[idx]
        y_t = data.observations[t]
        if proposal == "forward":
            states = model.transition_batch(anc, theta, spans[t], gen)
            match = np.all(states @ F == y_t[None, :], axis=1)
            log_w = np.where(match, 0.0, -math.inf)
        else:
            states, log_w, _ = bridge_simulate_batch(
                model.network, anc, theta, y_t, F, spans[t], model.tau, gen)
        log_p_t = _log_mean(log_w, n_particles)
        records.append(IntervalRecord(log_p_hat_t=log_p_t, m_t=n_particles, k_t=1))
        if log_p_t == -math.inf:
            for _ in range(t + 1, data.n_obs):
                records.append(IntervalRecord(-math.inf, 0, 2, visited=False))
            return LikelihoodEstimate.from_intervals(records)
    return LikelihoodEstimate.from_intervals(records)


# -- estimator handles -------------------------------------------------------

def make_frankenfilter_estimator(model: StudyModel, config: FilterConfig,
                                 proposal: str = "forward"):
    def estimator(theta, data, rng):
        return frankenfilter_general(model, theta, data, config, proposal, rng)
    return estimator


def make_bootstrap_estimator(model: StudyModel, n_particles: int, proposal: str = "forward"):
    def estimator(theta, data, rng):
        return bootstrap_pf(model, theta, data, n_particles, proposal, rng)
    return estimator


def make_alive_estimator(model: StudyModel, s_target: int, max_total: float = 1e9):
    def estimator(theta, data, rng):
        return alive_filter(model, theta, data, s_target, rng, max_total=max_total)
    return estimator


def make_alive_hard_estimator(model: StudyModel, s_target: int, m_plus: int):
    def estimator(theta, data, rng):
        return alive_hard_threshold(model, theta, data, s_target, m_plus, rng)
    return estimator
