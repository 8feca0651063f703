"""Shared domain types: splittable RNG streams, filter configuration and
likelihood-estimate records.

All types here are immutable after construction.  The only stateful object
in the package is the numpy ``Generator`` materialised from an
:class:`RngStream`, and each logical task owns exactly one of those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

__all__ = [
    "RngStream",
    "derive_substream",
    "FilterConfig",
    "FilterConfigError",
    "IntervalRecord",
    "LikelihoodEstimate",
    "Dataset",
    "LikelihoodEstimator",
]

_MAX_SEED = 2**64
_MAX_INDEX = 2**32


@dataclass(frozen=True)
class RngStream:
    """Address of a deterministic random substream.

    ``(root_seed, path)`` fully determines the draw sequence; streams with
    distinct paths are statistically independent.  Substreams are derived in
    O(1) via ``SeedSequence`` spawn keys, so replicate runs and chains can be
    parallelised without shared mutable state.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.root_seed < _MAX_SEED:
            raise ValueError("root_seed must fit in 64 bits")
        if any(not 0 <= i < _MAX_INDEX for i in self.path):
            raise ValueError("path indices must fit in 32 bits")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """Materialise the stateful generator for this stream address."""
        ss = np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def derive_substream(parent: RngStream, index: int) -> RngStream:
    """Return the child stream at ``index``; the parent is unchanged."""
    return parent.child(index)


class FilterConfigError(ValueError):
    """Raised when a filter configuration violates a validity constraint."""


@dataclass(frozen=True)
class FilterConfig:
    """Stopping-rule configuration for the adaptive filters.

    ``s_target`` is real-valued because the general algorithm admits
    arbitrary nonnegative success measures; the indicator case uses integer
    thresholds naturally.  ``m_plus`` may be ``math.inf``.

    ``success_sup`` declares the essential supremum of a single success
    increment; with ``m_minus == 0`` the threshold must exceed it, otherwise
    the estimator could be undefined (success reached after one simulation).
    """

    s_target: float
    m_minus: int = 0
    m_plus: float = math.inf
    success_kind: str = "indicator-match"
    success_sup: float = 1.0
    per_interval_s: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.s_target < 0:
            raise FilterConfigError("s_target must be nonnegative")
        if self.m_minus < 0:
            raise FilterConfigError("m_minus must be nonnegative")
        if not (self.m_plus > 0):
            raise FilterConfigError("m_plus must be positive")
        if not self.m_minus < self.m_plus:
            raise FilterConfigError("m_minus must be strictly below m_plus")
        if self.success_kind not in ("indicator-match", "weight-equals-success", "custom"):
            raise FilterConfigError(f"unknown success_kind {self.success_kind!r}")
        if self.m_minus == 0 and not self.s_target > self.success_sup:
            raise FilterConfigError(
                "with m_minus = 0, s_target must exceed the supremum of a "
                f"single success increment ({self.success_sup})"
            )

    def s_for(self, t_index: int) -> float:
        """Success threshold for interval ``t_index`` (0-based)."""
        if self.per_interval_s is not None:
            return self.per_interval_s[t_index]
        return self.s_target


@dataclass(frozen=True)
class IntervalRecord:
    """Per-interval filter diagnostics: estimate, trial count and stop-kind.

    ``k_t`` is 0 when the threshold was already met at ``m_minus``, 1 when it
    was crossed mid-loop, 2 when ``m_plus`` was reached without sufficient
    success.  Unvisited intervals (after a zero short-circuit) carry
    ``visited=False``.
    """

    log_p_hat_t: float
    m_t: int
    k_t: int
    visited: bool = True

    @property
    def p_hat_t(self) -> float:
        return math.exp(self.log_p_hat_t) if self.log_p_hat_t > -math.inf else 0.0


@dataclass(frozen=True)
class LikelihoodEstimate:
    """Product likelihood estimate with full per-interval diagnostics.

    The product is accumulated as a sum of per-interval logs; any zero
    interval short-circuits to ``-inf`` rather than propagating 0*nan.
    """

    log_p_hat: float
    per_interval: tuple[IntervalRecord, ...]
    total_simulations: int

    @classmethod
    def from_intervals(cls, records: Sequence[IntervalRecord]) -> "LikelihoodEstimate":
        total = sum(r.m_t for r in records)
        log_p = 0.0
        for r in records:
            if r.log_p_hat_t == -math.inf:
                log_p = -math.inf
                break
            log_p += r.log_p_hat_t
        return cls(log_p_hat=log_p, per_interval=tuple(records), total_simulations=total)

    @property
    def p_hat(self) -> float:
        return math.exp(self.log_p_hat) if self.log_p_hat > -math.inf else 0.0


def _as_2d_int(obs) -> np.ndarray:
    arr = np.asarray(obs, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observation times, integer observation vectors and observation matrix.

    ``complete`` is true iff the full state is observed (``F`` is the
    identity), in which case per-interval transition probabilities factorise.
    """

    times: tuple[float, ...]
    observations: np.ndarray  # (T, d_y) int
    obs_matrix: np.ndarray    # (d_x, d_y) int
    complete: bool = field(init=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        obs = _as_2d_int(self.observations)
        object.__setattr__(self, "observations", obs)
        F = np.asarray(self.obs_matrix, dtype=np.int64)
        if F.ndim == 1:
            F = F[:, None]
        object.__setattr__(self, "obs_matrix", F)
        if len(times) < 1:
            raise ValueError("at least one observation is required")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("observation times must be strictly increasing")
        if obs.shape[0] != len(times):
            raise ValueError("observations and times disagree in length")
        if obs.shape[1] != F.shape[1]:
            raise ValueError("observation dimension does not match obs_matrix")
        d_x, d_y = F.shape
        complete = d_y == d_x and bool(np.array_equal(F, np.eye(d_x, dtype=np.int64)))
        object.__setattr__(self, "complete", complete)

    @property
    def n_obs(self) -> int:
        return len(self.times)

    @property
    def d_y(self) -> int:
        return self.observations.shape[1]


class LikelihoodEstimator(Protocol):
    """Uniform callable contract every likelihood estimator implements.

    Deterministic given ``(theta, data, stream address)``, so PMMH can drive
    any filter (or an exact likelihood) interchangeably.
    """

    def __call__(self, theta: np.ndarray, data: Dataset, rng: RngStream) -> LikelihoodEstimate:
        ...
