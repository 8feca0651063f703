"""The four study models (death, dimerisation, Lotka-Volterra, SEIR) with
priors, dataset synthesis and the death model's exact likelihood.

Datasets serialize to CSV (``time,y1,...,yd``) with a JSON sidecar holding
the generating settings, so the same synthetic dataset can be shared across
filter comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import betaln, gammaln

from .core import Dataset, IntervalRecord, LikelihoodEstimate, RngStream
from .mjp import ReactionNetwork, gillespie_simulate, tau_leap_batch

__all__ = [
    "StudyModel",
    "build_model",
    "synthesize_dataset",
    "preset_settings",
    "PRESETS",
    "exact_death_likelihood",
    "exact_death_estimator",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class StudyModel:
    """A reaction network packaged with prior, initial condition and the
    inferential transition kind ('exact-mjp' or tau-leap with fixed tau)."""

    name: str
    network: ReactionNetwork
    log_prior: Callable[[np.ndarray], float]
    x0_spec: tuple  # fixed vector, or per-component (lo, hi) discrete-uniform ranges
    inferential_kind: str  # "exact-mjp" | "tau-leap"
    tau: float | None = None
    theta_names: tuple[str, ...] = ()
    # Optional exact vectorised transition sampler (states, theta, dt, rng) -> states,
    # distributionally identical to Gillespie; used as the filters' fast path.
    fast_transition: Callable | None = None

    @property
    def d_x(self) -> int:
        return self.network.num_species

    def sample_x0(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n initial states; fixed components are broadcast."""
        cols = []
        for spec in self.x0_spec:
            if isinstance(spec, tuple):
                lo, hi = spec
                cols.append(rng.integers(lo, hi + 1, size=n))
            else:
                cols.append(np.full(n, int(spec), dtype=np.int64))
        return np.column_stack(cols).astype(np.int64)

    def x0_fixed(self) -> np.ndarray:
        if any(isinstance(s, tuple) for s in self.x0_spec):
            raise ValueError(f"model {self.name} has a random initial condition")
        return np.asarray(self.x0_spec, dtype=np.int64)

    def transition_batch(self, states: np.ndarray, theta: np.ndarray, dt: float,
                         rng: np.random.Generator) -> np.ndarray:
        """Propagate a batch of states over dt under the inferential model."""
        if self.fast_transition is not None:
            return self.fast_transition(states, theta, dt, rng)
        if self.inferential_kind == "tau-leap":
            return tau_leap_batch(self.network, states, theta, dt, self.tau, rng)
        out = np.empty_like(states)
        for i in range(states.shape[0]):
            out[i] = gillespie_simulate(self.network, states[i], theta, 0.0, dt, rng)
        return out


def _death_network() -> ReactionNetwork:
    def hazard(x, theta):
        return theta[0] * np.asarray(x, dtype=np.float64)

    return ReactionNetwork(num_species=1, num_reactions=1,
                           stoich=np.array([[-1]]), hazard=hazard, theta_dim=1)


def _death_fast_transition(states, theta, dt, rng):
    # Each individual survives the interval independently with prob e^{-theta dt};
    # this is the exact MJP transition of the pure death process.
    p = math.exp(-theta[0] * dt)
    return rng.binomial(np.maximum(states, 0), p).astype(np.int64)


def _dimer_network() -> ReactionNetwork:
    def hazard(x, theta):
        x = np.asarray(x, dtype=np.float64)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([theta[0] * x1 * (x1 - 1.0) / 2.0, theta[1] * x2], axis=-1)

    return ReactionNetwork(num_species=2, num_reactions=2,
                           stoich=np.array([[-2, 2], [1, -1]]), hazard=hazard, theta_dim=2)


def _lv_network() -> ReactionNetwork:
    def hazard(x, theta):
        x = np.asarray(x, dtype=np.float64)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([theta[0] * x1, theta[1] * x1 * x2, theta[2] * x2], axis=-1)

    return ReactionNetwork(num_species=2, num_reactions=3,
                           stoich=np.array([[1, -1, 0], [0, 1, -1]]), hazard=hazard, theta_dim=3)


def _seir_network(a: float, m: float) -> ReactionNetwork:
    # Species order (S, E, I, R); parameters theta = (beta, mu, alpha).
    S = np.array([
        [1, -1, -1, 0, 0, 0, 0],
        [0, 0, 1, -1, -1, 0, 0],
        [0, 0, 0, 0, 1, -1, -1],
        [0, 0, 0, 0, 0, 0, 1],
    ])

    def hazard(x, theta):
        x = np.asarray(x, dtype=np.float64)
        beta, mu, alpha = theta[0], theta[1], theta[2]
        s_t, e_t, i_t = x[..., 0], x[..., 1], x[..., 2]
        ones = np.ones_like(s_t)
        return np.stack([
            a * ones,
            m * s_t,
            beta * s_t * i_t,
            m * e_t,
            (mu / alpha) * e_t,
            m * i_t,
            (mu / (1.0 - alpha)) * i_t,
        ], axis=-1)

    return ReactionNetwork(num_species=4, num_reactions=7, stoich=S, hazard=hazard, theta_dim=3)


def _gamma_logpdf(x, shape, rate):
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1) * math.log(x) - rate * x


def _beta_logpdf(x, a, b):
    if not 0.0 < x < 1.0:
        return -math.inf
    return (a - 1) * math.log(x) + (b - 1) * math.log(1 - x) - betaln(a, b)


def build_model(name: str, seir_a: float | None = None, seir_m: float | None = None) -> StudyModel:
    """Construct a named study model with its prior and inferential kind.

    SEIR requires the immigration rate ``seir_a`` and natural death rate
    ``seir_m``; they are dataset-level constants with no sensible defaults.
    """
    if name == "death":
        def log_prior(theta):
            return _gamma_logpdf(theta[0], 10.0, 1000.0)
        return StudyModel(name, _death_network(), log_prior, x0_spec=(100,),
                          inferential_kind="exact-mjp", theta_names=("theta",),
                          fast_transition=_death_fast_transition)
    if name == "dimer":
        def log_prior(theta):
            return _gamma_logpdf(theta[0], 2.0, 500.0) + _gamma_logpdf(theta[1], 2.0, 2.0)
        return StudyModel(name, _dimer_network(), log_prior, x0_spec=(20, 1),
                          inferential_kind="tau-leap", tau=0.1,
                          theta_names=("theta1", "theta2"))
    if name == "lv":
        def log_prior(theta):
            return sum(_gamma_logpdf(t, 1.0, 1.0) for t in theta)
        return StudyModel(name, _lv_network(), log_prior, x0_spec=(50, 50),
                          inferential_kind="tau-leap", tau=0.1,
                          theta_names=("theta1", "theta2", "theta3"))
    if name == "seir":
        if seir_a is None or seir_m is None:
            raise ValueError("the SEIR model requires seir_a and seir_m (dataset constants)")
        def log_prior(theta):
            u = 0.0 if 0.0 < theta[2] < 1.0 else -math.inf
            return _beta_logpdf(theta[0], 2.0, 10.0) + _beta_logpdf(theta[1], 2.0, 5.0) + u
        return StudyModel(name, _seir_network(seir_a, seir_m), log_prior,
                          x0_spec=((10, 50), 0, (0, 20), 0),
                          inferential_kind="exact-mjp",
                          theta_names=("beta", "mu", "alpha"))
    raise ValueError(f"unknown model {name!r}")


# Named presets mirroring the study configurations: (model, theta, x0, dt, t_max, F columns).
PRESETS: dict[str, dict] = {
    "D50": dict(model="death", theta=(0.01,), x0=(100,), dt=1.0, t_max=50.0, obs=None),
    "D50mod": dict(model="death", theta=(0.01,), x0=(100,), dt=1.0, t_max=50.0, obs=None,
                   outlier_quantile=1e-4, outlier_tail=2),
    "P10a": dict(model="dimer", theta=(0.00332, 0.2), x0=(20, 1), dt=1.0, t_max=10.0, obs=None),
    "P10b": dict(model="dimer", theta=(0.00332, 0.2), x0=(200, 10), dt=1.0, t_max=10.0, obs=None),
    "P30a": dict(model="dimer", theta=(0.00332, 0.2), x0=(20, 1), dt=1.0, t_max=30.0, obs=None),
    "P30b": dict(model="dimer", theta=(0.00332, 0.2), x0=(200, 10), dt=1.0, t_max=30.0, obs=None),
    "P50a": dict(model="dimer", theta=(0.00332, 0.2), x0=(20, 1), dt=1.0, t_max=50.0, obs=None),
    "P50b": dict(model="dimer", theta=(0.00332, 0.2), x0=(200, 10), dt=1.0, t_max=50.0, obs=None),
    "LV20": dict(model="lv", theta=(0.5, 0.0025, 0.3), x0=(50, 50), dt=1.0, t_max=20.0, obs=None),
    "LV20prey": dict(model="lv", theta=(0.5, 0.0025, 0.3), x0=(50, 50), dt=1.0, t_max=20.0, obs=(0,)),
    "LV40": dict(model="lv", theta=(0.5, 0.0025, 0.3), x0=(50, 50), dt=0.5, t_max=20.0, obs=None),
    "LV40prey": dict(model="lv", theta=(0.5, 0.0025, 0.3), x0=(50, 50), dt=0.5, t_max=20.0, obs=(0,)),
}


def preset_settings(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}") from None


def _obs_matrix(d_x: int, obs) -> np.ndarray:
    if obs is None:
        return np.eye(d_x, dtype=np.int64)
    F = np.zeros((d_x, len(obs)), dtype=np.int64)
    for j, i in enumerate(obs):
        F[i, j] = 1
    return F


def synthesize_dataset(model: StudyModel, settings: dict, rng: RngStream) -> Dataset:
    """Simulate the exact MJP and record F'x at each observation time.

    Presets reproduce the study configurations with fresh draws.  The
    ``outlier_quantile`` setting replaces the final ``outlier_tail``
    observations by low conditional quantiles (death model only), producing
    the outlier variant used in the robustness experiments.
    """
    gen = rng.generator()
    theta = np.asarray(settings["theta"], dtype=np.float64)
    x0 = np.asarray(settings["x0"], dtype=np.int64)
    dt = float(settings["dt"])
    t_max = float(settings["t_max"])
    T = int(round(t_max / dt))
    F = _obs_matrix(model.d_x, settings.get("obs"))
    times = [dt * (i + 1) for i in range(T)]
    xs = []
    x = x0.copy()
    for _ in range(T):
        x = gillespie_simulate(model.network, x, theta, 0.0, dt, gen)
        xs.append(x.copy())
    xs = np.array(xs, dtype=np.int64)
    q = settings.get("outlier_quantile")
    if q is not None:
        if model.name != "death":
            raise ValueError("outlier replacement is defined for the death model only")
        tail = int(settings.get("outlier_tail", 2))
        p = math.exp(-theta[0] * dt)
        for i in range(T - tail, T):
            prev = int(x0[0]) if i == 0 else int(xs[i - 1, 0])
            xs[i, 0] = int(stats.binom.ppf(q, prev, p))
    obs = xs @ F
    return Dataset(times=tuple(times), observations=obs, obs_matrix=F)


def exact_death_likelihood(theta: float, data: Dataset, x0: int) -> float:
    """Exact log-likelihood of the death model: a product of binomial
    transition pmfs with survival probability e^{-theta dt} per interval.

    An increasing observation pair violates the binomial support and yields
    -inf.
    """
    if not data.complete:
        raise ValueError("exact death likelihood requires complete observations")
    xs = data.observations[:, 0]
    prev = np.concatenate([[x0], xs[:-1]])
    prev_t = np.concatenate([[0.0], data.times[:-1]])
    dts = np.asarray(data.times) - prev_t
    p = np.exp(-theta * dts)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = stats.binom.logpmf(xs, prev, p)
    return float(np.sum(log_terms))


def exact_death_estimator(x0: int):
    """The deterministic 'Direct' likelihood, packaged as an estimator handle."""

    def estimator(theta, data, rng):
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        log_l = exact_death_likelihood(float(theta[0]), data, x0)
        record = IntervalRecord(log_p_hat_t=log_l, m_t=0, k_t=0)
        return LikelihoodEstimate(log_p_hat=log_l, per_interval=(record,), total_simulations=0)

    return estimator


def save_dataset(data: Dataset, path: Path, sidecar: dict | None = None) -> None:
    """Write the CSV (time,y1,...,yd) and the JSON sidecar alongside it."""
    path = Path(path)
    d = data.d_y
    header = "time," + ",".join(f"y{j + 1}" for j in range(d))
    lines = [header]
    for t, row in zip(data.times, data.observations):
        lines.append(f"{t:.10g}," + ",".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    meta = dict(sidecar or {})
    meta["F"] = data.obs_matrix.tolist()
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(path: Path) -> tuple[Dataset, dict]:
    """Read a CSV + sidecar pair written by :func:`save_dataset`."""
    path = Path(path)
    lines = [ln for ln in path.read_text().strip().splitlines() if ln]
    times, obs = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        times.append(float(parts[0]))
        obs.append([int(v) for v in parts[1:]])
    meta = json.loads(path.with_suffix(".json").read_text())
    F = np.asarray(meta["F"], dtype=np.int64)
    return Dataset(times=tuple(times), observations=np.asarray(obs), obs_matrix=F), meta
