"""Command-line entry point.

Subcommands: simulate (dataset synthesis), filter (replicated likelihood
estimates), tune (stopping-rule advisor), pmmh (pseudo-marginal chains with
summary tables), verify (enumeration/bound oracle suites).  Every command is
seed-deterministic; outputs are CSV files with JSON sidecars/summaries.

Exit codes: 0 success, 2 configuration error, 3 estimator dead, 4
verification failure.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .core import Dataset, FilterConfig, FilterConfigError, RngStream, derive_substream
from .filters import (
    alive_filter,
    make_alive_estimator,
    make_alive_hard_estimator,
    make_bootstrap_estimator,
    make_frankenfilter_estimator,
)
from .models import (
    build_model,
    exact_death_estimator,
    load_dataset,
    preset_settings,
    save_dataset,
    synthesize_dataset,
)
from .oracle import enumerate_bernoulli_estimator
from .pmmh import ProposalConfig, ess_multivariate, ess_univariate, pmmh_run
from .tuning import (
    BracketError,
    bernstein_tail_bound,
    mplus_rule,
    success_target,
    solve_s_for_vrel,
    vrel_exact_obs,
    vrel_partial_estimate,
)

EXIT_CONFIG = 2
EXIT_DEAD = 3
EXIT_VERIFY = 4


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("FF_THREADS")
    if env is not None:
        return int(env)
    return os.cpu_count() or 1


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_CONFIG, f"cannot read config {path}: {exc}")


def _resolve_model_and_data(preset: str | None, data_path: str | None,
                            seed: int, config: dict):
    """Build (model, dataset, sidecar) from a preset name or a dataset file."""
    if data_path is not None:
        data, sidecar = load_dataset(Path(data_path))
        name = sidecar["model"]
        model = build_model(name, seir_a=config.get("seir_a"),
                            seir_m=config.get("seir_m"))
        model = dataclasses.replace(model, x0_spec=tuple(sidecar["x0"]))
        return model, data, sidecar
    if preset is None:
        _fail(EXIT_CONFIG, "either --preset or --data is required")
    settings = preset_settings(preset)
    settings.update({k: v for k, v in config.items() if k in settings})
    model = build_model(settings["model"], seir_a=config.get("seir_a"),
                        seir_m=config.get("seir_m"))
    model = dataclasses.replace(model, x0_spec=tuple(settings["x0"]))
    data = synthesize_dataset(model, settings, RngStream(seed).child(0))
    sidecar = {
        "model": settings["model"],
        "theta_true": list(settings["theta"]),
        "x0": list(settings["x0"]),
        "F": np.asarray(data.obs_matrix).tolist(),
        "seed": seed,
    }
    return model, data, sidecar


def _theta_from(option: str | None, sidecar: dict) -> np.ndarray:
    if option is not None:
        return np.array([float(v) for v in option.split(",")])
    theta = sidecar.get("theta_true")
    if theta is None:
        _fail(EXIT_CONFIG, "no --theta given and the dataset has no theta_true")
    return np.asarray(theta, dtype=np.float64)


def _make_estimator(kind: str, model, sidecar: dict, s: float, m_minus: int,
                    m_plus: float, n_particles: int, proposal: str):
    if kind == "ff":
        config = FilterConfig(s_target=s, m_minus=m_minus, m_plus=m_plus)
        return make_frankenfilter_estimator(model, config, proposal)
    if kind == "bspf":
        return make_bootstrap_estimator(model, n_particles, proposal)
    if kind == "alive":
        return make_alive_estimator(model, int(s))
    if kind in ("apf", "alive-hard"):
        if not math.isfinite(m_plus):
            _fail(EXIT_CONFIG, "the hard-threshold alive filter needs a finite --m-plus")
        return make_alive_hard_estimator(model, int(s), int(m_plus))
    if kind == "direct":
        if model.name != "death":
            _fail(EXIT_CONFIG, "the exact likelihood is available for the death model only")
        return exact_death_estimator(int(model.x0_fixed()[0]))
    _fail(EXIT_CONFIG, f"unknown estimator kind {kind!r}")


@click.group()
def main():
    """Adaptive particle filtering toolkit."""


@main.command()
@click.option("--preset", required=True, help="Named dataset configuration.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=".", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--estimate-pt", is_flag=True,
              help="Print per-interval transition-probability estimates at ground truth.")
@click.option("--pilot-s", type=int, default=5, show_default=True,
              help="Success threshold of the pilot run behind --estimate-pt.")
def simulate(preset, seed, out, config_path, estimate_pt, pilot_s):
    """Synthesize a dataset and write CSV + JSON sidecar."""
    config = _load_config(config_path)
    try:
        model, data, sidecar = _resolve_model_and_data(preset, None, seed, config)
    except (ValueError, FilterConfigError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{preset}.csv"
    save_dataset(data, path, sidecar)
    click.echo(f"wrote {path} ({data.n_obs} rows, {data.d_y} observation columns)")
    if estimate_pt:
        theta = np.asarray(sidecar["theta_true"])
        est = alive_filter(model, theta, data, pilot_s,
                           RngStream(seed).child(1))
        p_hats = []
        for t, rec in enumerate(est.per_interval):
            p_hat = (pilot_s - 1) / (rec.m_t - 1) if rec.visited and rec.m_t > 1 else 0.0
            p_hats.append(p_hat)
            click.echo(f"t={data.times[t]:g} p_hat={p_hat:.6g}")
        click.echo(f"mean p_hat={np.mean(p_hats):.6g}")


def _filter_one(estimator, theta, data, stream):
    return estimator(theta, data, stream)


@main.command("filter")
@click.option("--preset", default=None)
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--kind", type=click.Choice(["ff", "bspf", "alive", "apf", "direct"]),
              default="ff", show_default=True)
@click.option("--s", type=float, default=10.0, show_default=True)
@click.option("--m-minus", type=int, default=0, show_default=True)
@click.option("--m-plus", type=float, default=math.inf)
@click.option("--n-particles", type=int, default=100, show_default=True)
@click.option("--proposal", type=click.Choice(["forward", "bridge"]),
              default="forward", show_default=True)
@click.option("--theta", default=None, help="Comma-separated; defaults to theta_true.")
@click.option("--replicates", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=".", show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cmd_filter(preset, data_path, kind, s, m_minus, m_plus, n_particles, proposal,
               theta, replicates, seed, out, threads, config_path):
    """Run replicated likelihood estimates and write a per-replicate CSV."""
    config = _load_config(config_path)
    try:
        model, data, sidecar = _resolve_model_and_data(preset, data_path, seed, config)
        theta_vec = _theta_from(theta, sidecar)
        estimator = _make_estimator(kind, model, sidecar, s, m_minus, m_plus,
                                    n_particles, proposal)
    except (ValueError, FilterConfigError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    root = RngStream(seed, path=(1,))
    streams = [derive_substream(root, r) for r in range(replicates)]
    n_workers = _threads(threads)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        results = list(pool.map(lambda st: _filter_one(estimator, theta_vec, data, st),
                                streams))
    T = data.n_obs
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"filter_{kind}.csv"
    header = (["replicate", "log_p_hat", "total_simulations"]
              + [f"m_{t+1}" for t in range(T)] + [f"k_{t+1}" for t in range(T)])
    p_hats = np.array([math.exp(r.log_p_hat) if r.log_p_hat > -math.inf else 0.0
                       for r in results])
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for i, r in enumerate(results):
            row = [str(i), repr(float(r.log_p_hat)), str(r.total_simulations)]
            row += [str(rec.m_t) for rec in r.per_interval]
            row += [str(rec.k_t) for rec in r.per_interval]
            fh.write(",".join(row) + "\n")
        mean = float(p_hats.mean())
        v_rel = float(p_hats.var(ddof=1)) / mean**2 if mean > 0 else math.inf
        zero_fraction = float((p_hats == 0.0).mean())
        fh.write(f"# mean={mean!r} v_rel={v_rel!r} zero_fraction={zero_fraction!r}\n")
    summary = {"mean": mean, "v_rel": v_rel, "zero_fraction": zero_fraction,
               "replicates": replicates,
               "mean_total_simulations": float(np.mean([r.total_simulations for r in results]))}
    (out_dir / f"filter_{kind}_summary.json").write_text(json.dumps(summary, indent=2))
    click.echo(f"wrote {path}; mean={mean:.6g} v_rel={v_rel:.6g} "
               f"zero_fraction={zero_fraction:.3g}")


@main.command()
@click.option("--mode", type=click.Choice(["exact-obs", "partial-obs"]),
              default="exact-obs", show_default=True)
@click.option("--t-len", "T", type=int, default=None, help="Number of observations.")
@click.option("--v-rel", type=float, default=math.e - 1.0, show_default=True)
@click.option("--kappa", type=float, default=10.0, show_default=True)
@click.option("--p-min", type=float, default=None,
              help="Smallest per-interval probability; estimated by a pilot run if a dataset is given.")
@click.option("--preset", default=None)
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--s-lo", type=int, default=3, show_default=True)
@click.option("--s-hi", type=int, default=200, show_default=True)
@click.option("--replicates", type=int, default=20, show_default=True)
@click.option("--rounding", type=click.Choice(["ceiling", "nearest"]),
              default="ceiling", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=".", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def tune(mode, T, v_rel, kappa, p_min, preset, data_path, s_lo, s_hi, replicates,
         rounding, seed, out, config_path):
    """Recommend a success threshold and simulation cap; write the report JSON."""
    config = _load_config(config_path)
    evidence: dict = {}
    try:
        if mode == "exact-obs":
            if T is None:
                if preset is None and data_path is None:
                    _fail(EXIT_CONFIG, "exact-obs mode needs --t-len or a dataset")
                _, data, _ = _resolve_model_and_data(preset, data_path, seed, config)
                T = data.n_obs
            s_rec = success_target(T, v_rel, rounding)
            if p_min is None and (preset is not None or data_path is not None):
                model, data, sidecar = _resolve_model_and_data(preset, data_path,
                                                               seed, config)
                theta = np.asarray(sidecar["theta_true"])
                pilot_s = 5 * data.n_obs
                est = alive_filter(model, theta, data, pilot_s,
                                   RngStream(seed).child(2))
                p_hats = [(pilot_s - 1) / (rec.m_t - 1) for rec in est.per_interval
                          if rec.visited and rec.m_t > 1]
                evidence["per_interval_p_hat"] = p_hats
                p_min = min(p_hats)
            if p_min is None:
                _fail(EXIT_CONFIG, "exact-obs mode needs --p-min or a dataset for the pilot run")
            method = "exact-obs"
        else:
            model, data, sidecar = _resolve_model_and_data(preset, data_path, seed, config)
            theta = np.asarray(sidecar["theta_true"])
            stream = RngStream(seed, path=(3,))

            def evaluator(s_val):
                return vrel_partial_estimate(model, theta, data, s_val, replicates,
                                             derive_substream(stream, s_val))

            s_rec = solve_s_for_vrel(evaluator, v_rel, s_lo, s_hi)
            if p_min is None:
                pilot_s = 5 * data.n_obs
                est = alive_filter(model, theta, data, pilot_s,
                                   RngStream(seed).child(2))
                p_hats = [(pilot_s - 1) / (rec.m_t - 1) for rec in est.per_interval
                          if rec.visited and rec.m_t > 1]
                evidence["per_interval_p_hat"] = p_hats
                p_min = min(p_hats)
            method = "partial-obs"
        m_plus = mplus_rule(s_rec, p_min, kappa)
    except BracketError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (ValueError, FilterConfigError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except RuntimeError as exc:
        _fail(EXIT_DEAD, str(exc))
    report = {
        "s": s_rec,
        "m_plus": m_plus,
        "kappa": kappa,
        "v_rel_target": v_rel,
        "method": method,
        "p_min": p_min,
        "v_rel_predicted": vrel_exact_obs(s_rec, T) if mode == "exact-obs" else v_rel,
        "evidence": evidence,
    }
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "tuning_report.json"
    path.write_text(json.dumps(report, indent=2))
    click.echo(f"wrote {path}; s={s_rec} m_plus={m_plus}")


@main.command()
@click.option("--preset", default=None)
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--estimator", "kind",
              type=click.Choice(["direct", "ff", "bspf", "alive", "apf"]),
              default="ff", show_default=True)
@click.option("--s", type=float, default=10.0, show_default=True)
@click.option("--m-minus", type=int, default=0, show_default=True)
@click.option("--m-plus", type=float, default=math.inf)
@click.option("--n-particles", type=int, default=100, show_default=True)
@click.option("--proposal", type=click.Choice(["forward", "bridge"]),
              default="forward", show_default=True)
@click.option("--iterations", type=int, default=1000, show_default=True)
@click.option("--theta0", default=None, help="Comma-separated start point.")
@click.option("--gamma", type=float, default=None, help="Proposal scale (default 2.38^2/d).")
@click.option("--discard", type=float, default=0.1, show_default=True,
              help="Burn-in fraction discarded from the summary diagnostics.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=".", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def pmmh(preset, data_path, kind, s, m_minus, m_plus, n_particles, proposal,
         iterations, theta0, gamma, discard, seed, out, config_path):
    """Run a pseudo-marginal chain; write the trace CSV and a summary JSON."""
    config = _load_config(config_path)
    try:
        model, data, sidecar = _resolve_model_and_data(preset, data_path, seed, config)
        theta_start = _theta_from(theta0, sidecar)
        estimator = _make_estimator(kind, model, sidecar, s, m_minus, m_plus,
                                    n_particles, proposal)
        d = theta_start.shape[0]
        prop = ProposalConfig(np.eye(d), gamma=gamma)
        chain = pmmh_run(estimator, data, model.log_prior, theta_start, prop,
                         iterations, RngStream(seed, path=(4,)))
    except (ValueError, FilterConfigError) as exc:
        message = str(exc)
        code = EXIT_DEAD if "zero estimate" in message else EXIT_CONFIG
        _fail(code, message)
    except RuntimeError as exc:
        _fail(EXIT_DEAD, str(exc))

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(model.theta_names) or [f"theta{j+1}" for j in range(chain.draws.shape[1])]
    trace_path = out_dir / f"pmmh_{kind}.csv"
    with trace_path.open("w") as fh:
        fh.write(",".join(["iter"] + names + ["log_lik", "accepted", "cost"]) + "\n")
        for i in range(iterations):
            row = ([str(i)] + [repr(float(v)) for v in chain.draws[i]]
                   + [repr(float(chain.log_liks[i])), str(int(chain.accepted[i])),
                      str(int(chain.cost[i]))])
            fh.write(",".join(row) + "\n")

    burn = int(discard * iterations)
    draws = chain.draws[burn:]
    theta_true = sidecar.get("theta_true")
    summary = {
        "iterations": iterations,
        "discard_fraction": discard,
        "acceptance_rate": chain.acceptance_rate,
        "cpu_seconds": chain.seconds,
        "mean_cost_per_iteration": float(chain.cost.mean()),
        "parameters": {},
    }
    for j, name in enumerate(names):
        col = draws[:, j]
        entry = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)),
                 "ess": ess_univariate(col)}
        if theta_true is not None:
            entry["mean_over_true"] = float(col.mean() / theta_true[j])
            entry["sd_over_true"] = float(col.std(ddof=1) / theta_true[j])
        summary["parameters"][name] = entry
    try:
        mess = ess_multivariate(draws)
    except ValueError:
        mess = None
    summary["mess"] = mess
    if mess is not None and chain.seconds > 0:
        summary["ess_per_s"] = mess / chain.seconds
    summary_path = out_dir / f"pmmh_{kind}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2))
    click.echo(f"wrote {trace_path} and {summary_path}; "
               f"acceptance={chain.acceptance_rate:.3f}")


def _verify_unbiasedness(algorithm: str, tol: float):
    """Enumeration grid: returns (checks, failures) where a 'failure' means
    E[estimate] != p for the given stop-rule variant."""
    rows = []
    for p in (0.2, 0.5, 0.8):
        for s in (2, 3):
            for m_plus in range(s + 1, 9):
                expec_frac, _, _ = enumerate_bernoulli_estimator(p, s, 0, m_plus, algorithm)
                expec = float(expec_frac)
                rows.append((p, s, m_plus, expec, abs(expec - p) <= tol))
    return rows


@main.command()
@click.option("--include", "suites", multiple=True,
              type=click.Choice(["unbiasedness", "alg1", "prop4"]),
              help="Suites to run (default: unbiasedness and prop4).")
@click.option("--grid", type=click.Choice(["default", "empty"]), default="default",
              show_default=True)
@click.option("--threads", type=int, default=None)
def verify(suites, grid, threads):
    """Run the oracle suites; nonzero exit on any unexpected failure."""
    if grid == "empty":
        click.echo("empty grid: nothing to verify")
        return
    suites = suites or ("unbiasedness", "prop4")
    failed = False
    if "unbiasedness" in suites:
        rows = _verify_unbiasedness("alg3", 1e-12)
        bad = [r for r in rows if not r[4]]
        status = "PASS" if not bad else "FAIL"
        click.echo(f"[{status}] unbiasedness enumeration grid "
                   f"({len(rows)} points, {len(bad)} deviations)")
        failed = failed or bool(bad)
    if "alg1" in suites:
        rows = _verify_unbiasedness("alg1", 1e-12)
        biased = [r for r in rows if not r[4]]
        # Expected failure: the hard-threshold rule is biased low.
        status = "PASS" if biased else "FAIL"
        click.echo(f"[{status}] hard-threshold bias detected on "
                   f"{len(biased)}/{len(rows)} grid points (expected-failure suite)")
        failed = failed or not biased
    if "prop4" in suites:
        ok = True
        for kappa in (2.0, 3.0, 5.0, 10.0):
            for s in (5, 10, 20):
                bound = bernstein_tail_bound(s, 1.0, kappa)
                ok = ok and 0.0 <= bound <= 1.0 + 1e-15
        status = "PASS" if ok else "FAIL"
        click.echo(f"[{status}] capped-weight tail bounds lie in [0, 1]")
        failed = failed or not ok
    if failed:
        sys.exit(EXIT_VERIFY)


if __name__ == "__main__":
    main()
