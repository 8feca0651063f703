"""Shared fixtures: synthetic files matching the CLI output contracts."""

import json

import numpy as np
import pytest


@pytest.fixture
def filter_summary_factory(tmp_path):
    """Write a filter summary JSON and return its path."""
    counter = [0]

    def make(mean, v_rel=1.0, zero_fraction=0.0, replicates=100,
             mean_total_simulations=5000.0, drop=()):
        obj = {"mean": mean, "v_rel": v_rel, "zero_fraction": zero_fraction,
               "replicates": replicates,
               "mean_total_simulations": mean_total_simulations}
        for key in drop:
            del obj[key]
        counter[0] += 1
        path = tmp_path / f"filter_summary_{counter[0]}.json"
        path.write_text(json.dumps(obj))
        return path

    return make


@pytest.fixture
def pmmh_summary_factory(tmp_path):
    """Write a PMMH summary JSON and return its path."""
    counter = [0]

    def make(ess_per_s=None, discard_fraction=0.2, drop=(),
             parameters=None):
        if parameters is None:
            parameters = {"theta_1": {"mean": 0.01, "sd": 0.002, "ess": 500.0}}
        obj = {"iterations": 10_000, "discard_fraction": discard_fraction,
               "acceptance_rate": 0.3, "cpu_seconds": 12.5,
               "mean_cost_per_iteration": 4000.0, "parameters": parameters}
        if ess_per_s is not None:
            obj["ess_per_s"] = ess_per_s
            obj["mess"] = ess_per_s * obj["cpu_seconds"]
        for key in drop:
            del obj[key]
        counter[0] += 1
        path = tmp_path / f"pmmh_summary_{counter[0]}.json"
        path.write_text(json.dumps(obj))
        return path

    return make


@pytest.fixture
def trace_factory(tmp_path):
    """Write a PMMH trace CSV and return its path."""
    counter = [0]

    def make(names=("theta_1",), n=400, seed=0, header=None):
        rng = np.random.default_rng(seed)
        counter[0] += 1
        path = tmp_path / f"pmmh_trace_{counter[0]}.csv"
        cols = list(names)
        if header is None:
            header = ["iter"] + cols + ["log_lik", "accepted", "cost"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            draws = np.exp(rng.normal(np.log(0.01), 0.15, size=(n, len(cols))))
            for i in range(n):
                row = ([str(i)] + [repr(float(v)) for v in draws[i]]
                       + [repr(float(-55.0 + rng.normal())),
                          str(rng.integers(2)), "4000"])
                fh.write(",".join(row) + "\n")
        return path

    return make
