"""Readers and schema validation for the CLI file contracts.

Three kinds of input file are understood, matching exactly what the main
command-line tool writes:

* filter summary JSON — keys ``mean``, ``v_rel``, ``zero_fraction``,
  ``replicates``, ``mean_total_simulations``;
* PMMH summary JSON — keys ``iterations``, ``discard_fraction``,
  ``acceptance_rate``, ``cpu_seconds``, ``mean_cost_per_iteration``,
  ``parameters`` (and ``ess_per_s`` when the run recorded timings);
* PMMH trace CSV — header ``iter,<theta names...>,log_lik,accepted,cost``.

Each figure kind takes a small JSON *manifest* on ``--in`` that points at
the relevant files; the per-kind manifest schemas are documented on the
``load_*_manifest`` functions below.  Any deviation from a contract
raises :class:`SchemaError` naming the offending column or key.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class SchemaError(Exception):
    """An input file does not match the documented contract.

    Attributes
    ----------
    column : str
        Name of the offending column or key.
    """

    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


def _load_json(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found", column=str(path))
    text = path.read_text().strip()
    if not text:
        raise SchemaError(f"{path}: empty input", column="<empty file>")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})",
                          column="<invalid json>") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected a JSON object", column="<root>")
    return obj


def _require(obj, keys, path):
    for key in keys:
        if key not in obj:
            raise SchemaError(f"{path}: missing required key '{key}'",
                              column=key)


# ---------------------------------------------------------------------------
# CLI output files
# ---------------------------------------------------------------------------

FILTER_SUMMARY_KEYS = ("mean", "v_rel", "zero_fraction", "replicates",
                       "mean_total_simulations")
PMMH_SUMMARY_KEYS = ("iterations", "discard_fraction", "acceptance_rate",
                     "cpu_seconds", "mean_cost_per_iteration", "parameters")
TRACE_TAIL = ("log_lik", "accepted", "cost")


def read_filter_summary(path):
    """Read a filter summary JSON, validating the key set."""
    obj = _load_json(path)
    _require(obj, FILTER_SUMMARY_KEYS, path)
    return obj


def read_pmmh_summary(path):
    """Read a PMMH summary JSON, validating the key set."""
    obj = _load_json(path)
    _require(obj, PMMH_SUMMARY_KEYS, path)
    if not isinstance(obj["parameters"], dict) or not obj["parameters"]:
        raise SchemaError(f"{path}: 'parameters' must be a non-empty object",
                          column="parameters")
    for name, entry in obj["parameters"].items():
        for key in ("mean", "sd", "ess"):
            if key not in entry:
                raise SchemaError(
                    f"{path}: parameter '{name}' missing key '{key}'",
                    column=f"parameters.{name}.{key}")
    return obj


def read_pmmh_trace(path):
    """Read a PMMH trace CSV.

    Returns
    -------
    names : list of str
        Parameter column names, in file order.
    draws : ndarray, shape (n_iter, n_params)
        Parameter values per iteration.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found", column=str(path))
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty input, expected header "
                              f"'iter,<theta names>,log_lik,accepted,cost'",
                              column="iter") from None
        if not header or header[0] != "iter":
            raise SchemaError(f"{path}: first column must be 'iter', "
                              f"got {header[0] if header else '<none>'!r}",
                              column="iter")
        if len(header) < 5 or tuple(header[-3:]) != TRACE_TAIL:
            missing = next((c for c in TRACE_TAIL if c not in header[-3:]),
                           TRACE_TAIL[0])
            raise SchemaError(f"{path}: trailing columns must be "
                              f"'log_lik,accepted,cost', got {header[-3:]}",
                              column=missing)
        names = header[1:-3]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} fields, "
                    f"got {len(row)}", column=header[min(len(row),
                                                         len(header) - 1)])
            try:
                rows.append([float(v) for v in row[1:1 + len(names)]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-numeric value "
                                  f"({exc})", column=names[0]) from exc
    if not rows:
        raise SchemaError(f"{path}: no data rows", column="iter")
    return names, np.asarray(rows)


# ---------------------------------------------------------------------------
# Per-kind manifests
# ---------------------------------------------------------------------------

def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_bias_curve_manifest(path):
    """Load a bias-curve manifest.

    Schema::

        {"reference_probability": <float>,        # exact p for the ratio
         "series": [{"label": <str>,
                     "reference_probability": <float, optional override>,
                     "points": [{"m_plus": <num>,
                                 "summary": <filter summary path>}, ...]},
                    ...]}

    Each point's ``mean`` is divided by the series' reference probability
    (falling back to the top-level one) to give the plotted ratio;
    nothing else is computed here.  The per-series override lets one
    figure compare runs on datasets with different exact likelihoods.
    """
    path = Path(path)
    obj = _load_json(path)
    _require(obj, ("reference_probability", "series"), path)

    def _check_ref(value):
        if not isinstance(value, (int, float)) or value <= 0:
            raise SchemaError(f"{path}: 'reference_probability' must be a "
                              f"positive number",
                              column="reference_probability")
        return float(value)

    default_ref = _check_ref(obj["reference_probability"])
    if not isinstance(obj["series"], list) or not obj["series"]:
        raise SchemaError(f"{path}: 'series' must be a non-empty list",
                          column="series")
    series = []
    for entry in obj["series"]:
        _require(entry, ("label", "points"), path)
        p_ref = (_check_ref(entry["reference_probability"])
                 if "reference_probability" in entry else default_ref)
        if not entry["points"]:
            raise SchemaError(f"{path}: series {entry['label']!r} has no "
                              f"points", column="points")
        pts = []
        for pt in entry["points"]:
            _require(pt, ("m_plus", "summary"), path)
            summary = read_filter_summary(_resolve(path.parent, pt["summary"]))
            pts.append((float(pt["m_plus"]), summary["mean"] / p_ref))
        pts.sort(key=lambda t: t[0])
        series.append((entry["label"], pts))
    return series


def load_sweep_manifest(path):
    """Load a sweep manifest.

    Schema::

        {"points": [{"s": <num>, "summary": <pmmh summary path>}, ...],
         "vline": <num, optional>,        # e.g. a solved success target
         "vline_label": <str, optional>}

    The plotted efficiency is each summary's ``ess_per_s`` field.
    """
    path = Path(path)
    obj = _load_json(path)
    _require(obj, ("points",), path)
    if not isinstance(obj["points"], list) or not obj["points"]:
        raise SchemaError(f"{path}: 'points' must be a non-empty list",
                          column="points")
    pts = []
    for pt in obj["points"]:
        _require(pt, ("s", "summary"), path)
        summary = read_pmmh_summary(_resolve(path.parent, pt["summary"]))
        if "ess_per_s" not in summary:
            raise SchemaError(f"{pt['summary']}: missing key 'ess_per_s' "
                              f"(run recorded no timing)", column="ess_per_s")
        pts.append((float(pt["s"]), float(summary["ess_per_s"])))
    pts.sort(key=lambda t: t[0])
    vline = obj.get("vline")
    if vline is not None and not isinstance(vline, (int, float)):
        raise SchemaError(f"{path}: 'vline' must be a number", column="vline")
    return pts, vline, obj.get("vline_label")


def load_posterior_manifest(path):
    """Load a posterior-density manifest.

    Schema::

        {"trace": <pmmh trace csv path>,
         "summary": <pmmh summary path, optional>,  # for discard_fraction
         "discard_fraction": <float, optional, default 0>,
         "parameters": [<name>, ...],               # optional subset
         "priors": {<name>: {"dist": "uniform"|"normal"|"lognormal"|
                                      "exponential"|"gamma", ...params}}}

    ``discard_fraction`` taken from ``summary`` when given there.
    """
    path = Path(path)
    obj = _load_json(path)
    _require(obj, ("trace",), path)
    names, draws = read_pmmh_trace(_resolve(path.parent, obj["trace"]))
    discard = obj.get("discard_fraction", 0.0)
    if "summary" in obj:
        discard = read_pmmh_summary(
            _resolve(path.parent, obj["summary"]))["discard_fraction"]
    if not 0.0 <= float(discard) < 1.0:
        raise SchemaError(f"{path}: 'discard_fraction' must lie in [0, 1)",
                          column="discard_fraction")
    wanted = obj.get("parameters", names)
    for name in wanted:
        if name not in names:
            raise SchemaError(f"{path}: parameter '{name}' not in trace "
                              f"columns {names}", column=name)
    keep = draws[int(round(float(discard) * draws.shape[0])):, :]
    cols = {name: keep[:, names.index(name)] for name in wanted}
    priors = obj.get("priors", {})
    for name, prior in priors.items():
        if "dist" not in prior:
            raise SchemaError(f"{path}: prior for '{name}' missing 'dist'",
                              column=f"priors.{name}.dist")
    return cols, priors
