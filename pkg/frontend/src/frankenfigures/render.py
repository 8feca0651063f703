"""Rendering for the three figure kinds.

All figures are drawn with a fixed style sheet and written without
timestamps, so rendering is a pure function of the input files:
re-rendering the same spec yields byte-identical image content.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402
from scipy.stats import gaussian_kde  # noqa: E402

from .io import (SchemaError, load_bias_curve_manifest, load_posterior_manifest,
                 load_sweep_manifest)
from .spec import FigureSpec

RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.6,
    "legend.frameon": False,
    "svg.hashsalt": "frankenfigures",
}

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")
_MARKERS = ("o", "s", "^", "D", "v", "P")


def render(spec: FigureSpec):
    """Render one figure and write it to ``spec.output_path``.

    Returns the output path.  Raises :class:`SchemaError` when an input
    file does not match the documented contracts.
    """
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        try:
            if spec.kind == "bias-curve":
                _draw_bias_curve(ax, spec)
            elif spec.kind == "sweep":
                _draw_sweep(ax, spec)
            else:
                _draw_posterior_density(fig, ax, spec)
            fig.tight_layout()
            spec.output_path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(spec.output_path, metadata=_metadata(spec.output_path))
        finally:
            plt.close(fig)
    return spec.output_path


def _metadata(path):
    # Strip the library version stamp so identical inputs give identical
    # bytes even across point upgrades of the plotting library.
    if path.suffix.lower() == ".png":
        return {"Software": "frankenfigures"}
    if path.suffix.lower() == ".svg":
        return {"Date": None, "Creator": "frankenfigures"}
    return None


def _draw_bias_curve(ax, spec):
    series = load_bias_curve_manifest(spec.manifest_path)
    for i, (label, pts) in enumerate(series):
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, color=_COLORS[i % len(_COLORS)],
                marker=_MARKERS[i % len(_MARKERS)], label=label)
    ax.axhline(1.0, color="0.3", linewidth=0.8, linestyle="--")
    ax.set_xscale("log")
    ax.set_xlabel(spec.labels.get("xlabel", "simulation cap $m_+$"))
    ax.set_ylabel(spec.labels.get("ylabel",
                                  r"$\mathrm{E}[\hat P] \, / \, p$"))
    if "title" in spec.labels:
        ax.set_title(spec.labels["title"])
    ax.legend()


def _draw_sweep(ax, spec):
    pts, vline, vline_label = load_sweep_manifest(spec.manifest_path)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    ax.plot(xs, ys, color=_COLORS[0], marker=_MARKERS[0])
    if vline is not None:
        ax.axvline(vline, color=_COLORS[1], linewidth=1.0, linestyle=":",
                   label=vline_label)
        if vline_label:
            ax.legend()
    ax.set_xlabel(spec.labels.get("xlabel", r"success target $s$"))
    ax.set_ylabel(spec.labels.get("ylabel", "ESS per second"))
    if "title" in spec.labels:
        ax.set_title(spec.labels["title"])


_PRIOR_PDFS = {
    "uniform": lambda p: stats.uniform(p["low"], p["high"] - p["low"]),
    "normal": lambda p: stats.norm(p["mean"], p["sd"]),
    "lognormal": lambda p: stats.lognorm(p["sd_log"],
                                         scale=np.exp(p["mean_log"])),
    "exponential": lambda p: stats.expon(scale=1.0 / p["rate"]),
    "gamma": lambda p: stats.gamma(p["shape"], scale=1.0 / p["rate"]),
}


def _prior_pdf(name, prior):
    kind = prior["dist"]
    if kind not in _PRIOR_PDFS:
        raise SchemaError(f"prior for '{name}': unknown dist {kind!r}; "
                          f"expected one of {sorted(_PRIOR_PDFS)}",
                          column=f"priors.{name}.dist")
    try:
        return _PRIOR_PDFS[kind](prior)
    except KeyError as exc:
        raise SchemaError(f"prior for '{name}' ({kind}): missing parameter "
                          f"{exc.args[0]!r}",
                          column=f"priors.{name}.{exc.args[0]}") from exc


def _draw_posterior_density(fig, ax, spec):
    cols, priors = load_posterior_manifest(spec.manifest_path)
    names = list(cols)
    if len(names) > 1:
        # One panel per parameter, sharing nothing.
        fig.clf()
        axes = fig.subplots(1, len(names))
    else:
        axes = [ax]
    for i, (name, axis) in enumerate(zip(names, axes)):
        draws = cols[name]
        lo, hi = draws.min(), draws.max()
        pad = 0.15 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.1
        grid = np.linspace(lo - pad, hi + pad, 400)
        if hi > lo:
            density = gaussian_kde(draws)(grid)
        else:
            density = np.zeros_like(grid)
        axis.plot(grid, density, color=_COLORS[0], label="posterior")
        axis.fill_between(grid, density, color=_COLORS[0], alpha=0.2)
        if name in priors:
            pdf = _prior_pdf(name, priors[name]).pdf(grid)
            axis.plot(grid, pdf, color="0.4", linestyle="--", label="prior")
        axis.set_xlabel(name)
        if i == 0:
            axis.set_ylabel(spec.labels.get("ylabel", "density"))
            axis.legend()
    if "title" in spec.labels:
        fig.suptitle(spec.labels["title"])
