"""Console entry points: one script per figure kind, taking --in/--out."""

from __future__ import annotations

import sys

import click

from .io import SchemaError
from .render import render
from .spec import FigureSpec

EXIT_SCHEMA = 2


def _run(kind, manifest, out, title, xlabel, ylabel):
    labels = {k: v for k, v in
              (("title", title), ("xlabel", xlabel), ("ylabel", ylabel))
              if v is not None}
    spec = FigureSpec(kind=kind, manifest_path=manifest, output_path=out,
                      labels=labels)
    try:
        path = render(spec)
    except SchemaError as exc:
        click.echo(f"schema error in column '{exc.column}': {exc}", err=True)
        sys.exit(EXIT_SCHEMA)
    click.echo(f"wrote {path}")


def _common(fn):
    fn = click.option("--ylabel", default=None, help="Y-axis label.")(fn)
    fn = click.option("--xlabel", default=None, help="X-axis label.")(fn)
    fn = click.option("--title", default=None, help="Figure title.")(fn)
    fn = click.option("--out", "out", type=click.Path(), required=True,
                      help="Output image path.")(fn)
    fn = click.option("--in", "manifest", type=click.Path(), required=True,
                      help="Input manifest JSON.")(fn)
    return fn


@click.command()
@_common
def bias_curve(manifest, out, title, xlabel, ylabel):
    """Estimator-mean-over-truth ratio versus simulation cap."""
    _run("bias-curve", manifest, out, title, xlabel, ylabel)


@click.command()
@_common
def sweep(manifest, out, title, xlabel, ylabel):
    """Sampling efficiency versus success target, with optional marker line."""
    _run("sweep", manifest, out, title, xlabel, ylabel)


@click.command()
@_common
def posterior_density(manifest, out, title, xlabel, ylabel):
    """Marginal posterior densities from a PMMH trace, with prior overlays."""
    _run("posterior-density", manifest, out, title, xlabel, ylabel)
