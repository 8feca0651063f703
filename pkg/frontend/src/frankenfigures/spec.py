"""Figure specification type."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("bias-curve", "sweep", "posterior-density")


@dataclass
class FigureSpec:
    """A fully resolved request to render one figure.

    Parameters
    ----------
    kind : str
        One of ``"bias-curve"``, ``"sweep"`` or ``"posterior-density"``.
    manifest_path : Path
        Path to the JSON manifest that names the input files for this
        figure (see :mod:`frankenfigures.io` for the per-kind schemas).
    output_path : Path
        Where the rendered image is written.  The file extension selects
        the image format (``.png`` recommended).
    labels : dict
        Optional display overrides: ``title``, ``xlabel``, ``ylabel``.
    """

    kind: str
    manifest_path: Path
    output_path: Path
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; "
                             f"expected one of {KINDS}")
        self.manifest_path = Path(self.manifest_path)
        self.output_path = Path(self.output_path)
