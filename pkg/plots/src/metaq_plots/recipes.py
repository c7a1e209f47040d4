"""Figure recipes discovered from a metaq CLI manifest.

A recipe bundles one figure id with the input artifacts the manifest
assigned to it and an output image path. The CSV schema contract for each
artifact kind is frozen here; :func:`metaq_plots.render.render` enforces it
before touching any data.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np


class SchemaMismatch(Exception):
    """A CSV header does not match the CLI contract.

    ``column`` names the offending column (missing, unexpected, or
    misplaced).
    """

    def __init__(self, path: str, column: str, detail: str):
        self.path = path
        self.column = column
        super().__init__(f"{path}: {detail} column {column!r}")


class UnknownFigure(Exception):
    """Figure id is not one of the declared recipes."""


class MissingInput(Exception):
    """A recipe input file does not exist."""


# figure id -> plot kind
FIGURE_KINDS = {
    "fig2b": "trajectory",
    "fig3a": "sphere",
    "fig3b": "ell_hist",
    "fig4d": "ell_hist",
    "fig5d": "ell_hist",
    "fig3c": "logtau_hist",
    "fig4e": "logtau_hist",
    "fig5e": "logtau_hist",
    "fig6e": "logtau_hist",
    "fig3d": "committor",
    "fig4f": "committor",
    "fig6f": "committor",
}

# kinds whose horizontal axis is logarithmic in the time since the last jump
LOG_TAU_KINDS = {"logtau_hist", "committor"}

# plot kind -> {input role: artifact basename}
KIND_INPUTS = {
    "trajectory": {"trajectory": "trajectory.csv", "jumps": "trajectory_jumps.json"},
    "ell_hist": {"histogram": "p_ell.csv"},
    "logtau_hist": {"histogram": "p_logtau.csv"},
    "committor": {"committor": "committor_tau.csv"},
    "sphere": {"grid": "committor_sphere.csv", "path": "jumpless_path.csv"},
}

# roles that may be absent from the manifest without failing discovery
OPTIONAL_ROLES = {("trajectory", "jumps")}


@dataclass(frozen=True)
class FigureRecipe:
    """One figure to render: id, input artifact paths, output image path."""

    figure_id: str
    inputs: dict[str, str] = field(default_factory=dict)
    output: str = ""

    @property
    def kind(self) -> str:
        return FIGURE_KINDS[self.figure_id]

    @property
    def log_tau_axis(self) -> bool:
        return self.kind in LOG_TAU_KINDS

    def validate(self) -> None:
        if self.figure_id not in FIGURE_KINDS:
            raise UnknownFigure(self.figure_id)
        required = {
            role
            for role in KIND_INPUTS[self.kind]
            if (self.kind, role) not in OPTIONAL_ROLES
        }
        for role in required:
            if role not in self.inputs:
                raise MissingInput(
                    f"{self.figure_id}: no artifact for input {role!r}"
                )
        for role, path in self.inputs.items():
            if not os.path.exists(path):
                raise MissingInput(f"{self.figure_id}: {role} input {path!r} not found")


def recipes_from_manifest(
    manifest: dict | str, outdir: str, fmt: str = "png"
) -> list[FigureRecipe]:
    """Build a recipe for every figure id declared in a manifest.

    ``manifest`` is a manifest dict or a path to a manifest JSON file (or a
    merged one; only the ``artifacts`` list is read). Artifacts are matched
    to input roles by basename.
    """
    if isinstance(manifest, str):
        with open(manifest) as f:
            manifest = json.load(f)
    by_figure: dict[str, dict[str, str]] = {}
    for art in manifest["artifacts"]:
        fig = art.get("figure")
        if fig is None:
            continue
        if fig not in FIGURE_KINDS:
            raise UnknownFigure(fig)
        base = os.path.basename(art["path"])
        for role, expected in KIND_INPUTS[FIGURE_KINDS[fig]].items():
            if base == expected:
                by_figure.setdefault(fig, {})[role] = art["path"]
    recipes = []
    for fig in sorted(by_figure):
        recipe = FigureRecipe(
            figure_id=fig,
            inputs=by_figure[fig],
            output=os.path.join(outdir, f"{fig}.{fmt}"),
        )
        recipe.validate()
        recipes.append(recipe)
    return recipes


# ---------------------------------------------------------------------------
# CSV loading against the frozen schema contract


# basename -> (exact prefix columns, allow extra trailing columns)
_SCHEMAS = {
    "p_ell.csv": (["partition", "ell_lo", "ell_hi", "density", "weight"], False),
    "p_logtau.csv": (
        ["partition", "log10_tau_lo", "log10_tau_hi", "density", "weight"],
        False,
    ),
    "committor_tau.csv": (["partition", "tau"], True),
    "committor_sphere.csv": (["theta", "phi", "a0", "a1", "a2", "c_dark"], False),
    "jumpless_path.csv": (["tau", "a0", "a1", "a2", "ell"], False),
    "trajectory.csv": (["t"], True),
}


def _check_header(path: str, header: list[str]) -> None:
    expected, extra_ok = _SCHEMAS[os.path.basename(path)]
    for i, name in enumerate(expected):
        if i >= len(header):
            raise SchemaMismatch(path, name, "missing")
        if header[i] != name:
            raise SchemaMismatch(path, header[i], f"expected {name!r}, found")
    if not extra_ok and len(header) > len(expected):
        raise SchemaMismatch(path, header[len(expected)], "unexpected")
    if os.path.basename(path) == "committor_tau.csv":
        tail = header[2:]
        if len(tail) < 2:
            raise SchemaMismatch(path, "c_*", "missing")
        for name in tail:
            if not name.startswith("c_"):
                raise SchemaMismatch(path, name, "unexpected")
    if os.path.basename(path) == "trajectory.csv":
        tail = header[1:]
        if len(tail) == 0 or len(tail) % 2:
            raise SchemaMismatch(path, "re_psi_*/im_psi_*", "missing")
        for i, name in enumerate(tail):
            want = f"{'re' if i % 2 == 0 else 'im'}_psi_{i // 2}"
            if name != want:
                raise SchemaMismatch(path, name, f"expected {want!r}, found")


def load_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Header and float data of a contract CSV; raises SchemaMismatch."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(path, "<header>", "missing") from None
        _check_header(path, header)
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data
