"""Rendering of figure recipes to static images.

Each plot kind has one builder returning a matplotlib Figure; ``render``
saves it to the recipe's output path. Rendering is read-only over the
inputs and idempotent over the output.
"""

from __future__ import annotations

import json
import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .recipes import FigureRecipe, load_csv


class EmptyDataWarning(UserWarning):
    """The CSV had a valid header but no data rows; an empty plot is drawn."""


def _warn_if_empty(data: np.ndarray, path: str) -> bool:
    if data.shape[0] == 0:
        warnings.warn(f"{path}: no data rows, rendering an empty plot", EmptyDataWarning)
        return True
    return False


def _trajectory_figure(recipe: FigureRecipe) -> plt.Figure:
    header, data = load_csv(recipe.inputs["trajectory"])
    fig, ax = plt.subplots(figsize=(7.0, 2.8))
    if not _warn_if_empty(data, recipe.inputs["trajectory"]):
        t = data[:, 0]
        amps = data[:, 1::2] + 1j * data[:, 2::2]
        pops = np.abs(amps) ** 2
        for i in range(pops.shape[1]):
            ax.plot(t, pops[:, i], lw=0.8, label=rf"$|\psi_{i}|^2$")
        ax.set_xlim(t[0], t[-1])
        ax.legend(loc="center right", fontsize=7)
    if "jumps" in recipe.inputs:
        with open(recipe.inputs["jumps"]) as f:
            jumps = json.load(f)
        for tj in jumps.get("jump_times", []):
            ax.axvline(tj, color="0.8", lw=0.4, zorder=0)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel(r"$t$")
    ax.set_ylabel("population")
    return fig


def _hist_figure(recipe: FigureRecipe) -> plt.Figure:
    path = recipe.inputs["histogram"]
    header, data = load_csv(path)
    log_axis = recipe.kind == "logtau_hist"
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    if not _warn_if_empty(data, path):
        for part in np.unique(data[:, 0]):
            sel = data[data[:, 0] == part]
            lo, hi, dens = sel[:, 1], sel[:, 2], sel[:, 3]
            if log_axis:
                lo, hi = 10.0**lo, 10.0**hi
            edges = np.append(lo, hi[-1])
            ax.stairs(dens, edges, fill=True, alpha=0.45, label=f"partition {int(part)}")
        ax.legend(fontsize=7)
    if log_axis:
        ax.set_xscale("log")
        ax.set_xlabel(r"$\tau$")
        ax.set_ylabel(r"$p(\log_{10}\tau)$")
    else:
        ax.set_xlabel(r"$\ell$")
        ax.set_ylabel(r"$p(\ell)$")
    return fig


def _committor_figure(recipe: FigureRecipe) -> plt.Figure:
    path = recipe.inputs["committor"]
    header, data = load_csv(path)
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    if not _warn_if_empty(data, path):
        for part in np.unique(data[:, 0]):
            sel = data[data[:, 0] == part]
            for col in range(2, len(header)):
                ax.plot(
                    sel[:, 1],
                    sel[:, col],
                    lw=1.2,
                    label=f"{header[col]}, partition {int(part)}",
                )
        ax.legend(fontsize=7)
    ax.set_xscale("log")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel(r"$\tau$")
    ax.set_ylabel("committor")
    return fig


def _sphere_figure(recipe: FigureRecipe) -> plt.Figure:
    _, grid = load_csv(recipe.inputs["grid"])
    _, path_data = load_csv(recipe.inputs["path"])
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="3d")
    if not _warn_if_empty(grid, recipe.inputs["grid"]):
        sc = ax.scatter(
            grid[:, 2], grid[:, 3], grid[:, 4],
            c=grid[:, 5], cmap="viridis", vmin=0.0, vmax=1.0, s=8, alpha=0.7,
        )
        fig.colorbar(sc, ax=ax, shrink=0.7, label="committor")
    if path_data.shape[0]:
        ax.plot(
            path_data[:, 1], path_data[:, 2], path_data[:, 3],
            color="crimson", lw=1.8,
        )
    ax.set_xlabel(r"$a_0$")
    ax.set_ylabel(r"$a_1$")
    ax.set_zlabel(r"$a_2$")
    ax.set_box_aspect((1, 1, 1))
    return fig


_BUILDERS = {
    "trajectory": _trajectory_figure,
    "ell_hist": _hist_figure,
    "logtau_hist": _hist_figure,
    "committor": _committor_figure,
    "sphere": _sphere_figure,
}


def build_figure(recipe: FigureRecipe) -> plt.Figure:
    """Construct the matplotlib Figure for a recipe without saving it."""
    recipe.validate()
    fig = _BUILDERS[recipe.kind](recipe)
    fig.suptitle(recipe.figure_id, fontsize=9)
    return fig


def render(recipe: FigureRecipe) -> str:
    """Render a recipe to its output path and return the path."""
    fig = build_figure(recipe)
    try:
        fig.savefig(recipe.output, dpi=150, bbox_inches="tight")
    finally:
        plt.close(fig)
    return recipe.output
