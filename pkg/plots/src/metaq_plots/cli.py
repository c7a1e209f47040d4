"""Command-line entry point: render figures discovered from a manifest."""

from __future__ import annotations

import json
import sys

import click

from .recipes import MissingInput, SchemaMismatch, UnknownFigure, recipes_from_manifest
from .render import render


@click.command()
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Manifest JSON emitted by the simulation CLI (or a merged one).",
)
@click.option(
    "--figure",
    "figures",
    multiple=True,
    help="Render only these figure ids; repeatable. Default: all declared.",
)
@click.option("--outdir", type=click.Path(file_okay=False), default=".")
@click.option(
    "--format", "fmt", type=click.Choice(["png", "pdf", "svg"]), default="png"
)
def main(manifest, figures, outdir, fmt):
    try:
        recipes = recipes_from_manifest(manifest, outdir, fmt=fmt)
        if figures:
            declared = {r.figure_id for r in recipes}
            for f in figures:
                if f not in declared:
                    raise UnknownFigure(f)
            recipes = [r for r in recipes if r.figure_id in figures]
        rendered = [
            {"figure": r.figure_id, "output": render(r)} for r in recipes
        ]
    except (SchemaMismatch, UnknownFigure, MissingInput) as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)}, sys.stdout, indent=2
        )
        sys.stdout.write("\n")
        sys.exit(1)
    json.dump({"figures": rendered}, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
