import json
import os
import shutil
import subprocess
import sys

import pytest

from metaq_plots import (
    FigureRecipe,
    SchemaMismatch,
    UnknownFigure,
    build_figure,
    recipes_from_manifest,
    render,
)
from metaq_plots.recipes import MissingInput
from metaq_plots.render import EmptyDataWarning

EXPECTED_FIGURES = {
    "fig2b", "fig3a", "fig3b", "fig3c", "fig3d", "fig4d", "fig4e", "fig4f",
}


def run_plots(args):
    return subprocess.run(
        [sys.executable, "-m", "metaq_plots.cli", *args],
        capture_output=True,
        text=True,
    )


def test_all_declared_recipes_render(manifest_path, tmp_path):
    # acceptance: every figure declared in a completed manifest renders
    recipes = recipes_from_manifest(manifest_path, str(tmp_path))
    assert {r.figure_id for r in recipes} == EXPECTED_FIGURES
    for recipe in recipes:
        out = render(recipe)
        assert os.path.exists(out)
        assert os.path.getsize(out) > 0


@pytest.mark.parametrize("fig_id", ["fig3c", "fig4e"])
def test_log_tau_axis_on_histograms(manifest_path, tmp_path, fig_id):
    # acceptance: the time-since-last-jump histograms use a log horizontal axis
    (recipe,) = [
        r
        for r in recipes_from_manifest(manifest_path, str(tmp_path))
        if r.figure_id == fig_id
    ]
    assert recipe.log_tau_axis
    fig = build_figure(recipe)
    assert fig.axes[0].get_xscale() == "log"


def test_committor_curves_use_log_tau(manifest_path, tmp_path):
    (recipe,) = [
        r
        for r in recipes_from_manifest(manifest_path, str(tmp_path))
        if r.figure_id == "fig3d"
    ]
    fig = build_figure(recipe)
    ax = fig.axes[0]
    assert ax.get_xscale() == "log"
    assert len(ax.lines) >= 2  # dark and bright committors


def test_rerun_overwrites_idempotently(manifest_path, tmp_path):
    recipe = recipes_from_manifest(manifest_path, str(tmp_path))[0]
    first = render(recipe)
    size = os.path.getsize(first)
    second = render(recipe)
    assert first == second
    assert os.path.getsize(second) > 0
    assert size > 0


def _histogram_recipe(manifest_path, tmp_path, fig_id="fig3c"):
    (recipe,) = [
        r
        for r in recipes_from_manifest(manifest_path, str(tmp_path))
        if r.figure_id == fig_id
    ]
    return recipe


def test_schema_mismatch_names_offending_column(manifest_path, tmp_path):
    recipe = _histogram_recipe(manifest_path, tmp_path)
    src = recipe.inputs["histogram"]
    bad = tmp_path / "p_logtau.csv"
    lines = open(src).read().splitlines()
    lines[0] = lines[0].replace("density", "dnesity")
    bad.write_text("\n".join(lines) + "\n")
    broken = FigureRecipe(
        figure_id="fig3c", inputs={"histogram": str(bad)},
        output=str(tmp_path / "x.png"),
    )
    with pytest.raises(SchemaMismatch) as exc:
        render(broken)
    assert exc.value.column == "dnesity"
    assert "dnesity" in str(exc.value)


def test_empty_density_warns_but_renders(manifest_path, tmp_path):
    recipe = _histogram_recipe(manifest_path, tmp_path)
    empty = tmp_path / "p_logtau.csv"
    header = open(recipe.inputs["histogram"]).readline()
    empty.write_text(header)
    out = tmp_path / "empty.png"
    empty_recipe = FigureRecipe(
        figure_id="fig3c", inputs={"histogram": str(empty)}, output=str(out)
    )
    with pytest.warns(EmptyDataWarning):
        render(empty_recipe)
    assert out.exists() and out.stat().st_size > 0


def test_unknown_figure_id_rejected(manifest_path, tmp_path):
    manifest = json.loads(open(manifest_path).read())
    manifest["artifacts"][0] = dict(manifest["artifacts"][0], figure="fig9z")
    bad = tmp_path / "manifest.json"
    bad.write_text(json.dumps(manifest))
    with pytest.raises(UnknownFigure):
        recipes_from_manifest(str(bad), str(tmp_path))


def test_missing_input_rejected(manifest_path, tmp_path):
    recipe = FigureRecipe(
        figure_id="fig3b",
        inputs={"histogram": str(tmp_path / "nope.csv")},
        output=str(tmp_path / "x.png"),
    )
    with pytest.raises(MissingInput):
        render(recipe)


class TestCommandLine:
    def test_renders_all_figures(self, manifest_path, tmp_path):
        res = run_plots(["--manifest", manifest_path, "--outdir", str(tmp_path)])
        assert res.returncode == 0, res.stdout + res.stderr
        payload = json.loads(res.stdout)
        rendered = {f["figure"] for f in payload["figures"]}
        assert rendered == EXPECTED_FIGURES
        for f in payload["figures"]:
            assert os.path.exists(f["output"])

    def test_figure_selection_and_format(self, manifest_path, tmp_path):
        res = run_plots([
            "--manifest", manifest_path, "--figure", "fig3b",
            "--outdir", str(tmp_path), "--format", "pdf",
        ])
        assert res.returncode == 0, res.stdout + res.stderr
        payload = json.loads(res.stdout)
        assert [f["figure"] for f in payload["figures"]] == ["fig3b"]
        assert payload["figures"][0]["output"].endswith("fig3b.pdf")

    def test_schema_error_exits_nonzero(self, manifest_path, tmp_path):
        # corrupt one CSV in a copied artifact tree
        manifest = json.loads(open(manifest_path).read())
        arts = []
        for art in manifest["artifacts"]:
            dst = tmp_path / os.path.basename(os.path.dirname(art["path"]))
            dst.mkdir(exist_ok=True)
            new_path = dst / os.path.basename(art["path"])
            shutil.copy(art["path"], new_path)
            arts.append(dict(art, path=str(new_path)))
            if art.get("figure") == "fig3c":
                lines = open(new_path).read().splitlines()
                lines[0] = lines[0].replace("weight", "wait")
                new_path.write_text("\n".join(lines) + "\n")
        bad_manifest = tmp_path / "manifest.json"
        bad_manifest.write_text(json.dumps({"artifacts": arts}))
        res = run_plots([
            "--manifest", str(bad_manifest), "--outdir", str(tmp_path),
        ])
        assert res.returncode == 1
        payload = json.loads(res.stdout)
        assert payload["error"] == "SchemaMismatch"
        assert "wait" in payload["message"]
