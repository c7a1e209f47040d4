"""Batch experiment driver.

Each subcommand builds a model, runs one analysis, and writes CSV/JSON
artifacts into the output directory.  Stdout carries exactly one JSON
manifest listing every artifact with its content hash; all diagnostics go to
stderr.  Given the same configuration and seed, reruns produce byte-identical
files.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys

import click
import numpy as np

from . import models, qme, reset, stats, trajectories
from .config import DEFAULT


# --------------------------------------------------------------------------
# artifact plumbing


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Session:
    """Collects artifacts for one operation and prints the manifest."""

    def __init__(self, operation: str, outdir: str):
        self.operation = operation
        self.outdir = outdir
        self.artifacts: list[dict] = []
        os.makedirs(outdir, exist_ok=True)

    def add_csv(self, name, header, rows, figure=None):
        path = os.path.join(self.outdir, name)
        _write_csv(path, header, rows)
        self.artifacts.append(
            {"path": path, "columns": header, "figure": figure}
        )

    def add_json(self, name, payload, figure=None):
        path = os.path.join(self.outdir, name)
        _write_json(path, payload)
        self.artifacts.append({"path": path, "columns": None, "figure": figure})

    def emit(self):
        for a in self.artifacts:
            a["sha256"] = _sha256(a["path"])
        manifest = {
            "operation": self.operation,
            "outdir": self.outdir,
            "artifacts": self.artifacts,
        }
        json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _fail(exc: Exception) -> "NoReturn":
    json.dump(
        {"error": type(exc).__name__, "message": str(exc)},
        sys.stdout,
        indent=2,
    )
    sys.stdout.write("\n")
    sys.exit(1)


# --------------------------------------------------------------------------
# shared option handling


def _parse_params(pairs: tuple[str, ...]) -> dict[str, float]:
    out = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        if not _:
            raise click.BadParameter(f"expected key=value, got {pair!r}")
        out[key] = float(value)
    return out


def _build_model(preset, param, model_json):
    if model_json is not None:
        with open(model_json) as f:
            return qme.model_from_json(f.read())
    if preset is None:
        raise click.UsageError("provide --preset or --model-json")
    return models.build_preset(preset, _parse_params(param))


def _parse_state(text: str, dim: int) -> np.ndarray:
    try:
        v = np.array([complex(tok) for tok in text.split(",")], dtype=complex)
    except ValueError as exc:
        raise click.BadParameter(f"cannot parse state {text!r}: {exc}")
    if v.size != dim:
        raise click.BadParameter(
            f"state has {v.size} amplitudes, model dimension is {dim}"
        )
    norm = np.linalg.norm(v)
    if norm == 0:
        raise click.BadParameter("state vector is zero")
    return v / norm


def _figure_list(figures: str | None) -> list[str | None]:
    if not figures:
        return []
    return [f if f != "-" else None for f in figures.split(",")]


def _assign_figures(explicit: list, defaults: list) -> list:
    out = list(defaults)
    for i, f in enumerate(explicit):
        if i < len(out):
            out[i] = f
        else:
            out.append(f)
    return out


_model_options = [
    click.option("--preset", type=click.Choice(models.preset_names()), default=None),
    click.option(
        "--param",
        "-p",
        multiple=True,
        help="Model parameter as name=value; repeatable.",
    ),
    click.option(
        "--model-json",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="Load the model from a JSON file instead of a preset.",
    ),
    click.option(
        "--outdir",
        type=click.Path(file_okay=False),
        default=None,
        help="Output directory (default: $METAQ_OUTDIR or the current directory).",
    ),
    click.option(
        "--figures",
        default=None,
        help="Comma-separated figure ids assigned to the figure-backing "
        "artifacts in output order; '-' skips one slot.",
    ),
]


def _with_model_options(f):
    for opt in reversed(_model_options):
        f = opt(f)
    return f


def _outdir(outdir: str | None) -> str:
    return outdir or os.environ.get("METAQ_OUTDIR", ".")


# --------------------------------------------------------------------------
# operations (plain functions so that `run` can dispatch from a config file)


def op_spectrum(model, outdir, figures=()):
    session = _Session("spectrum", outdir)
    spec = qme.spectral_decompose(model)
    rows = [(v.real, v.imag) for v in spec.values]
    figs = _assign_figures(list(figures), [None])
    session.add_csv(
        "spectrum.csv", ["re_lambda", "im_lambda"], rows, figure=figs[0]
    )
    m = qme.select_m(spec)
    tau_slow, tau_fast = qme.metastable_timescales(spec, 2)
    session.add_json(
        "spectrum_report.json",
        {
            "dim": model.dim,
            "n_modes": int(spec.values.size),
            "m_selected": int(m),
            "tau_slow": tau_slow,
            "tau_fast": tau_fast,
        },
    )
    session.emit()


def _rho_columns(dim):
    header = ["t"]
    for i in range(dim):
        for j in range(dim):
            header += [f"re_rho_{i}_{j}", f"im_rho_{i}_{j}"]
    return header


def _rho_rows(times, rhos):
    for t, rho in zip(times, rhos):
        row = [t]
        for i in range(rho.shape[0]):
            for j in range(rho.shape[1]):
                row += [rho[i, j].real, rho[i, j].imag]
        yield row


def op_evolve(model, outdir, psi0, t_final, dt, figures=()):
    session = _Session("evolve", outdir)
    times = np.arange(0.0, t_final + 0.5 * dt, dt)
    rho0 = np.outer(psi0, psi0.conj())
    rhos = qme.evolve_qme(model, rho0, times)
    figs = _assign_figures(list(figures), [None])
    session.add_csv(
        "evolve.csv",
        _rho_columns(model.dim),
        _rho_rows(times, rhos),
        figure=figs[0],
    )
    session.emit()


def op_trajectory(model, outdir, psi0, t_final, dt, seed, figures=()):
    session = _Session("trajectory", outdir)
    gen = trajectories.effective_generator(model)
    rec = trajectories.simulate_trajectory(gen, psi0, t_final, dt, seed)
    header = ["t"]
    for i in range(model.dim):
        header += [f"re_psi_{i}", f"im_psi_{i}"]
    rows = (
        [t] + [x for a in psi for x in (a.real, a.imag)]
        for t, psi in zip(rec.grid_times, rec.grid_states)
    )
    figs = _assign_figures(list(figures), [_default_traj_fig(model)])
    session.add_csv("trajectory.csv", header, rows, figure=figs[0])
    session.add_json(
        "trajectory_jumps.json",
        {
            "seed": int(seed),
            "jump_times": [float(t) for t in rec.jump_times],
            "jump_indices": [int(k) for k in rec.jump_indices],
            "t_final": float(t_final),
        },
        figure=figs[0],
    )
    session.emit()


def _default_traj_fig(model):
    return "fig2b" if model.label == "three_state_1j" else None


def op_ensemble(model, outdir, psi0, t_final, dt, n_traj, seed, workers, figures=()):
    session = _Session("ensemble", outdir)
    gen = trajectories.effective_generator(model)
    records = trajectories.run_ensemble(
        gen, psi0, t_final, dt, n_traj, seed, workers=workers
    )
    mean, stderr = trajectories.ensemble_average(records)
    times = records[0].grid_times
    rho0 = np.outer(psi0, psi0.conj())
    rhos = qme.evolve_qme(model, rho0, times)

    header = [
        "t", "row", "col",
        "re_mean", "im_mean", "re_se", "im_se",
        "re_qme", "im_qme", "z_re", "z_im",
    ]

    def rows():
        d = model.dim
        for n, t in enumerate(times):
            for i in range(d):
                for j in range(d):
                    m_, s_, q_ = mean[n, i, j], stderr[n, i, j], rhos[n, i, j]
                    # floor guards exact zeros (t=0 and identically-zero entries)
                    z_re = (m_.real - q_.real) / max(s_.real, 1e-12)
                    z_im = (m_.imag - q_.imag) / max(s_.imag, 1e-12)
                    yield (
                        t, i, j,
                        m_.real, m_.imag, s_.real, s_.imag,
                        q_.real, q_.imag, z_re, z_im,
                    )

    figs = _assign_figures(list(figures), [None])
    session.add_csv("ensemble.csv", header, rows(), figure=figs[0])
    session.add_json(
        "ensemble_report.json",
        {"n_traj": n_traj, "seed": seed, "t_final": t_final, "dt": dt},
    )
    session.emit()


_INVARIANT_FIGS = {
    "three_state_1j": ["fig3b", "fig3c"],
    "three_state_2j": ["fig4d", "fig4e"],
    "two_qubit_dfs": ["fig5d", "fig5e"],
}

_COMMITTOR_FIGS = {
    "three_state_1j": ["fig3d"],
    "three_state_2j": ["fig4f"],
    "two_qubit_dfs": ["fig6f"],
}


def op_invariant_measure(
    model, outdir, t_sim=None, seed=0, n_runs=2, n_bins=40, burn_in=None, figures=()
):
    session = _Session("invariant-measure", outdir)
    gen = trajectories.effective_generator(model)
    rs = reset.detect_reset_structure(model)
    slow = gen.slow_scale()
    if t_sim is None:
        t_sim = 500.0 * slow if np.isfinite(slow) else 1e5
    if burn_in is None:
        burn_in = 10.0 * slow if np.isfinite(slow) else 0.0

    runs = []
    for r in range(n_runs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        start = r % len(rs.reset_points)
        events = reset.sample_semi_markov(gen, rs, start, t_sim, rng)
        runs.append((events, start, t_sim))

    tau_max = 200.0 * slow if np.isfinite(slow) else 1e5
    jts = {
        j: reset.jumpless_trajectory(gen, rs, j, tau_max)
        for j in range(len(rs.reset_points))
    }
    im = stats.invariant_measures(runs, jts, rs, n_bins=n_bins, t_burn=burn_in)

    figs = _assign_figures(
        list(figures), _INVARIANT_FIGS.get(model.label, [None, None])
    )

    def hist_rows(hists):
        for h in hists:
            for lo, hi, dens, w in zip(
                h.edges[:-1], h.edges[1:], h.density, h.weights
            ):
                yield (h.partition, lo, hi, dens, w)

    session.add_csv(
        "p_ell.csv",
        ["partition", "ell_lo", "ell_hi", "density", "weight"],
        hist_rows(im.ell),
        figure=figs[0],
    )
    session.add_csv(
        "p_logtau.csv",
        ["partition", "log10_tau_lo", "log10_tau_hi", "density", "weight"],
        hist_rows(im.log_tau),
        figure=figs[1],
    )
    session.add_json(
        "invariant_report.json",
        {
            "n_events": im.n_events,
            "n_runs": n_runs,
            "t_sim": t_sim,
            "burn_in": burn_in,
            "seed": seed,
        },
    )
    session.emit()


def op_committor(
    model, outdir, tau_max=None, points_per_decade=12, sphere_grid=0, figures=()
):
    session = _Session("committor", outdir)
    gen = trajectories.effective_generator(model)
    rs = reset.detect_reset_structure(model)
    slow = gen.slow_scale()
    if tau_max is None:
        tau_max = 100.0 * slow if np.isfinite(slow) else 1e4

    taus = np.geomspace(
        1e-2 * gen.fast_scale(),
        tau_max,
        max(int(np.log10(tau_max / (1e-2 * gen.fast_scale())) * points_per_decade), 8),
    )
    multi = len(rs.reset_points) > 1

    header = ["partition", "tau"]
    labels = [f"c_reset{j}" for j in range(len(rs.reset_points))]
    if multi:
        header += labels
    else:
        header += ["c_dark", "c_bright"]

    def rows():
        for j in range(len(rs.reset_points)):
            sf = trajectories.SurvivalFunction(gen, rs.reset_points[j])
            states = sf.states(taus)
            for tau, psi in zip(taus, states):
                if multi:
                    phase_map = {
                        k: labels[rs.jump_to_reset[k]] for k in range(rs.n_jumps)
                    }
                    c = reset.committor_reset(gen, rs, psi, phase_map)
                    total = sum(c.values())
                    yield (j, tau) + tuple(
                        c.get(lbl, 0.0) / total if total > 0 else 0.0
                        for lbl in labels
                    )
                else:
                    bc = reset.committor_single_reset(gen, rs, psi)
                    yield (j, tau, bc.c_dark, bc.c_bright)

    figs = _assign_figures(
        list(figures), _COMMITTOR_FIGS.get(model.label, [None])
    )
    session.add_csv("committor_tau.csv", header, rows(), figure=figs[0])

    if sphere_grid:
        if model.dim != 3 or len(rs.reset_points) != 1:
            raise click.UsageError(
                "--sphere-grid needs a three-dimensional single-reset model"
            )
        _sphere_committor(session, gen, rs, sphere_grid, figs)
    session.emit()


def _sphere_committor(session, gen, rs, n, figs):
    """Committor over real-amplitude states plus the jumpless path (fig3a)."""
    fig = figs[1] if len(figs) > 1 else "fig3a"
    thetas = np.linspace(0.0, np.pi, n)
    phis = np.linspace(0.0, 2.0 * np.pi, 2 * n, endpoint=False)

    def rows():
        for th in thetas:
            for ph in phis:
                a = np.array(
                    [
                        np.cos(th),
                        np.sin(th) * np.cos(ph),
                        np.sin(th) * np.sin(ph),
                    ],
                    dtype=complex,
                )
                bc = reset.committor_single_reset(gen, rs, a)
                yield (th, ph, a[0].real, a[1].real, a[2].real, bc.c_dark)

    session.add_csv(
        "committor_sphere.csv",
        ["theta", "phi", "a0", "a1", "a2", "c_dark"],
        rows(),
        figure=fig,
    )
    slow = gen.slow_scale()
    jt = reset.jumpless_trajectory(gen, rs, 0, 100.0 * slow)
    path = (
        (tau, s[0].real, s[1].real, s[2].real, ell)
        for tau, s, ell in zip(jt.taus, jt.states, jt.ell)
    )
    session.add_csv(
        "jumpless_path.csv", ["tau", "a0", "a1", "a2", "ell"], path, figure=fig
    )


def op_splitting(model, outdir, psi0, figures=()):
    session = _Session("splitting", outdir)
    gen = trajectories.effective_generator(model)
    rs = reset.detect_reset_structure(model)
    sp = reset.splitting_probabilities(gen, rs, psi0)
    session.add_json(
        "splitting.json",
        {
            "per_jump": [float(p) for p in sp.per_jump],
            "no_jump": float(sp.no_jump),
            "method": sp.method,
            "flagged": sp.flagged,
            "jump_to_reset": list(rs.jump_to_reset),
        },
    )
    session.emit()


def op_elbow(model, outdir, threshold, reset_index, figures=()):
    session = _Session("elbow", outdir)
    gen = trajectories.effective_generator(model)
    rs = reset.detect_reset_structure(model)
    rep = reset.elbow_analysis(gen, rs, threshold=threshold, reset_index=reset_index)
    session.add_json(
        "elbow.json",
        {
            "tau_elbow": rep.tau_elbow,
            "survival_at_elbow": rep.survival_at_elbow,
            "threshold": rep.threshold,
            "coeff_a": rep.coeff_a,
            "coeff_plus": rep.coeff_plus,
            "coeff_minus": rep.coeff_minus,
            "theta_a": rep.theta_a,
            "theta_plus": rep.theta_plus,
            "theta_minus": rep.theta_minus,
            "elbow_state": [float(x.real) for x in rep.elbow_state],
        },
    )
    session.emit()


def op_scaling(model_params, outdir, omega2_values, figures=()):
    """Slow-timescale scaling sweep over the weak-drive parameter."""
    session = _Session("scaling", outdir)
    rows = []
    for eps in omega2_values:
        params = dict(model_params)
        params["omega2"] = eps
        two = models.build_preset("three_state_2j", params)
        one_params = {k: v for k, v in params.items() if k != "kappa2"}
        one = models.build_preset("three_state_1j", one_params)
        spec = qme.spectral_decompose(one)
        lam2 = spec.values[1]
        gen1 = trajectories.effective_generator(one)
        rs1 = reset.detect_reset_structure(one)
        rep = reset.elbow_analysis(gen1, rs1, reset_index=0)
        gen = trajectories.effective_generator(two)
        rs = reset.detect_reset_structure(two)
        sp = reset.splitting_probabilities(gen, rs, rs.reset_points[0])
        cross = sum(
            float(sp.per_jump[k])
            for k in range(rs.n_jumps)
            if rs.jump_to_reset[k] != 0
        )
        rows.append(
            (eps, lam2.real, lam2.imag, rep.survival_at_elbow, rep.tau_elbow, cross)
        )
    figs = _assign_figures(list(figures), [None])
    session.add_csv(
        "scaling.csv",
        [
            "epsilon", "re_lambda2", "im_lambda2",
            "survival_at_elbow", "tau_elbow", "cross_jump_prob",
        ],
        rows,
        figure=figs[0],
    )
    session.emit()


# --------------------------------------------------------------------------
# click wiring


@click.group()
def cli():
    """Batch driver: model analyses in, CSV/JSON artifacts and a manifest out."""


@cli.command()
@_with_model_options
def spectrum(preset, param, model_json, outdir, figures):
    """Eigenvalues of the evolution generator, slowest first."""
    model = _build_model(preset, param, model_json)
    op_spectrum(model, _outdir(outdir), _figure_list(figures))


@cli.command()
@_with_model_options
@click.option("--psi0", required=True, help="Initial pure state, comma-separated amplitudes.")
@click.option("--t-final", type=float, required=True)
@click.option("--dt", type=float, required=True)
def evolve(preset, param, model_json, outdir, figures, psi0, t_final, dt):
    """Deterministic density-matrix evolution on a time grid."""
    model = _build_model(preset, param, model_json)
    op_evolve(
        model, _outdir(outdir), _parse_state(psi0, model.dim),
        t_final, dt, _figure_list(figures),
    )


@cli.command()
@_with_model_options
@click.option("--psi0", required=True)
@click.option("--t-final", type=float, required=True)
@click.option("--dt", type=float, required=True)
@click.option("--seed", type=int, required=True)
def trajectory(preset, param, model_json, outdir, figures, psi0, t_final, dt, seed):
    """Single stochastic trajectory with its jump record."""
    model = _build_model(preset, param, model_json)
    op_trajectory(
        model, _outdir(outdir), _parse_state(psi0, model.dim),
        t_final, dt, seed, _figure_list(figures),
    )


@cli.command()
@_with_model_options
@click.option("--psi0", required=True)
@click.option("--t-final", type=float, required=True)
@click.option("--dt", type=float, required=True)
@click.option("--n-traj", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--workers", type=int, default=1)
def ensemble(
    preset, param, model_json, outdir, figures, psi0, t_final, dt, n_traj, seed, workers
):
    """Trajectory ensemble mean compared against the deterministic evolution."""
    model = _build_model(preset, param, model_json)
    op_ensemble(
        model, _outdir(outdir), _parse_state(psi0, model.dim),
        t_final, dt, n_traj, seed, workers, _figure_list(figures),
    )


@cli.command(name="invariant-measure")
@_with_model_options
@click.option("--t-sim", type=float, default=None, help="Total simulated time per run.")
@click.option("--seed", type=int, required=True)
@click.option("--n-runs", type=int, default=2)
@click.option("--n-bins", type=int, default=40)
@click.option("--burn-in", type=float, default=None)
def invariant_measure(
    preset, param, model_json, outdir, figures, t_sim, seed, n_runs, n_bins, burn_in
):
    """Stationary histograms of arc length and time since the last jump."""
    model = _build_model(preset, param, model_json)
    op_invariant_measure(
        model, _outdir(outdir), t_sim, seed, n_runs, n_bins, burn_in,
        _figure_list(figures),
    )


@cli.command()
@_with_model_options
@click.option("--tau-max", type=float, default=None)
@click.option("--points-per-decade", type=int, default=12)
@click.option(
    "--sphere-grid",
    type=int,
    default=0,
    help="Also tabulate the committor over an N x 2N grid of real-amplitude states.",
)
def committor(
    preset, param, model_json, outdir, figures, tau_max, points_per_decade, sphere_grid
):
    """Committor along each jumpless trajectory (and optionally over a sphere)."""
    model = _build_model(preset, param, model_json)
    op_committor(
        model, _outdir(outdir), tau_max, points_per_decade, sphere_grid,
        _figure_list(figures),
    )


@cli.command()
@_with_model_options
@click.option("--psi0", required=True)
def splitting(preset, param, model_json, outdir, figures, psi0):
    """First-jump channel probabilities from a given state."""
    model = _build_model(preset, param, model_json)
    op_splitting(model, _outdir(outdir), _parse_state(psi0, model.dim))


@cli.command()
@_with_model_options
@click.option("--threshold", type=float, default=None)
@click.option("--reset-index", type=int, default=0)
def elbow(preset, param, model_json, outdir, figures, threshold, reset_index):
    """Slow-passage expansion of a jumpless trajectory."""
    model = _build_model(preset, param, model_json)
    op_elbow(model, _outdir(outdir), threshold, reset_index)


@cli.command()
@click.option("--omega1", type=float, default=1.0)
@click.option("--kappa1", type=float, default=4.0)
@click.option("--kappa2", type=float, default=0.2)
@click.option("--omega2-list", default="1e-2,1e-3,1e-4")
@click.option("--outdir", type=click.Path(file_okay=False), default=None)
@click.option("--figures", default=None)
def scaling(omega1, kappa1, kappa2, omega2_list, outdir, figures):
    """Sweep the weak drive and tabulate the slow-timescale observables."""
    values = [float(v) for v in omega2_list.split(",")]
    op_scaling(
        {"omega1": omega1, "kappa1": kappa1, "kappa2": kappa2},
        _outdir(outdir), values, _figure_list(figures),
    )


@cli.command()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="JSON document: {operation, preset|model_json, params, options}.",
)
def run(config):
    """Run one operation described by a JSON config document."""
    with open(config) as f:
        cfg = json.load(f)
    operation = cfg.get("operation")
    options = dict(cfg.get("options", {}))
    outdir = _outdir(options.pop("outdir", None))
    figures = _figure_list(options.pop("figures", None))

    if operation == "scaling":
        op_scaling(
            cfg.get("params", {}), outdir,
            [float(v) for v in options.pop("omega2_list")], figures,
        )
        return

    if "model_json" in cfg:
        with open(cfg["model_json"]) as f:
            model = qme.model_from_json(f.read())
    else:
        model = models.build_preset(cfg["preset"], cfg.get("params", {}))
    if "psi0" in options:
        options["psi0"] = _parse_state(options["psi0"], model.dim)

    dispatch = {
        "spectrum": op_spectrum,
        "evolve": op_evolve,
        "trajectory": op_trajectory,
        "ensemble": op_ensemble,
        "invariant-measure": op_invariant_measure,
        "committor": op_committor,
        "splitting": op_splitting,
        "elbow": op_elbow,
    }
    if operation not in dispatch:
        raise click.UsageError(f"unknown operation {operation!r}")
    dispatch[operation](model, outdir, figures=figures, **options)


def main():
    try:
        cli.main(standalone_mode=False)
    except (click.ClickException, click.UsageError) as exc:
        _fail(exc)
    except click.exceptions.Abort:
        sys.exit(130)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - contract: error JSON + exit 1
        _fail(exc)


if __name__ == "__main__":
    main()
