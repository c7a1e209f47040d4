"""Generate a complete artifact set once per session via the simulation CLI.

The plotting package consumes the CLI's external interface only: manifests
plus the CSV/JSON files they declare.
"""

import json
import subprocess
import sys

import pytest

FIG2 = ["-p", "omega1=1", "-p", "omega2=0.05", "-p", "kappa1=4"]
FIG4 = [*FIG2, "-p", "kappa2=1"]


def run_sim(args, outdir):
    res = subprocess.run(
        [sys.executable, "-m", "metaq.cli", *args, "--outdir", str(outdir)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stdout + res.stderr
    return json.loads(res.stdout)


@pytest.fixture(scope="session")
def manifest_path(tmp_path_factory):
    """Path to a merged manifest covering every declared figure id."""
    root = tmp_path_factory.mktemp("artifacts")
    artifacts = []
    commands = [
        (
            ["trajectory", "--preset", "three_state_1j", *FIG2,
             "--psi0", "1,0,0", "--t-final", "200", "--dt", "0.5", "--seed", "7"],
            "traj",
        ),
        (
            ["invariant-measure", "--preset", "three_state_1j", *FIG2,
             "--seed", "5", "--t-sim", "3000", "--burn-in", "100"],
            "im2",
        ),
        (
            ["committor", "--preset", "three_state_1j", *FIG2,
             "--sphere-grid", "8", "--tau-max", "500"],
            "com2",
        ),
        (
            ["invariant-measure", "--preset", "three_state_2j", *FIG4,
             "--seed", "5", "--t-sim", "3000", "--burn-in", "100"],
            "im4",
        ),
        (
            ["committor", "--preset", "three_state_2j", *FIG4,
             "--tau-max", "500"],
            "com4",
        ),
    ]
    for args, sub in commands:
        outdir = root / sub
        outdir.mkdir()
        artifacts.extend(run_sim(args, outdir)["artifacts"])
    merged = root / "manifest.json"
    merged.write_text(json.dumps({"artifacts": artifacts}, indent=2))
    return str(merged)
