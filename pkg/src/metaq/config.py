"""Central numerical tolerances and grid defaults.

All modules pull their default thresholds from a single :class:`Tolerances`
instance so that a change in one place propagates consistently.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across the package."""

    # dense linear algebra
    eig_residual: float = 1e-8        # relative eigenpair residual
    biorthonormal: float = 1e-8       # ||L^H R - I|| threshold (defectiveness)
    sylvester_residual: float = 1e-9  # relative Sylvester residual
    spectra_overlap: float = 1e-10    # pencil-singularity threshold on a_i + b_j
    reconstruction: float = 1e-7      # spectral reconstruction of A

    # quantum master equation
    hermitian: float = 1e-10          # Hermiticity of Hamiltonians
    zero_eigenvalue: float = 1e-9     # |lambda_1| bound for the stationary mode
    degenerate_steady: float = 1e-10  # second |lambda| below this => degenerate
    gap_warn_ratio: float = 10.0      # warn when |Re l_{m+1}/Re l_m| below this

    # reset structure / trajectories
    rank_one: float = 1e-10           # second singular value ratio for jumps
    state_norm: float = 1e-8          # unit-norm check on conditional states
    dark_rate: float = 1e-14          # total jump rate below this => dark
    dark_ball_radius: float = 0.05    # default trace-distance core-set radius
    elbow_threshold: float = 1.0      # default elbow-passing threshold
    arc_refine: float = 1e-4          # relative arc-length refinement target
    quadrature: float = 1e-6          # committor quadrature tolerance
    root_rtol: float = 1e-10          # relative time tolerance of jump roots

    # grids
    tau_points_per_decade: int = 64   # geometric grid for jumpless trajectories


DEFAULT = Tolerances()
