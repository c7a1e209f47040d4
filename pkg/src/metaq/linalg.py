"""Dense complex linear algebra for small operators and superoperators.

Everything here is built for matrices up to 256x256 (Hilbert dimension 16):
general non-Hermitian eigendecompositions with a biorthonormal left/right
pairing, Sylvester solves, and spectral propagators exp(A t) v.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .config import DEFAULT, Tolerances


class NonConvergence(Exception):
    """The iterative eigenvalue reduction failed to converge."""


class DefectiveMatrix(Exception):
    """Biorthonormalisation failed: the matrix is (numerically) defective."""


class SingularPencil(Exception):
    """Spectra of A and -B overlap; the Sylvester equation is singular."""


@dataclass(frozen=True)
class EigenSystem:
    """Biorthonormal eigensystem of a general complex square matrix.

    ``values`` are sorted by descending real part (ties by descending
    imaginary part).  Columns of ``right`` are right eigenvectors; columns of
    ``left`` are left eigenvectors normalised so that
    ``left.conj().T @ right == I``.
    """

    values: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def coords(self, v: np.ndarray) -> np.ndarray:
        """Expansion coefficients of ``v`` in the right-eigenvector basis."""
        return self.left.conj().T @ v


def _sort_order(values: np.ndarray) -> np.ndarray:
    # descending real part, ties broken by descending imaginary part;
    # quantised so roundoff-level differences do not break ties
    scale = max(np.max(np.abs(values)), 1.0) if values.size else 1.0
    quantum = 1e-12 * scale
    re = np.round(values.real / quantum)
    im = np.round(values.imag / quantum)
    return np.lexsort((-im, -re))


def eig_general(a: np.ndarray, tol: Tolerances = DEFAULT) -> EigenSystem:
    """Eigendecomposition of a general square matrix with biorthonormal pairing.

    Raises
    ------
    NonConvergence
        If the underlying QR iteration fails.
    DefectiveMatrix
        If the right eigenvectors are too ill-conditioned to biorthonormalise
        (numerical Jordan block).
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")

    try:
        values, right = scipy.linalg.eig(a)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise NonConvergence(str(exc)) from exc

    order = _sort_order(values)
    values = values[order]
    right = right[:, order]

    try:
        right_inv = np.linalg.inv(right)
    except np.linalg.LinAlgError as exc:
        raise DefectiveMatrix("right eigenvectors are singular") from exc

    # rows of inv(right) are the dual (left) eigenvectors; for a defective
    # matrix the inversion loses precision, which we detect directly.
    left = right_inv.conj().T
    pairing = right_inv @ right
    if np.max(np.abs(pairing - np.eye(a.shape[0]))) > tol.biorthonormal:
        raise DefectiveMatrix(
            "biorthonormalisation residual exceeds tolerance "
            f"{tol.biorthonormal:g} (numerical Jordan block)"
        )

    scale = max(np.linalg.norm(a), 1.0)
    residual = np.linalg.norm(a @ right - right * values[None, :])
    if residual > tol.eig_residual * scale * a.shape[0]:
        raise DefectiveMatrix(
            f"eigenpair residual {residual:g} exceeds tolerance"
        )

    return EigenSystem(values=values, right=right, left=left)


def solve_sylvester(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    tol: Tolerances = DEFAULT,
    check: bool = True,
) -> np.ndarray:
    """Solve A X + X B = C for small dense complex matrices.

    Raises
    ------
    SingularPencil
        If some eigenvalue sum ``a_i + b_j`` vanishes within tolerance.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    c = np.asarray(c, dtype=complex)

    alpha = eig_general(a, tol).values
    beta = eig_general(b, tol).values
    gap = np.min(np.abs(alpha[:, None] + beta[None, :]))
    if gap < tol.spectra_overlap:
        raise SingularPencil(
            f"spectra of A and -B overlap within {tol.spectra_overlap:g} "
            f"(smallest |a_i + b_j| = {gap:g})"
        )

    x = scipy.linalg.solve_sylvester(a, b, c)
    if check:
        residual = np.linalg.norm(a @ x + x @ b - c)
        bound = tol.sylvester_residual * max(np.linalg.norm(c), 1e-300)
        if residual > bound:
            raise SingularPencil(
                f"Sylvester residual {residual:g} exceeds {bound:g}; "
                "the pencil is numerically singular"
            )
    return x


def propagate(
    a: np.ndarray | EigenSystem,
    v: np.ndarray,
    t: float,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Evaluate exp(A t) v through the spectral decomposition of A.

    ``a`` may be a matrix or a cached :class:`EigenSystem`.
    """
    if t < 0:
        raise ValueError("propagation time must be nonnegative")
    eig = a if isinstance(a, EigenSystem) else eig_general(a, tol)
    return eig.right @ (np.exp(eig.values * t) * eig.coords(v))


def propagate_many(eig: EigenSystem, v: np.ndarray, times: np.ndarray) -> np.ndarray:
    """exp(A t) v for an array of times; returns shape (len(times), dim)."""
    c = eig.coords(v)
    times = np.asarray(times, dtype=float)
    return np.exp(np.multiply.outer(times, eig.values)) * c[None, :] @ eig.right.T
