"""Quantum master equation: Liouvillian construction and metastability analysis.

The vectorisation convention is column-stacking throughout the package:
``vec(rho) = rho.flatten(order="F")`` and ``vec(A X B) = (B.T kron A) vec(X)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT, Tolerances
from .linalg import EigenSystem, eig_general, propagate_many


class DimensionMismatch(Exception):
    """Operator dimensions are inconsistent with the model."""


class DegenerateSteadyState(Exception):
    """More than one Liouvillian eigenvalue is zero within tolerance."""

    def __init__(self, message: str, candidates: np.ndarray):
        super().__init__(message)
        self.candidates = candidates


class NoGapWarning(UserWarning):
    """The requested slow-mode count has no clear spectral gap."""


@dataclass(frozen=True)
class LindbladModel:
    """System definition: Hamiltonian plus jump operators on a finite space."""

    dim: int
    hamiltonian: np.ndarray
    jumps: tuple[np.ndarray, ...]
    label: str = ""

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(
            self, "jumps", tuple(np.asarray(j, dtype=complex) for j in self.jumps)
        )
        if h.shape != (self.dim, self.dim):
            raise DimensionMismatch(
                f"Hamiltonian shape {h.shape} does not match dim {self.dim}"
            )
        if np.max(np.abs(h - h.conj().T)) > DEFAULT.hermitian:
            raise ValueError("Hamiltonian is not Hermitian within tolerance")
        for k, j in enumerate(self.jumps):
            if j.shape != (self.dim, self.dim):
                raise DimensionMismatch(
                    f"jump operator {k} has shape {j.shape}, expected "
                    f"({self.dim}, {self.dim})"
                )


def vectorise(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).flatten(order="F")


def devectorise(v: np.ndarray) -> np.ndarray:
    dim = round(np.sqrt(v.shape[0]))
    return np.asarray(v, dtype=complex).reshape((dim, dim), order="F")


def build_liouvillian(model: LindbladModel) -> np.ndarray:
    """Dense dim^2 x dim^2 matrix generating d vec(rho)/dt."""
    d = model.dim
    eye = np.eye(d)
    h = model.hamiltonian
    lv = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for j in model.jumps:
        k = j.conj().T @ j
        lv += np.kron(j.conj(), j)
        lv -= 0.5 * (np.kron(eye, k) + np.kron(k.T, eye))
    return lv


def apply_liouvillian(model: LindbladModel, rho: np.ndarray) -> np.ndarray:
    """Direct evaluation of the generator on a density matrix."""
    h = model.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for j in model.jumps:
        k = j.conj().T @ j
        out += j @ rho @ j.conj().T - 0.5 * (k @ rho + rho @ k)
    return out


def _hermitian_phase(m: np.ndarray) -> complex:
    """Phase e^{i theta} such that e^{i theta} m is (nearly) Hermitian.

    Valid for matrices satisfying m^dag = c m with |c| = 1, which holds for
    eigenmatrices at simple real eigenvalues of a Hermiticity-preserving
    generator.
    """
    v = m.flatten()
    vd = m.conj().T.flatten()
    c = np.vdot(v, vd) / np.vdot(v, v)
    c /= abs(c)
    return np.exp(1j * np.angle(c) / 2)


@dataclass(frozen=True)
class SpectralData:
    """Biorthonormal eigensystem of the Liouvillian, in matrix form.

    ``rights[j]`` and ``lefts[j]`` satisfy Tr[lefts[i] @ rights[j]] = delta_ij
    with the stationary mode scaled to Tr[rights[0]] = 1.
    """

    values: np.ndarray
    rights: tuple[np.ndarray, ...]
    lefts: tuple[np.ndarray, ...]
    dim: int

    @property
    def steady_state(self) -> np.ndarray:
        return self.rights[0]

    def overlaps(self, rho: np.ndarray) -> np.ndarray:
        """alpha_j = Tr[L_j rho] for all modes."""
        return np.array([np.trace(l @ rho) for l in self.lefts])


def spectral_decompose(
    model: LindbladModel, tol: Tolerances = DEFAULT
) -> SpectralData:
    """Full spectral decomposition of the Liouvillian superoperator."""
    lv = build_liouvillian(model)
    eig = eig_general(lv, tol)

    values = eig.values
    if abs(values[0]) > tol.zero_eigenvalue:
        raise ValueError(f"leading eigenvalue {values[0]} is not zero")
    if np.any(values.real > tol.zero_eigenvalue):
        raise ValueError("Liouvillian spectrum has a positive real part")
    near_zero = np.abs(values) < tol.degenerate_steady
    if np.count_nonzero(near_zero) > 1:
        raise DegenerateSteadyState(
            "steady state is not unique", candidates=values[near_zero]
        )

    rights = [devectorise(eig.right[:, j]) for j in range(values.size)]
    # Tr[L_i R_j] = vec(L_i^dag)^H vec(R_j), so L_i = devec(left col)^dag
    lefts = [devectorise(eig.left[:, j]).conj().T for j in range(values.size)]

    trace = np.trace(rights[0])
    rights[0] = rights[0] / trace
    lefts[0] = lefts[0] * trace
    return SpectralData(
        values=values, rights=tuple(rights), lefts=tuple(lefts), dim=model.dim
    )


def evolve_qme(
    model_or_spectral: LindbladModel | SpectralData,
    rho0: np.ndarray,
    times: np.ndarray,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Exact evolution rho(t) = sum_j e^{lambda_j t} Tr[L_j rho0] R_j.

    Returns an array of shape (len(times), dim, dim).
    """
    if isinstance(model_or_spectral, SpectralData):
        spec = model_or_spectral
    else:
        spec = spectral_decompose(model_or_spectral, tol)
    rho0 = np.asarray(rho0, dtype=complex)
    if abs(np.trace(rho0) - 1.0) > 1e-9:
        raise ValueError("initial state must have unit trace")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-9:
        raise ValueError("initial state must be Hermitian")

    alpha = spec.overlaps(rho0)
    times = np.asarray(times, dtype=float)
    phases = np.exp(np.multiply.outer(times, spec.values)) * alpha[None, :]
    stack = np.stack(spec.rights)  # (n_modes, d, d)
    return np.einsum("tj,jab->tab", phases, stack)


def metastable_timescales(spec: SpectralData, m: int) -> tuple[float, float]:
    """(tau_slow, tau_fast) = (-1/Re lambda_m, -1/Re lambda_{m+1})."""
    return -1.0 / spec.values[m - 1].real, -1.0 / spec.values[m].real


def select_m(spec: SpectralData, m_max: int | None = None) -> int:
    """Slow-mode count maximising the spectral gap ratio |Re l_{m+1}/Re l_m|."""
    re = spec.values.real
    n = re.size
    hi = n - 1 if m_max is None else min(m_max, n - 1)
    best_m, best_ratio = 2, 0.0
    for m in range(2, hi + 1):
        num, den = abs(re[m]), abs(re[m - 1])
        if den == 0.0:
            continue
        ratio = num / den
        if ratio > best_ratio:
            best_m, best_ratio = m, ratio
    return best_m


@dataclass(frozen=True)
class MetaDecomposition:
    """Two-phase metastability data: timescales, extremal states, POVM pair.

    With the fixed naming convention, phase A ("bright") is the one with the
    larger jump activity.  ``classical`` is False when m > 2, in which case
    only the timescales are populated.
    """

    m: int
    tau_slow: float
    tau_fast: float
    classical: bool
    rho_a: np.ndarray | None = None
    rho_b: np.ndarray | None = None
    p_a: np.ndarray | None = None
    p_b: np.ndarray | None = None
    alpha_max: float = field(default=np.nan)
    alpha_min: float = field(default=np.nan)


def _activity(model: LindbladModel, rho: np.ndarray) -> float:
    return sum(
        float(np.real(np.trace(j @ rho @ j.conj().T))) for j in model.jumps
    )


def metastable_analysis(
    model: LindbladModel,
    spec: SpectralData,
    m: int = 2,
    tol: Tolerances = DEFAULT,
) -> MetaDecomposition:
    """Extract extremal metastable states and the POVM pair for m = 2.

    For m > 2 the classical construction does not apply; only the timescales
    are returned (``classical=False``).
    """
    tau_s, tau_f = metastable_timescales(spec, m)
    if tau_s <= tau_f:
        raise ValueError("no spectral gap: tau_slow <= tau_fast")
    ratio = abs(spec.values[m].real) / abs(spec.values[m - 1].real)
    if ratio < tol.gap_warn_ratio:
        warnings.warn(
            f"gap ratio {ratio:.2f} below {tol.gap_warn_ratio}", NoGapWarning
        )
    if m != 2:
        return MetaDecomposition(
            m=m, tau_slow=tau_s, tau_fast=tau_f, classical=False
        )

    lam2 = spec.values[1]
    if abs(lam2.imag) > 1e-9 * max(abs(lam2.real), 1e-30):
        raise ValueError("lambda_2 is not real; two-phase construction fails")

    phase = _hermitian_phase(spec.lefts[1])
    l2 = phase * spec.lefts[1]
    l2 = 0.5 * (l2 + l2.conj().T)
    r2 = spec.rights[1] / phase

    evals = np.linalg.eigvalsh(l2)
    a_min, a_max = float(evals[0]), float(evals[-1])
    rho_ss = spec.steady_state
    eye = np.eye(spec.dim)

    rho_a = rho_ss + a_max * r2
    rho_b = rho_ss + a_min * r2
    p_a = (l2 - a_min * eye) / (a_max - a_min)
    p_b = eye - p_a

    # fixed convention: phase A is the brighter (more active) one
    if _activity(model, rho_a) < _activity(model, rho_b):
        rho_a, rho_b = rho_b, rho_a
        p_a, p_b = p_b, p_a

    return MetaDecomposition(
        m=2,
        tau_slow=tau_s,
        tau_fast=tau_f,
        classical=True,
        rho_a=rho_a,
        rho_b=rho_b,
        p_a=p_a,
        p_b=p_b,
        alpha_max=a_max,
        alpha_min=a_min,
    )


def committor_qme(meta: MetaDecomposition, psi: np.ndarray) -> tuple[float, float]:
    """(C_A, C_B) for a pure state from the POVM pair; sums to one exactly."""
    if not meta.classical:
        raise ValueError("committor requires the two-phase decomposition")
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-8:
        raise ValueError("state must be normalised")
    c_a = float(np.clip(np.real(np.vdot(psi, meta.p_a @ psi)), 0.0, 1.0))
    return c_a, 1.0 - c_a


@dataclass(frozen=True)
class DfsCoordinates:
    """Populations and coherence of a state on a two-dimensional subspace."""

    p1: float
    p2: float
    z: complex


def dfs_coordinates(
    rho: np.ndarray, basis: tuple[np.ndarray, np.ndarray]
) -> DfsCoordinates:
    """Extract (p1, p2, z) = (<b1|rho|b1>, <b2|rho|b2>, <b1|rho|b2>)."""
    b1, b2 = (np.asarray(b, dtype=complex) for b in basis)
    if abs(np.vdot(b1, b2)) > 1e-8:
        raise ValueError("basis states must be orthonormal")
    return DfsCoordinates(
        p1=float(np.real(np.vdot(b1, rho @ b1))),
        p2=float(np.real(np.vdot(b2, rho @ b2))),
        z=complex(np.vdot(b1, rho @ b2)),
    )


# --- model (de)serialisation ------------------------------------------------
#
# JSON schema: {"dim": int, "label": str,
#               "H": [[[re, im], ...] ...],
#               "jumps": [[[[re, im], ...] ...], ...]}


def _matrix_to_json(m: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def _matrix_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def model_to_json(model: LindbladModel) -> str:
    doc = {
        "dim": model.dim,
        "label": model.label,
        "H": _matrix_to_json(model.hamiltonian),
        "jumps": [_matrix_to_json(j) for j in model.jumps],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> LindbladModel:
    doc = json.loads(text)
    return LindbladModel(
        dim=int(doc["dim"]),
        hamiltonian=_matrix_from_json(doc["H"]),
        jumps=tuple(_matrix_from_json(j) for j in doc["jumps"]),
        label=doc.get("label", ""),
    )
