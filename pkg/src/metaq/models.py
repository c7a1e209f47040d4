"""Preset model builders.

Three-level presets are constructed in the rotated basis |0>, |1>, |2| in
which the no-jump generator G is real; the two-qubit presets use the product
basis ordered (|uu>, |ud>, |du>, |dd>).
"""

from __future__ import annotations

import numpy as np

from .qme import LindbladModel, build_liouvillian


class UnknownPreset(Exception):
    pass


class MissingParam(Exception):
    pass


def _ket(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def _op(dim: int, i: int, j: int) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=complex)
    m[i, j] = 1.0
    return m


def three_state_1j(omega1: float, omega2: float, kappa1: float) -> LindbladModel:
    """Driven three-level system with a single spontaneous-emission jump.

    In the rotated basis the Hamiltonian couplings carry a factor i, which
    makes G = -iH - J^dag J / 2 purely real.
    """
    h = 1j * omega1 * (_op(3, 0, 1) - _op(3, 1, 0))
    h += 1j * omega2 * (_op(3, 0, 2) - _op(3, 2, 0))
    j1 = np.sqrt(kappa1) * _op(3, 0, 1)
    return LindbladModel(dim=3, hamiltonian=h, jumps=(j1,), label="three_state_1j")


def three_state_2j(
    omega1: float, omega2: float, kappa1: float, kappa2: float
) -> LindbladModel:
    """Three-level variant with an extra dephasing-type jump onto |2>."""
    base = three_state_1j(omega1, omega2, kappa1)
    j2 = np.sqrt(kappa2) * _op(3, 2, 2)
    return LindbladModel(
        dim=3,
        hamiltonian=base.hamiltonian,
        jumps=base.jumps + (j2,),
        label="three_state_2j",
    )


def three_state_merged(
    omega1: float, omega2: float, kappa1: float, kappa2: float
) -> LindbladModel:
    """Non-reset variant: the two jumps combined into a single operator."""
    two = three_state_2j(omega1, omega2, kappa1, kappa2)
    return LindbladModel(
        dim=3,
        hamiltonian=two.hamiltonian,
        jumps=(two.jumps[0] + two.jumps[1],),
        label="three_state_merged",
    )


_SY = np.array([[0.0, -1j], [1j, 0.0]])
_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_EYE2 = np.eye(2)


def _two_qubit_hamiltonian(omega1: float, omega2: float, omega_r: float) -> np.ndarray:
    h = omega1 * np.kron(_SY, _EYE2) + omega2 * np.kron(_EYE2, _SY)
    if omega_r:
        h = h + omega_r * np.kron(_SX, _SY)
    return h


def _two_qubit_jumps(gamma1: float, gamma2: float) -> tuple[np.ndarray, np.ndarray]:
    # basis order: 0=|uu>, 1=|ud>, 2=|du>, 3=|dd>
    j1 = np.sqrt(gamma1) * _op(4, 1, 0)  # lower qubit 2 when qubit 1 is up
    j2 = np.sqrt(gamma2) * _op(4, 2, 3)  # raise qubit 2 when qubit 1 is down
    return j1, j2


def two_qubit_dfs(
    gamma1: float,
    gamma2: float,
    omega1: float,
    omega2: float,
    omega_r: float = 0.0,
) -> LindbladModel:
    """Two coupled qubits with a metastable decoherence-free subspace."""
    return LindbladModel(
        dim=4,
        hamiltonian=_two_qubit_hamiltonian(omega1, omega2, omega_r),
        jumps=_two_qubit_jumps(gamma1, gamma2),
        label="two_qubit_dfs",
    )


def two_qubit_superposed(
    gamma1: float,
    gamma2: float,
    omega1: float,
    omega2: float,
    omega_r: float = 0.0,
) -> LindbladModel:
    """Non-reset variant: the two qubit jumps superposed into one operator."""
    j1, j2 = _two_qubit_jumps(gamma1, gamma2)
    return LindbladModel(
        dim=4,
        hamiltonian=_two_qubit_hamiltonian(omega1, omega2, omega_r),
        jumps=(j1 - j2,),
        label="two_qubit_superposed",
    )


_PRESETS = {
    "three_state_1j": (three_state_1j, ("omega1", "omega2", "kappa1")),
    "three_state_2j": (three_state_2j, ("omega1", "omega2", "kappa1", "kappa2")),
    "three_state_merged": (
        three_state_merged,
        ("omega1", "omega2", "kappa1", "kappa2"),
    ),
    "two_qubit_dfs": (two_qubit_dfs, ("gamma1", "gamma2", "omega1", "omega2")),
    "two_qubit_superposed": (
        two_qubit_superposed,
        ("gamma1", "gamma2", "omega1", "omega2"),
    ),
}

_OPTIONAL = {"two_qubit_dfs": ("omega_r",), "two_qubit_superposed": ("omega_r",)}


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)


def build_preset(name: str, params: dict[str, float]) -> LindbladModel:
    """Build a preset model by name from a parameter map."""
    if name not in _PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {list(_PRESETS)}")
    builder, required = _PRESETS[name]
    missing = [p for p in required if p not in params]
    if missing:
        raise MissingParam(f"preset {name!r} is missing parameters {missing}")
    allowed = set(required) | set(_OPTIONAL.get(name, ()))
    extra = [p for p in params if p not in allowed]
    if extra:
        raise MissingParam(f"preset {name!r} got unexpected parameters {extra}")
    for p, v in params.items():
        if not np.isfinite(v):
            raise MissingParam(f"parameter {p} is not finite")
    return builder(**params)


# --- validation oracle: explicit 9x9 generator for the three-level model ----


def operator_basis_3state() -> list[np.ndarray]:
    """Nine Hermitian-structure basis operators used by the explicit matrix.

    Order: |2><2|, |1><1|, |0><0|, then the symmetric combinations
    |j><k| + |k><j| for (0,1), (0,2), (1,2), then the antisymmetric
    combinations |j><k| - |k><j| for the same pairs.
    """
    e = lambda i, j: _op(3, i, j)
    sym = lambda i, j: e(i, j) + e(j, i)
    asym = lambda i, j: e(i, j) - e(j, i)
    return [
        e(2, 2), e(1, 1), e(0, 0),
        sym(0, 1), sym(0, 2), sym(1, 2),
        asym(0, 1), asym(0, 2), asym(1, 2),
    ]


def explicit_liouvillian_3state(
    omega1: float, omega2: float, kappa1: float
) -> np.ndarray:
    """Explicit real 9x9 generator of the three-level model.

    Acts on the component vector v_i = Tr[b_i rho] with b_i from
    :func:`operator_basis_3state`.
    """
    o1, o2, k1 = omega1, omega2, kappa1
    return np.array(
        [
            [0, 0, 0, 0, -o2, 0, 0, 0, 0],
            [0, -k1, 0, -o1, 0, 0, 0, 0, 0],
            [0, k1, 0, o1, o2, 0, 0, 0, 0],
            [0, 2 * o1, -2 * o1, -k1 / 2, 0, o2, 0, 0, 0],
            [2 * o2, 0, -2 * o2, 0, 0, o1, 0, 0, 0],
            [0, 0, 0, -o2, -o1, -k1 / 2, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, -k1 / 2, 0, -o2],
            [0, 0, 0, 0, 0, 0, 0, 0, o1],
            [0, 0, 0, 0, 0, 0, o2, -o1, -k1 / 2],
        ],
        dtype=float,
    )


def liouvillian_in_operator_basis(model: LindbladModel) -> np.ndarray:
    """Conjugate the vectorised Liouvillian into the explicit operator basis.

    With T holding vec(b_j) as columns, W holding Tr[b_i .] as rows, and
    M = W T the (diagonal) Gram matrix, the component-space generator is
    W L T M^{-1}.
    """
    basis = operator_basis_3state()
    lv = build_liouvillian(model)
    t = np.column_stack([b.flatten(order="F") for b in basis])
    w = np.stack([b.T.flatten(order="F") for b in basis])
    m = w @ t
    return w @ lv @ t @ np.linalg.inv(m)
