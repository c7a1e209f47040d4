"""Quantum-jump Monte Carlo unravelling for arbitrary Lindblad models.

Jump times are drawn by inverse transform on the exact spectral survival
function S(t, psi) = ||exp(G t) psi||^2, eliminating time-step bias.  Between
jumps the conditional state follows the normalised deterministic flow under G.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .config import DEFAULT, Tolerances
from .linalg import EigenSystem, eig_general
from .qme import LindbladModel


class AllRatesZero(Exception):
    """Total jump rate vanished: the state is dark."""


class RootNotBracketed(Exception):
    """The survival function is not monotone; numerical fault."""


class EmptyEnsemble(Exception):
    pass


@dataclass(frozen=True)
class EffectiveGenerator:
    """No-jump generator G = -i(H - i/2 sum_k J_k^dag J_k) with cached spectrum."""

    model: LindbladModel
    matrix: np.ndarray
    eig: EigenSystem

    @property
    def dim(self) -> int:
        return self.model.dim

    def fast_scale(self) -> float:
        """Inverse of the largest eigenvalue magnitude; shortest time scale."""
        return 1.0 / max(np.max(np.abs(self.eig.values)), 1e-300)

    def slow_scale(self) -> float:
        """Inverse of the smallest decay rate among decaying modes."""
        rates = -self.eig.values.real
        rates = rates[rates > 1e-300]
        if rates.size == 0:
            return np.inf
        return 1.0 / np.min(rates)


def effective_generator(
    model: LindbladModel, tol: Tolerances = DEFAULT
) -> EffectiveGenerator:
    g = -1j * model.hamiltonian
    for j in model.jumps:
        g -= 0.5 * (j.conj().T @ j)
    eig = eig_general(g, tol)
    if np.any(eig.values.real > 1e-10):
        raise ValueError("effective generator has a growing mode")
    return EffectiveGenerator(model=model, matrix=g, eig=eig)


class SurvivalFunction:
    """Spectral representation of S(t) = ||exp(G t) psi0||^2.

    Precomputes pairwise mode coefficients so each evaluation costs O(dim^2).
    """

    def __init__(self, gen: EffectiveGenerator, psi0: np.ndarray):
        c = gen.eig.coords(np.asarray(psi0, dtype=complex))
        overlaps = gen.eig.right.conj().T @ gen.eig.right
        coef = np.conj(c)[:, None] * c[None, :] * overlaps
        rates = np.conj(gen.eig.values)[:, None] + gen.eig.values[None, :]
        self._coef = coef.flatten()
        self._rates = rates.flatten()
        # modes with Re = 0 survive forever (dark component)
        alive = self._rates.real < -1e-12
        self.survival_infinity = float(
            np.real(np.sum(self._coef[~alive]))
        )
        self._gen = gen
        self._psi0 = np.asarray(psi0, dtype=complex)

    def __call__(self, t: float) -> float:
        return float(np.real(self._coef @ np.exp(self._rates * t)))

    def many(self, times: np.ndarray) -> np.ndarray:
        return np.exp(np.multiply.outer(np.asarray(times), self._rates)) @ self._coef

    def states(self, times: np.ndarray) -> np.ndarray:
        """Normalised conditional states along the no-jump flow, (n, dim)."""
        eig = self._gen.eig
        c = eig.coords(self._psi0)
        times = np.asarray(times, dtype=float)
        # work in log magnitude with a per-time shift: at large times every
        # mode underflows, but only the ratios between modes matter after
        # normalisation
        with np.errstate(divide="ignore"):
            log_mag = np.where(np.abs(c) > 0, np.log(np.abs(c)), -np.inf)
        exponent = np.multiply.outer(times, eig.values.real) + log_mag[None, :]
        shift = exponent.max(axis=1, keepdims=True)
        phase = np.exp(
            1j * (np.multiply.outer(times, eig.values.imag) + np.angle(c)[None, :])
        )
        raw = np.exp(exponent - shift) * phase
        psi = raw @ eig.right.T
        norms = np.maximum(np.linalg.norm(psi, axis=1), 1e-300)
        return psi / norms[:, None]

    def invert(self, u: float, t_max: float, tol: Tolerances = DEFAULT) -> float | None:
        """Time t with S(t) = u, or None if S(t_max) > u."""
        if u >= 1.0:
            return 0.0
        if self(t_max) > u:
            return None
        t_hi = 0.01 * self._gen.fast_scale()
        t_lo = 0.0
        while self(t_hi) > u:
            t_lo = t_hi
            t_hi *= 2.0
            if t_hi > 4.0 * t_max:
                raise RootNotBracketed(
                    "survival function failed to cross the target level"
                )
        return brentq(
            lambda t: self(t) - u,
            t_lo,
            t_hi,
            rtol=tol.root_rtol,
            xtol=1e-300,
        )


def survival(gen: EffectiveGenerator, psi0: np.ndarray, t: float) -> float:
    return SurvivalFunction(gen, psi0)(t)


def sample_jump_time(
    gen: EffectiveGenerator,
    psi0: np.ndarray,
    rng: np.random.Generator,
    t_max: float = np.inf,
    tol: Tolerances = DEFAULT,
) -> float | None:
    """Draw the next jump time from psi0; None means no jump before t_max.

    Implements inverse-transform sampling on the exact survival function.
    """
    sf = SurvivalFunction(gen, psi0)
    u = rng.random()
    if sf.survival_infinity >= u:
        return None
    if np.isinf(t_max):
        t_max = 200.0 * max(gen.slow_scale(), gen.fast_scale())
        if sf(t_max) > u:  # pathological tail; extend once
            t_max *= 100.0
    return sf.invert(u, t_max, tol)


def jump_channel_probabilities(
    model: LindbladModel, psi: np.ndarray, tol: Tolerances = DEFAULT
) -> np.ndarray:
    """Normalised distribution over jump channels at state psi."""
    rates = np.array(
        [float(np.real(np.vdot(j @ psi, j @ psi))) for j in model.jumps]
    )
    total = rates.sum()
    if total < tol.dark_rate:
        raise AllRatesZero("all jump rates vanish at this state")
    p = rates / total
    p[-1] = 1.0 - p[:-1].sum()  # exact simplex closure
    return p


@dataclass(frozen=True)
class TrajectoryRecord:
    """One unravelled trajectory: jump events plus grid-sampled states."""

    seed: int
    grid_times: np.ndarray
    grid_states: np.ndarray  # (n_grid, dim), each row unit norm
    jump_times: np.ndarray
    jump_indices: np.ndarray
    final_state: np.ndarray


def _normalise(psi: np.ndarray) -> np.ndarray:
    return psi / np.linalg.norm(psi)


def simulate_trajectory(
    gen: EffectiveGenerator,
    psi0: np.ndarray,
    t_final: float,
    grid_dt: float,
    seed: int | np.random.SeedSequence,
    tol: Tolerances = DEFAULT,
) -> TrajectoryRecord:
    """Simulate one quantum-jump trajectory on [0, t_final].

    Grid states are stored every ``grid_dt``; jumps are stored exactly.
    Reproducible: the record is a pure function of (model, psi0, seed).
    """
    if t_final <= 0 or grid_dt <= 0:
        raise ValueError("t_final and grid_dt must be positive")
    psi0 = _normalise(np.asarray(psi0, dtype=complex))
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
        seed_label = seq.entropy if isinstance(seq.entropy, int) else -1
    else:
        seq = np.random.SeedSequence(seed)
        seed_label = seed
    rng = np.random.default_rng(seq)

    grid_times = np.arange(0.0, t_final + 0.5 * grid_dt, grid_dt)
    grid_states = np.empty((grid_times.size, gen.dim), dtype=complex)
    jump_times: list[float] = []
    jump_indices: list[int] = []

    t_seg = 0.0
    psi_seg = psi0
    i_grid = 0
    while True:
        sf = SurvivalFunction(gen, psi_seg)
        u = rng.random()
        horizon = t_final - t_seg
        if sf.survival_infinity >= u:
            t_jump = None
        else:
            t_jump = sf.invert(u, horizon, tol)
        seg_end = t_final if t_jump is None else t_seg + t_jump

        hi = np.searchsorted(grid_times, seg_end, side="right")
        if hi > i_grid:
            rel = grid_times[i_grid:hi] - t_seg
            grid_states[i_grid:hi] = sf.states(rel)
            i_grid = hi

        if t_jump is None:
            final = sf.states(np.array([horizon]))[0]
            break
        psi_pre = sf.states(np.array([t_jump]))[0]
        p = jump_channel_probabilities(gen.model, psi_pre, tol)
        k = int(rng.choice(p.size, p=p))
        jump_times.append(seg_end)
        jump_indices.append(k)
        psi_seg = _normalise(gen.model.jumps[k] @ psi_pre)
        t_seg = seg_end
        if t_seg >= t_final:
            final = psi_seg
            break

    if i_grid < grid_times.size:  # grid point exactly at a final jump time
        sf = SurvivalFunction(gen, psi_seg)
        rel = grid_times[i_grid:] - t_seg
        grid_states[i_grid:] = sf.states(rel)

    return TrajectoryRecord(
        seed=seed_label,
        grid_times=grid_times,
        grid_states=grid_states,
        jump_times=np.array(jump_times),
        jump_indices=np.array(jump_indices, dtype=int),
        final_state=final,
    )


def _run_one(args) -> TrajectoryRecord:
    gen, psi0, t_final, grid_dt, seed, index = args
    return simulate_trajectory(
        gen, psi0, t_final, grid_dt, np.random.SeedSequence([seed, index])
    )


def run_ensemble(
    gen: EffectiveGenerator,
    psi0: np.ndarray,
    t_final: float,
    grid_dt: float,
    n_traj: int,
    seed: int,
    workers: int = 1,
) -> list[TrajectoryRecord]:
    """Independent trajectories with per-index RNG streams, merged in order."""
    tasks = [
        (gen, psi0, t_final, grid_dt, seed, i) for i in range(n_traj)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, tasks, chunksize=32))
    return [_run_one(t) for t in tasks]


def ensemble_average(
    records: list[TrajectoryRecord],
) -> tuple[np.ndarray, np.ndarray]:
    """Mean density matrix and per-entry standard error on the shared grid.

    Returns (mean, stderr), both of shape (n_grid, dim, dim); stderr combines
    the standard errors of the real and imaginary parts as re + i*im.
    """
    if not records:
        raise EmptyEnsemble("no trajectory records given")
    grid = records[0].grid_times
    for r in records[1:]:
        if r.grid_times.shape != grid.shape or not np.allclose(
            r.grid_times, grid
        ):
            raise ValueError("records do not share a common grid")
    # projectors per record: (n_rec, n_grid, d, d)
    projs = np.stack(
        [
            np.einsum("ta,tb->tab", r.grid_states, np.conj(r.grid_states))
            for r in records
        ]
    )
    n = len(records)
    mean = projs.mean(axis=0)
    if n == 1:
        return mean, np.zeros_like(mean)
    se_re = projs.real.std(axis=0, ddof=1) / np.sqrt(n)
    se_im = projs.imag.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, se_re + 1j * se_im
