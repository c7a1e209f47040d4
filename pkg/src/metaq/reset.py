"""Quantum reset structure: semi-Markov fast paths, committors, elbow analysis.

A reset process has every jump operator of rank 1, J_k = sqrt(kappa_k)
|phi_k><xi_k|, so the conditional state between jumps depends only on the last
reset state and the elapsed time.  This module factorises jumps, builds the
deterministic jumpless trajectories, samples the jump sequence directly as a
semi-Markov process, and evaluates splitting probabilities and committors in
closed form via Sylvester solves (with adaptive quadrature as cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .config import DEFAULT, Tolerances
from .linalg import solve_sylvester
from .qme import LindbladModel
from .trajectories import EffectiveGenerator, SurvivalFunction


class NotResetProcess(Exception):
    """Some jump operator is not rank 1."""

    def __init__(self, message: str, jump_index: int):
        super().__init__(message)
        self.jump_index = jump_index


class ComplexSpectrum(Exception):
    """The no-jump generator has complex eigenvalues (spiral regime)."""


class SingularFlow(Exception):
    """The no-jump generator has a non-decaying mode; integrals diverge."""


def pure_trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Trace distance between pure states sqrt(1 - |<a|b>|^2)."""
    overlap = min(abs(np.vdot(a, b)) ** 2, 1.0)
    return float(np.sqrt(1.0 - overlap))


@dataclass(frozen=True)
class ResetStructure:
    """Rank-1 factorisation of every jump operator.

    ``jump_to_reset[k]`` maps jump index k to the index of its (deduplicated)
    reset point in ``reset_points``.
    """

    kappas: np.ndarray
    phis: tuple[np.ndarray, ...]
    xis: tuple[np.ndarray, ...]
    reset_points: tuple[np.ndarray, ...]
    jump_to_reset: tuple[int, ...]

    @property
    def n_jumps(self) -> int:
        return self.kappas.size


def detect_reset_structure(
    model: LindbladModel, tol: Tolerances = DEFAULT
) -> ResetStructure:
    """Factorise all jumps via dominant singular triples, or fail loudly."""
    kappas, phis, xis = [], [], []
    for k, j in enumerate(model.jumps):
        u, s, vh = np.linalg.svd(j)
        if s.size > 1 and s[1] > tol.rank_one * s[0]:
            raise NotResetProcess(
                f"jump operator {k} has rank > 1 "
                f"(second singular value {s[1]:g})",
                jump_index=k,
            )
        phi = u[:, 0]
        xi = vh[0].conj()
        # fix the shared global phase so the reset state's largest entry is
        # real positive (J = s |phi><xi| is invariant under the joint rotation)
        idx = int(np.argmax(np.abs(phi)))
        rot = np.exp(-1j * np.angle(phi[idx]))
        kappas.append(s[0] ** 2)
        phis.append(phi * rot)
        xis.append(xi * rot)

    reset_points: list[np.ndarray] = []
    jump_to_reset: list[int] = []
    for phi in phis:
        for i, p in enumerate(reset_points):
            if pure_trace_distance(phi, p) < 1e-9:
                jump_to_reset.append(i)
                break
        else:
            reset_points.append(phi)
            jump_to_reset.append(len(reset_points) - 1)

    return ResetStructure(
        kappas=np.array(kappas),
        phis=tuple(phis),
        xis=tuple(xis),
        reset_points=tuple(reset_points),
        jump_to_reset=tuple(jump_to_reset),
    )


def _geometric_grid(tau_min: float, tau_max: float, per_decade: int) -> np.ndarray:
    n_dec = np.log10(tau_max / tau_min)
    n = max(int(np.ceil(n_dec * per_decade)) + 1, 8)
    return np.concatenate(
        ([0.0], np.geomspace(tau_min, tau_max, n))
    )


@dataclass(frozen=True)
class JumplessTrajectory:
    """Deterministic no-jump evolution from one reset point.

    ``ell`` is the cumulative trace-distance arc length measured forward from
    the reset state; ``ell_from_asymptote`` re-anchors it at the asymptotic
    state (nonpositive values), the convention used for multi-reset models.
    """

    reset_index: int
    taus: np.ndarray
    states: np.ndarray          # (n, dim)
    survival: np.ndarray        # (n,)
    rates: np.ndarray           # (n, n_jumps)
    ell: np.ndarray             # (n,)
    phi_a: np.ndarray
    theta_a: complex
    gen: EffectiveGenerator
    rs: ResetStructure

    @property
    def ell_from_asymptote(self) -> np.ndarray:
        return self.ell - self.ell[-1]

    def ell_of_tau(self, tau: np.ndarray) -> np.ndarray:
        return np.interp(tau, self.taus, self.ell)


def jumpless_trajectory(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    reset_index: int,
    tau_max: float,
    tol: Tolerances = DEFAULT,
) -> JumplessTrajectory:
    """Build the jumpless trajectory from ``reset_points[reset_index]``."""
    phi = rs.reset_points[reset_index]
    sf = SurvivalFunction(gen, phi)
    tau_min = 1e-3 * gen.fast_scale()
    per_decade = tol.tau_points_per_decade

    xi_mat = np.stack(rs.xis)  # (n_jumps, dim)
    prev_len = None
    while True:
        taus = _geometric_grid(tau_min, tau_max, per_decade)
        states = sf.states(taus)
        overlaps = np.abs(states @ xi_mat.conj().T) ** 2
        step = np.sqrt(
            np.clip(
                1.0
                - np.abs(np.einsum("na,na->n", states[1:].conj(), states[:-1]))
                ** 2,
                0.0,
                None,
            )
        )
        ell = np.concatenate(([0.0], np.cumsum(step)))
        total = ell[-1]
        if prev_len is not None and abs(total - prev_len) <= tol.arc_refine * max(
            total, 1e-300
        ):
            break
        prev_len = total
        per_decade *= 2
        if per_decade > 64 * tol.tau_points_per_decade:
            break

    survival = np.clip(sf.many(taus).real, 0.0, None)
    rates = overlaps * rs.kappas[None, :]
    phi_a = gen.eig.right[:, 0] / np.linalg.norm(gen.eig.right[:, 0])
    return JumplessTrajectory(
        reset_index=reset_index,
        taus=taus,
        states=states,
        survival=survival,
        rates=rates,
        ell=ell,
        phi_a=phi_a,
        theta_a=complex(gen.eig.values[0]),
        gen=gen,
        rs=rs,
    )


def semi_markov_rate(
    jt: JumplessTrajectory, jump_index: int, tau: float
) -> float:
    """w_{jk}(tau), evaluated spectrally (never interpolated)."""
    sf = SurvivalFunction(jt.gen, jt.rs.reset_points[jt.reset_index])
    psi = sf.states(np.array([tau]))[0]
    xi = jt.rs.xis[jump_index]
    return float(jt.rs.kappas[jump_index] * abs(np.vdot(xi, psi)) ** 2)


class WaitingTimeSampler:
    """Inverse-transform sampler for the waiting time from one reset state.

    A dense geometric survival table supplies the bracket and interpolant;
    optionally each draw is refined by exact root finding on the spectral
    survival function.
    """

    def __init__(
        self,
        gen: EffectiveGenerator,
        rs: ResetStructure,
        psi0: np.ndarray,
        tol: Tolerances = DEFAULT,
        points_per_decade: int = 256,
    ):
        phi = np.asarray(psi0, dtype=complex)
        phi = phi / np.linalg.norm(phi)
        self.sf = SurvivalFunction(gen, phi)
        self.survival_infinity = self.sf.survival_infinity
        self.tol = tol

        tau_min = 1e-4 * gen.fast_scale()
        slow = gen.slow_scale()
        tau_max = 80.0 * slow if np.isfinite(slow) else 1.0
        taus = _geometric_grid(tau_min, tau_max, points_per_decade)
        s = self.sf.many(taus).real
        # enforce strict monotonicity for searchsorted (numerical plateaus)
        s = np.minimum.accumulate(s)
        keep = np.concatenate(([True], np.diff(s) < 0))
        self._taus = taus[keep]
        self._s = s[keep]

        # per-channel amplitude coefficients: amp_k(tau) = B[k] . exp(theta tau)
        c = gen.eig.coords(phi)
        xi_mat = np.stack(rs.xis)
        self._b = (xi_mat.conj() @ gen.eig.right) * c[None, :]
        self._thetas = gen.eig.values
        self._kappas = rs.kappas

    def invert(self, u: float, exact: bool = False) -> float | None:
        """tau with S(tau) = u; None when the dark component wins."""
        if u <= self.survival_infinity:
            return None
        if u >= 1.0:
            return 0.0
        i = np.searchsorted(-self._s, -u)
        if i == 0:
            return 0.0
        if i >= self._s.size:
            i = self._s.size - 1
        t0, t1 = self._taus[i - 1], self._taus[i]
        s0, s1 = self._s[i - 1], self._s[i]
        if t0 == 0.0:
            tau = t0 + (t1 - t0) * (s0 - u) / (s0 - s1)
        else:
            frac = (np.log(s0) - np.log(u)) / (np.log(s0) - np.log(s1))
            tau = float(np.exp(np.log(t0) + frac * (np.log(t1) - np.log(t0))))
        if exact:
            lo, hi = t0, t1
            if self.sf(lo) < u or self.sf(hi) > u:
                return self.sf.invert(u, self._taus[-1], self.tol)
            tau = brentq(
                lambda t: self.sf(t) - u, lo, hi, rtol=self.tol.root_rtol
            )
        return float(tau)

    def channel_rates(self, tau: float) -> np.ndarray:
        amps = self._b @ np.exp(self._thetas * tau)
        return self._kappas * np.abs(amps) ** 2


def sample_semi_markov(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    start_reset_index: int,
    t_final: float,
    rng: np.random.Generator,
    exact: bool = False,
    tol: Tolerances = DEFAULT,
    samplers: dict[int, WaitingTimeSampler] | None = None,
) -> list[tuple[float, int]]:
    """Jump sequence [(time, jump index), ...] starting from a reset state.

    Statistically identical in law to the jump events of the generic
    unravelling restricted to reset processes.
    """
    if samplers is None:
        samplers = {}
    events: list[tuple[float, int]] = []
    j = start_reset_index
    t = 0.0
    while True:
        if j not in samplers:
            samplers[j] = WaitingTimeSampler(gen, rs, rs.reset_points[j], tol)
        smp = samplers[j]
        tau = smp.invert(rng.random(), exact=exact)
        if tau is None:
            break
        t += tau
        if t > t_final:
            break
        rates = smp.channel_rates(tau)
        total = rates.sum()
        if total <= tol.dark_rate:
            break
        p = rates / total
        p[-1] = 1.0 - p[:-1].sum()
        k = int(rng.choice(p.size, p=p))
        events.append((t, k))
        j = rs.jump_to_reset[k]
    return events


@dataclass(frozen=True)
class SplittingProbabilities:
    """First-jump channel distribution from a given pure state."""

    per_jump: np.ndarray
    no_jump: float
    method: str
    flagged: bool = False


def _quadrature_splitting(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    psi0: np.ndarray,
    tol: Tolerances,
    t_cut: float | None = None,
) -> np.ndarray:
    c = gen.eig.coords(psi0)
    b = (np.stack(rs.xis).conj() @ gen.eig.right) * c[None, :]
    thetas = gen.eig.values

    slow = gen.slow_scale()
    if t_cut is None:
        t_cut = 60.0 * slow if np.isfinite(slow) else 60.0 / max(
            -np.max(thetas.real[thetas.real < -1e-300]), 1e-300
        )
    edges = np.concatenate(
        ([0.0], np.geomspace(1e-4 * gen.fast_scale(), t_cut, 40))
    )
    out = np.empty(rs.n_jumps)
    for k in range(rs.n_jumps):
        bk = b[k]

        def integrand(t):
            return rs.kappas[k] * abs(bk @ np.exp(thetas * t)) ** 2

        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = quad(integrand, lo, hi, epsabs=tol.quadrature * 1e-3, limit=200)
            total += val
        out[k] = total
    return out


def splitting_probabilities(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    psi0: np.ndarray,
    method: str = "sylvester",
    tol: Tolerances = DEFAULT,
) -> SplittingProbabilities:
    """P(first jump uses channel k | psi0), plus the no-jump-ever mass.

    The default closed form solves G X + X G^dag = -psi0 psi0^dag and reads
    off kappa_k <xi_k|X|xi_k>.  With a non-decaying mode (true dark state)
    the solve is singular and a flagged quadrature-with-cutoff is returned.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    singular = np.any(gen.eig.values.real > -tol.spectra_overlap)

    if method == "quadrature" or singular:
        if singular:
            slow_dec = -np.max(
                gen.eig.values.real[gen.eig.values.real < -tol.spectra_overlap]
            )
            t_cut = 60.0 / slow_dec
            per = _quadrature_splitting(gen, rs, psi0, tol, t_cut=t_cut)
        else:
            per = _quadrature_splitting(gen, rs, psi0, tol)
        per = np.clip(per, 0.0, None)
        return SplittingProbabilities(
            per_jump=per,
            no_jump=max(1.0 - per.sum(), 0.0),
            method="quadrature",
            flagged=bool(singular),
        )

    rho0 = np.outer(psi0, psi0.conj())
    x = solve_sylvester(gen.matrix, gen.matrix.conj().T, -rho0, tol)
    per = np.array(
        [
            float(np.real(rs.kappas[k] * np.vdot(rs.xis[k], x @ rs.xis[k])))
            for k in range(rs.n_jumps)
        ]
    )
    per = np.clip(per, 0.0, None)
    return SplittingProbabilities(
        per_jump=per,
        no_jump=max(1.0 - per.sum(), 0.0),
        method="sylvester",
    )


def committor_reset(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    psi0: np.ndarray,
    phase_map: dict[int, str],
    method: str = "sylvester",
    tol: Tolerances = DEFAULT,
) -> dict[str, float]:
    """Per-phase committor when each phase's core set is a reset state.

    ``phase_map`` sends jump indices to phase labels; the committor to a phase
    is the total splitting probability of its jumps.
    """
    sp = splitting_probabilities(gen, rs, psi0, method=method, tol=tol)
    out: dict[str, float] = {}
    for k, label in phase_map.items():
        out[label] = out.get(label, 0.0) + float(sp.per_jump[k])
    return out


@dataclass(frozen=True)
class BallCommittor:
    """Committor for a single-jump model with a trace-distance-ball dark core."""

    c_dark: float
    c_bright: float
    tau_hit: float
    hit: bool


def ball_hit_time(
    gen: EffectiveGenerator,
    psi0: np.ndarray,
    center: np.ndarray,
    radius: float,
    tau_max: float,
    tol: Tolerances = DEFAULT,
) -> float | None:
    """First time the normalised no-jump flow from psi0 enters the ball."""
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    if pure_trace_distance(psi0, center) <= radius:
        return 0.0
    sf = SurvivalFunction(gen, psi0)

    def dist(tau: float) -> float:
        return pure_trace_distance(sf.states(np.array([tau]))[0], center)

    taus = _geometric_grid(1e-3 * gen.fast_scale(), tau_max, 32)[1:]
    states = sf.states(taus)
    overlap = np.abs(states @ center.conj()) ** 2
    d = np.sqrt(np.clip(1.0 - overlap, 0.0, None))
    inside = np.nonzero(d <= radius)[0]
    if inside.size == 0:
        return None
    i = inside[0]
    lo = taus[i - 1] if i > 0 else 0.0
    return float(brentq(lambda t: dist(t) - radius, lo, taus[i], rtol=1e-12))


def committor_single_reset(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    psi0: np.ndarray,
    center: np.ndarray | None = None,
    radius: float | None = None,
    tau_max: float | None = None,
    tol: Tolerances = DEFAULT,
) -> BallCommittor:
    """Committor for a model whose dark core is a ball around the asymptote.

    C_bright integrates the first-jump density up to the ball-hitting time by
    adaptive quadrature; C_dark is the exact survival at that time.
    """
    if rs.n_jumps != 1:
        raise ValueError("single-reset committor requires exactly one jump")
    phi_a = gen.eig.right[:, 0] / np.linalg.norm(gen.eig.right[:, 0])
    if center is None:
        center = phi_a
    if radius is None:
        radius = tol.dark_ball_radius
    if tau_max is None:
        slow = gen.slow_scale()
        tau_max = 100.0 * slow if np.isfinite(slow) else 1e6

    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    sf = SurvivalFunction(gen, psi0)
    tau_hit = ball_hit_time(gen, psi0, center, radius, tau_max, tol)
    if tau_hit is None:
        residual = float(sf(tau_max))
        return BallCommittor(
            c_dark=residual, c_bright=1.0 - residual, tau_hit=np.inf, hit=False
        )

    c = gen.eig.coords(psi0)
    b = (rs.xis[0].conj() @ gen.eig.right) * c
    thetas = gen.eig.values
    kappa = rs.kappas[0]

    def integrand(t):
        return kappa * abs(b @ np.exp(thetas * t)) ** 2

    if tau_hit == 0.0:
        c_bright = 0.0
    else:
        edges = np.concatenate(
            ([0.0], np.geomspace(min(1e-4 * gen.fast_scale(), tau_hit / 8), tau_hit, 30))
        )
        c_bright = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = quad(integrand, lo, hi, epsabs=tol.quadrature * 1e-2, limit=200)
            c_bright += val
    return BallCommittor(
        c_dark=float(sf(tau_hit)),
        c_bright=float(c_bright),
        tau_hit=float(tau_hit),
        hit=True,
    )


@dataclass(frozen=True)
class ElbowReport:
    """Spectral expansion of the slow passage past the trajectory elbow."""

    elbow_state: np.ndarray
    tau_elbow: float
    survival_at_elbow: float
    threshold: float
    coeff_a: float
    coeff_plus: float
    coeff_minus: float
    theta_a: float
    theta_plus: float
    theta_minus: float


def elbow_analysis(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    threshold: float | None = None,
    reset_index: int = 0,
    tol: Tolerances = DEFAULT,
) -> ElbowReport:
    """Expand the reset state over the three real modes of G and locate the
    elbow-passing time where the asymptotic mode reaches the given relative
    weight."""
    if threshold is None:
        threshold = tol.elbow_threshold
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    thetas = gen.eig.values
    if thetas.size != 3:
        raise ValueError("elbow analysis requires a three-dimensional flow")
    scale = np.max(np.abs(thetas))
    if np.max(np.abs(thetas.imag)) > 1e-10 * scale:
        raise ComplexSpectrum(
            "no-jump generator has complex eigenvalues (spiral regime)"
        )

    phi = rs.reset_points[reset_index]
    coeffs = gen.eig.coords(phi)
    vectors = []
    reals = []
    for i in range(3):
        r = gen.eig.right[:, i]
        rot = np.exp(-1j * np.angle(r[np.argmax(np.abs(r))]))
        vectors.append((r * rot).real)
        reals.append(float(np.real(coeffs[i] / rot)))
    a_a, a_p, a_m = reals
    if a_a < 0:
        a_a = -a_a
        vectors[0] = -vectors[0]
    th_a, th_p, th_m = (float(t.real) for t in thetas)

    tau_e = float(np.log(threshold * abs(a_p) / a_a) / (th_a - th_p))
    s_tau_e = float(SurvivalFunction(gen, phi)(tau_e))
    elbow = vectors[1] / np.linalg.norm(vectors[1])
    return ElbowReport(
        elbow_state=elbow.astype(complex),
        tau_elbow=tau_e,
        survival_at_elbow=s_tau_e,
        threshold=float(threshold),
        coeff_a=a_a,
        coeff_plus=a_p,
        coeff_minus=a_m,
        theta_a=th_a,
        theta_plus=th_p,
        theta_minus=th_m,
    )
