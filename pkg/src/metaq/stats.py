"""Trajectory-level metastability statistics.

Phase labelling through core sets, Monte Carlo committors, time-weighted
invariant-measure histograms in the semi-Markov coordinates, and dwell-time /
transition-rate estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT, Tolerances
from .reset import (
    JumplessTrajectory,
    ResetStructure,
    WaitingTimeSampler,
    ball_hit_time,
    pure_trace_distance,
)
from .trajectories import EffectiveGenerator, TrajectoryRecord


class TooFewTransitions(Exception):
    pass


class InsufficientData(Exception):
    pass


@dataclass(frozen=True)
class CoreSetSpec:
    """Core set defining one phase: a reset point or a trace-distance ball."""

    label: str
    reset_index: int | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if (self.reset_index is None) == (self.center is None):
            raise ValueError("specify exactly one of reset_index or center")
        if self.center is not None and (self.radius is None or self.radius <= 0):
            raise ValueError("ball core sets need a positive radius")


@dataclass(frozen=True)
class PhaseLabelSeries:
    """Piecewise-constant phase labels: label[i] holds on [times[i], times[i+1]).

    Label -1 marks the unlabelled prefix before any core has been visited.
    """

    times: np.ndarray
    labels: np.ndarray
    t_end: float
    label_names: tuple[str, ...]

    def durations(self) -> np.ndarray:
        bounds = np.concatenate((self.times, [self.t_end]))
        return np.diff(bounds)

    def time_in_phase(self) -> dict[str, float]:
        dur = self.durations()
        return {
            name: float(dur[self.labels == i].sum())
            for i, name in enumerate(self.label_names)
        }

    def transition_count(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        lab = self.labels[self.labels >= 0]
        for a, b in zip(lab[:-1], lab[1:]):
            if a != b:
                key = (self.label_names[a], self.label_names[b])
                out[key] = out.get(key, 0) + 1
        return out


def _merge_visits(
    visits: list[tuple[float, int]], t_end: float, names: tuple[str, ...]
) -> PhaseLabelSeries:
    visits = sorted(visits)
    times = [0.0]
    labels = [-1]
    for t, core in visits:
        if core == labels[-1]:
            continue
        if t == times[-1]:
            labels[-1] = core
        else:
            times.append(t)
            labels.append(core)
    return PhaseLabelSeries(
        times=np.array(times),
        labels=np.array(labels, dtype=int),
        t_end=t_end,
        label_names=names,
    )


def label_phases(
    record: TrajectoryRecord,
    cores: list[CoreSetSpec],
    rs: ResetStructure | None = None,
) -> PhaseLabelSeries:
    """Label a trajectory by most-recently-visited core set.

    Ball membership is tested on the stored grid and at jump instants (the
    post-jump state is the jump's reset point, hence ``rs`` is required
    whenever reset-index cores are used or jumps occur).
    """
    if len(cores) < 2:
        raise ValueError("need at least two core sets")
    visits: list[tuple[float, int]] = []
    for i, core in enumerate(cores):
        if core.reset_index is not None:
            if rs is None:
                raise ValueError("reset-index cores require a ResetStructure")
            for t, k in zip(record.jump_times, record.jump_indices):
                if rs.jump_to_reset[k] == core.reset_index:
                    visits.append((float(t), i))
        else:
            overlap = np.abs(record.grid_states @ core.center.conj()) ** 2
            dist = np.sqrt(np.clip(1.0 - overlap, 0.0, None))
            for t in record.grid_times[dist <= core.radius]:
                visits.append((float(t), i))
            if rs is not None:
                for t, k in zip(record.jump_times, record.jump_indices):
                    post = rs.reset_points[rs.jump_to_reset[k]]
                    if pure_trace_distance(post, core.center) <= core.radius:
                        visits.append((float(t), i))
    return _merge_visits(
        visits, float(record.grid_times[-1]), tuple(c.label for c in cores)
    )


def label_phases_semi_markov(
    events: list[tuple[float, int]],
    start_reset_index: int,
    t_end: float,
    cores: list[CoreSetSpec],
    rs: ResetStructure,
    gen: EffectiveGenerator,
    tol: Tolerances = DEFAULT,
) -> PhaseLabelSeries:
    """Label a semi-Markov jump sequence by core-set visits.

    Ball cores are entered when the no-jump flow from the current reset state
    reaches the ball; the entry delays are precomputed once per reset point.
    """
    ball_delay: dict[tuple[int, int], float | None] = {}
    for i, core in enumerate(cores):
        if core.center is not None:
            for j, phi in enumerate(rs.reset_points):
                ball_delay[(i, j)] = ball_hit_time(
                    gen, phi, core.center, core.radius, 1e6, tol
                )

    visits: list[tuple[float, int]] = []
    # intervals between jumps, each anchored at its reset state
    anchors = [(0.0, start_reset_index)] + [
        (t, rs.jump_to_reset[k]) for t, k in events
    ]
    bounds = [t for t, _ in anchors[1:]] + [t_end]
    for (t0, j), t1 in zip(anchors, bounds):
        for i, core in enumerate(cores):
            if core.reset_index is not None:
                if j == core.reset_index:
                    visits.append((t0, i))
            else:
                delay = ball_delay[(i, j)]
                if delay is not None and t0 + delay <= t1:
                    visits.append((t0 + delay, i))
    return _merge_visits(visits, t_end, tuple(c.label for c in cores))


@dataclass(frozen=True)
class CommittorEstimate:
    """Monte Carlo committor with binomial errors; unresolved runs reported."""

    estimates: dict[str, float]
    stderrs: dict[str, float]
    unresolved: int
    n: int


def committor_mc(
    gen: EffectiveGenerator,
    rs: ResetStructure,
    psi0: np.ndarray,
    cores: list[CoreSetSpec],
    n: int,
    seed: int,
    t_max: float | None = None,
    tol: Tolerances = DEFAULT,
) -> CommittorEstimate:
    """Fraction of trajectories hitting each core set first.

    Trajectories run until they enter any core or exceed ``t_max`` (default
    100x the slowest relaxation time); leftovers count as unresolved.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    if t_max is None:
        slow = gen.slow_scale()
        t_max = 100.0 * slow if np.isfinite(slow) else 1e6
    rng = np.random.default_rng(seed)
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)

    ball_cores = [(i, c) for i, c in enumerate(cores) if c.center is not None]
    reset_core_of: dict[int, int] = {
        c.reset_index: i for i, c in enumerate(cores) if c.reset_index is not None
    }

    def state_info(psi):
        """(core hit immediately | ball-entry delay, sampler) for a state."""
        for i, c in ball_cores:
            if pure_trace_distance(psi, c.center) <= c.radius:
                return i, None, None
        delays = [
            (ball_hit_time(gen, psi, c.center, c.radius, t_max, tol), i)
            for i, c in ball_cores
        ]
        delays = [(d, i) for d, i in delays if d is not None]
        first = min(delays) if delays else (None, None)
        return None, first, WaitingTimeSampler(gen, rs, psi, tol)

    init = state_info(psi0)
    cache: dict[int, tuple] = {}

    counts = np.zeros(len(cores), dtype=int)
    unresolved = 0
    for _ in range(n):
        immediate, first_ball, sampler = init
        t = 0.0
        while True:
            if immediate is not None:
                counts[immediate] += 1
                break
            tau = sampler.invert(rng.random())
            delay, ball_idx = first_ball
            if delay is not None and (tau is None or delay < tau):
                if t + delay > t_max:
                    unresolved += 1
                    break
                counts[ball_idx] += 1
                break
            if tau is None or t + tau > t_max:
                unresolved += 1
                break
            t += tau
            rates = sampler.channel_rates(tau)
            p = rates / rates.sum()
            p[-1] = 1.0 - p[:-1].sum()
            k = int(rng.choice(p.size, p=p))
            j = rs.jump_to_reset[k]
            if j in reset_core_of:
                counts[reset_core_of[j]] += 1
                break
            if j not in cache:
                cache[j] = state_info(rs.reset_points[j])
            immediate, first_ball, sampler = cache[j]

    est = {c.label: counts[i] / n for i, c in enumerate(cores)}
    err = {
        c.label: float(np.sqrt(max(est[c.label] * (1 - est[c.label]), 0) / n))
        for c in cores
    }
    return CommittorEstimate(estimates=est, stderrs=err, unresolved=unresolved, n=n)


@dataclass(frozen=True)
class Histogram:
    """Time-weighted occupation histogram for one reset-state partition."""

    partition: int
    edges: np.ndarray
    density: np.ndarray
    weights: np.ndarray  # occupation time per bin


@dataclass(frozen=True)
class InvariantMeasure:
    """Stationary histograms of the semi-Markov coordinates.

    ``log_tau`` bins log10 of the time since the last jump; ``ell`` bins the
    arc-length position on the jumpless trajectory (measured backward from
    the asymptote when there are several reset points).
    """

    log_tau: tuple[Histogram, ...]
    ell: tuple[Histogram, ...]
    n_events: int


def _occupation(intervals: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Total overlap time of [lo, hi) intervals with each bin."""
    lo = intervals[:, 0][:, None]
    hi = intervals[:, 1][:, None]
    a = np.clip(edges[:-1][None, :], lo, hi)
    b = np.clip(edges[1:][None, :], lo, hi)
    return (b - a).sum(axis=0)


def semi_markov_intervals(
    events: list[tuple[float, int]],
    start_reset_index: int,
    t_end: float,
    rs: ResetStructure,
    t_burn: float = 0.0,
) -> dict[int, list[tuple[float, float]]]:
    """Occupied tau-ranges per reset partition, with burn-in removed."""
    anchors = [(0.0, start_reset_index)] + [
        (t, rs.jump_to_reset[k]) for t, k in events
    ]
    bounds = [t for t, _ in anchors[1:]] + [t_end]
    out: dict[int, list[tuple[float, float]]] = {}
    for (t0, j), t1 in zip(anchors, bounds):
        tau_lo = max(t_burn - t0, 0.0)
        tau_hi = t1 - t0
        if tau_hi > tau_lo:
            out.setdefault(j, []).append((tau_lo, tau_hi))
    return out


def invariant_measures(
    runs: list[tuple[list[tuple[float, int]], int, float]],
    jts: dict[int, JumplessTrajectory],
    rs: ResetStructure,
    n_bins: int = 40,
    t_burn: float = 0.0,
) -> InvariantMeasure:
    """Histograms of the invariant measure from semi-Markov runs.

    ``runs`` holds (events, start_reset_index, t_end) triples.  Occupation is
    time-weighted; the total mass across partitions is one for each variable.
    """
    merged: dict[int, list[tuple[float, float]]] = {}
    n_events = 0
    for events, j0, t_end in runs:
        n_events += len(events)
        for j, iv in semi_markov_intervals(events, j0, t_end, rs, t_burn).items():
            merged.setdefault(j, []).extend(iv)
    if n_events < 100:
        raise InsufficientData(f"only {n_events} jump events (need >= 100)")

    parts = {j: np.array(iv) for j, iv in merged.items()}
    multi = len(rs.reset_points) > 1

    # log10(tau) histograms over the observed range (floor keeps edges finite)
    tau_hi = max(iv[:, 1].max() for iv in parts.values())
    positive_starts = [
        iv[iv[:, 0] > 0, 0] for iv in parts.values() if np.any(iv[:, 0] > 0)
    ]
    tau_lo = min(
        (a.min() for a in positive_starts), default=1e-4 * tau_hi
    )
    tau_lo = max(min(tau_lo, tau_hi / 10), 1e-8 * tau_hi)
    log_edges = np.linspace(np.log10(tau_lo), np.log10(tau_hi), n_bins + 1)

    total_time = sum((iv[:, 1] - iv[:, 0]).sum() for iv in parts.values())
    tau_edges = 10.0 ** log_edges
    tau_edges[0] = 0.0  # fold sub-floor occupation into the first bin
    log_hists = []
    for j, iv in sorted(parts.items()):
        w = _occupation(iv, tau_edges)
        density = w / total_time / np.diff(log_edges)
        log_hists.append(
            Histogram(partition=j, edges=log_edges, density=density, weights=w)
        )

    # arc-length histograms: map tau bins through ell(tau) per partition
    ell_values = {}
    for j in parts:
        jt = jts[j]
        ell_values[j] = jt.ell_from_asymptote if multi else jt.ell
    ell_min = min(v.min() for v in ell_values.values())
    ell_max = max(v.max() for v in ell_values.values())
    ell_edges = np.linspace(ell_min, ell_max, n_bins + 1)
    ell_hists = []
    for j, iv in sorted(parts.items()):
        jt = jts[j]
        # tau edges corresponding to the ell bin edges (ell is monotone in tau)
        tau_of_ell = np.interp(ell_edges, ell_values[j], jt.taus)
        tau_of_ell[0] = 0.0
        tau_of_ell[-1] = np.inf  # the flow sits at the asymptote past tau_max
        w = _occupation(iv, tau_of_ell)
        density = w / total_time / np.diff(ell_edges)
        ell_hists.append(
            Histogram(partition=j, edges=ell_edges, density=density, weights=w)
        )
    return InvariantMeasure(
        log_tau=tuple(log_hists), ell=tuple(ell_hists), n_events=n_events
    )


@dataclass(frozen=True)
class RateEstimate:
    """Directional switching rates with Poisson errors, plus dwell means."""

    rates: dict[tuple[str, str], float]
    stderrs: dict[tuple[str, str], float]
    dwell_means: dict[str, float]
    n_transitions: int


def transition_rate_estimate(series: PhaseLabelSeries) -> RateEstimate:
    """rate(a -> b) = transitions / total time labelled a."""
    counts = series.transition_count()
    n_total = sum(counts.values())
    if n_total < 10:
        raise TooFewTransitions(f"only {n_total} transitions observed")
    time_in = series.time_in_phase()
    rates = {}
    errs = {}
    for (a, b), c in counts.items():
        rates[(a, b)] = c / time_in[a]
        errs[(a, b)] = np.sqrt(c) / time_in[a]
    exits = {
        a: sum(c for (x, _), c in counts.items() if x == a) for a in time_in
    }
    dwell = {
        a: time_in[a] / exits[a] for a in time_in if exits[a] > 0
    }
    return RateEstimate(
        rates=rates, stderrs=errs, dwell_means=dwell, n_transitions=n_total
    )


def semi_markov_coordinate(
    record: TrajectoryRecord, rs: ResetStructure, t: float
) -> tuple[int | None, float]:
    """(last reset index, elapsed time) at time t, or (None, t) before any jump."""
    i = np.searchsorted(record.jump_times, t, side="right") - 1
    if i < 0:
        return None, t
    k = record.jump_indices[i]
    return rs.jump_to_reset[k], float(t - record.jump_times[i])
