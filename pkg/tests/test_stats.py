import numpy as np
import pytest
from scipy import stats as sps
from scipy.optimize import brentq

from metaq import models
from metaq.reset import (
    WaitingTimeSampler,
    detect_reset_structure,
    jumpless_trajectory,
    sample_semi_markov,
    splitting_probabilities,
)
from metaq.stats import (
    CoreSetSpec,
    InsufficientData,
    PhaseLabelSeries,
    TooFewTransitions,
    committor_mc,
    invariant_measures,
    label_phases,
    label_phases_semi_markov,
    semi_markov_coordinate,
    transition_rate_estimate,
)
from metaq.trajectories import (
    SurvivalFunction,
    effective_generator,
    simulate_trajectory,
)

FIG2 = dict(omega1=1.0, omega2=0.05, kappa1=4.0)
FIG4 = dict(omega1=1.0, omega2=0.05, kappa1=4.0, kappa2=1.0)


def fig2_setup():
    model = models.three_state_1j(**FIG2)
    gen = effective_generator(model)
    return model, gen, detect_reset_structure(model)


def fig4_setup():
    model = models.three_state_2j(**FIG4)
    gen = effective_generator(model)
    return model, gen, detect_reset_structure(model)


class TestCoreSetSpec:
    def test_requires_exactly_one_kind(self):
        with pytest.raises(ValueError):
            CoreSetSpec(label="x")
        with pytest.raises(ValueError):
            CoreSetSpec(
                label="x", reset_index=0, center=np.array([1.0, 0]), radius=0.1
            )

    def test_ball_needs_radius(self):
        with pytest.raises(ValueError):
            CoreSetSpec(label="x", center=np.array([1.0, 0]))
        with pytest.raises(ValueError):
            CoreSetSpec(label="x", center=np.array([1.0, 0]), radius=0.0)


class TestPhaseLabelSeries:
    def test_bookkeeping(self):
        series = PhaseLabelSeries(
            times=np.array([0.0, 1.0, 3.0, 4.0]),
            labels=np.array([-1, 0, 1, 0]),
            t_end=6.0,
            label_names=("a", "b"),
        )
        assert np.allclose(series.durations(), [1.0, 2.0, 1.0, 2.0])
        assert series.time_in_phase() == {"a": 4.0, "b": 1.0}
        assert series.transition_count() == {("a", "b"): 1, ("b", "a"): 1}


class TestLabelPhases:
    def test_intermittent_labelling(self):
        _, gen, rs = fig2_setup()
        phi_a = gen.eig.right[:, 0] / np.linalg.norm(gen.eig.right[:, 0])
        cores = [
            CoreSetSpec(label="bright", reset_index=0),
            CoreSetSpec(label="dark", center=phi_a, radius=0.05),
        ]
        rec = simulate_trajectory(
            gen, rs.reset_points[0], 2000.0, 0.25, seed=13
        )
        series = label_phases(rec, cores, rs)
        counts = series.transition_count()
        assert counts.get(("bright", "dark"), 0) >= 2
        assert counts.get(("dark", "bright"), 0) >= 2
        # only adjacent-phase transitions exist for two labels
        time_in = series.time_in_phase()
        assert time_in["bright"] > 0 and time_in["dark"] > 0
        # dwell periods are long compared with the fast relaxation (~1)
        est = transition_rate_estimate(series)
        assert est.dwell_means["dark"] > 10.0

    def test_semi_markov_labelling_matches_reset_cores(self):
        _, gen, rs = fig4_setup()
        rng = np.random.default_rng(4)
        events = sample_semi_markov(gen, rs, 0, 300.0, rng)
        cores = [
            CoreSetSpec(label="bright", reset_index=0),
            CoreSetSpec(label="dark", reset_index=1),
        ]
        series = label_phases_semi_markov(events, 0, 300.0, cores, rs, gen)
        # reconstruct by reading the reset sequence directly
        expected = [0] + [rs.jump_to_reset[k] for _, k in events]
        collapsed = [expected[0]]
        for j in expected[1:]:
            if j != collapsed[-1]:
                collapsed.append(j)
        assert list(series.labels) == collapsed

    def test_needs_two_cores(self):
        _, gen, rs = fig2_setup()
        rec = simulate_trajectory(gen, rs.reset_points[0], 5.0, 1.0, seed=0)
        with pytest.raises(ValueError):
            label_phases(rec, [CoreSetSpec(label="x", reset_index=0)], rs)


class TestCommittorMc:
    def test_start_inside_ball(self):
        _, gen, rs = fig2_setup()
        phi_a = gen.eig.right[:, 0] / np.linalg.norm(gen.eig.right[:, 0])
        cores = [
            CoreSetSpec(label="bright", reset_index=0),
            CoreSetSpec(label="dark", center=phi_a, radius=0.05),
        ]
        out = committor_mc(gen, rs, phi_a, cores, n=50, seed=1)
        assert out.estimates == {"bright": 0.0, "dark": 1.0}
        assert out.unresolved == 0

    def test_totals_are_consistent(self):
        _, gen, rs = fig4_setup()
        cores = [
            CoreSetSpec(label="bright", reset_index=0),
            CoreSetSpec(label="dark", reset_index=1),
        ]
        psi = np.array([0.6, 0.0, 0.8], dtype=complex)
        out = committor_mc(gen, rs, psi, cores, n=500, seed=2)
        total = sum(out.estimates.values()) + out.unresolved / out.n
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_matches_closed_form_splitting(self):
        _, gen, rs = fig4_setup()
        cores = [
            CoreSetSpec(label="bright", reset_index=0),
            CoreSetSpec(label="dark", reset_index=1),
        ]
        rng = np.random.default_rng(5)
        for _ in range(3):
            psi = rng.normal(size=3) + 1j * rng.normal(size=3)
            psi /= np.linalg.norm(psi)
            exact = splitting_probabilities(gen, rs, psi).per_jump
            out = committor_mc(gen, rs, psi, cores, n=4000, seed=6)
            for i, label in enumerate(("bright", "dark")):
                err = max(out.stderrs[label], 1e-3)
                assert abs(out.estimates[label] - exact[i]) < 3.5 * err


class TestInvariantMeasures:
    def _measure(self, seed=20, t_sim=20000.0):
        _, gen, rs = fig4_setup()
        rng = np.random.default_rng(seed)
        events = sample_semi_markov(gen, rs, 0, t_sim, rng)
        jts = {
            j: jumpless_trajectory(gen, rs, j, tau_max=500.0)
            for j in range(len(rs.reset_points))
        }
        return invariant_measures([(events, 0, t_sim)], jts, rs, t_burn=100.0)

    def test_total_mass_is_one(self):
        m = self._measure()
        log_mass = sum(h.weights.sum() for h in m.log_tau)
        ell_mass = sum(h.weights.sum() for h in m.ell)
        total = sum(h.weights.sum() for h in m.log_tau)
        # weights are occupation times; normalised densities integrate to 1
        for group in (m.log_tau, m.ell):
            integral = sum(
                float((h.density * np.diff(h.edges)).sum()) for h in group
            )
            assert integral == pytest.approx(1.0, abs=1e-6)
        assert log_mass == pytest.approx(ell_mass, rel=1e-9)

    def test_partitions_present_and_nonnegative(self):
        m = self._measure()
        assert [h.partition for h in m.log_tau] == [0, 1]
        for h in m.log_tau + m.ell:
            assert np.all(h.density >= 0.0)
            assert np.all(np.isfinite(h.density))

    def test_insufficient_data(self):
        _, gen, rs = fig4_setup()
        jts = {j: jumpless_trajectory(gen, rs, j, 500.0) for j in (0, 1)}
        events = [(1.0, 0), (2.0, 1)]
        with pytest.raises(InsufficientData):
            invariant_measures([(events, 0, 10.0)], jts, rs)

    def test_occupation_reconstructs_steady_state(self):
        # averaging the flow projector over the occupied semi-Markov
        # coordinates must reproduce the master-equation steady state
        from metaq.qme import spectral_decompose
        from metaq.stats import semi_markov_intervals

        model, gen, rs = fig4_setup()
        rng = np.random.default_rng(20)
        t_sim = 20000.0
        events = sample_semi_markov(gen, rs, 0, t_sim, rng)
        parts = semi_markov_intervals(events, 0, t_sim, rs, t_burn=100.0)
        total = sum(hi - lo for iv in parts.values() for lo, hi in iv)
        rho = np.zeros((3, 3), dtype=complex)
        for j, iv in parts.items():
            sf = SurvivalFunction(gen, rs.reset_points[j])
            for lo, hi in iv:
                n = max(int((hi - lo) / 0.2), 1)
                ts = np.linspace(lo, hi, n + 1)
                mids = 0.5 * (ts[1:] + ts[:-1])
                states = sf.states(mids)
                rho += (hi - lo) / n * np.einsum(
                    "ta,tb->ab", states, states.conj()
                )
        rho /= total
        rho_ss = spectral_decompose(model).steady_state
        assert np.max(np.abs(rho - rho_ss)) < 0.05

    def test_mixture_property(self):
        # two initial states with equal committor produce the same phase-time
        # statistics at metastable times
        _, gen, rs = fig4_setup()
        rng = np.random.default_rng(23)
        psi1 = np.array([0.3, 0.5, 0.6], dtype=complex)
        psi1 /= np.linalg.norm(psi1)
        c_target = splitting_probabilities(gen, rs, psi1).per_jump[1]

        sf = SurvivalFunction(gen, rs.reset_points[0])

        def c_of_tau(tau):
            psi = sf.states(np.array([tau]))[0]
            return splitting_probabilities(gen, rs, psi).per_jump[1] - c_target

        tau_star = brentq(c_of_tau, 0.0, 40.0)
        psi2 = sf.states(np.array([tau_star]))[0]

        spec_model = models.three_state_2j(**FIG4)
        from metaq.qme import spectral_decompose

        tau_s = -1.0 / spectral_decompose(spec_model).values[1].real
        t_obs = 0.1 * tau_s
        edges = np.array([0.0, 1.0, 2.0, 4.0, 8.0, np.inf])

        def sample_categories(psi0, n):
            smp0 = WaitingTimeSampler(gen, rs, psi0)
            samplers = {}
            cats = []
            for _ in range(n):
                tau0 = smp0.invert(rng.random())
                if tau0 is None or tau0 > t_obs:
                    cats.append(0)  # still on the initial flow
                    continue
                rates = smp0.channel_rates(tau0)
                k = int(rng.choice(rates.size, p=rates / rates.sum()))
                j = rs.jump_to_reset[k]
                events = sample_semi_markov(
                    gen, rs, j, t_obs - tau0, rng, samplers=samplers
                )
                if events:
                    t_last, k_last = events[-1]
                    j = rs.jump_to_reset[k_last]
                    tau = (t_obs - tau0) - t_last
                else:
                    tau = t_obs - tau0
                cats.append(1 + 5 * j + int(np.searchsorted(edges, tau) - 1))
            return np.bincount(cats, minlength=11)

        a = sample_categories(psi1, 3000)
        b = sample_categories(psi2, 3000)
        keep = (a + b) >= 10
        table = np.stack([a[keep], b[keep]])
        assert sps.chi2_contingency(table).pvalue > 0.01


class TestTransitionRateEstimate:
    def test_exact_rates_on_synthetic_series(self):
        times = np.array([0.0, 2.0, 3.0, 7.0, 8.0, 12.0, 13.0, 17.0, 18.0, 22.0,
                          23.0, 27.0, 28.0])
        labels = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0])
        series = PhaseLabelSeries(
            times=times, labels=labels, t_end=30.0, label_names=("a", "b")
        )
        est = transition_rate_estimate(series)
        time_a = series.time_in_phase()["a"]
        assert est.rates[("a", "b")] == pytest.approx(6 / time_a)
        assert est.stderrs[("a", "b")] == pytest.approx(np.sqrt(6) / time_a)
        assert est.n_transitions == 12

    def test_too_few_transitions(self):
        series = PhaseLabelSeries(
            times=np.array([0.0, 1.0]),
            labels=np.array([0, 1]),
            t_end=2.0,
            label_names=("a", "b"),
        )
        with pytest.raises(TooFewTransitions):
            transition_rate_estimate(series)


class TestSemiMarkovCoordinate:
    def test_coordinates_follow_jump_stream(self):
        _, gen, rs = fig4_setup()
        rec = simulate_trajectory(gen, rs.reset_points[0], 60.0, 1.0, seed=17)
        assert semi_markov_coordinate(rec, rs, 0.0) == (None, 0.0)
        t1 = float(rec.jump_times[0])
        j1 = rs.jump_to_reset[rec.jump_indices[0]]
        got = semi_markov_coordinate(rec, rs, t1 + 0.3)
        if rec.jump_times.size > 1 and rec.jump_times[1] <= t1 + 0.3:
            pass  # another jump intervened; nothing to check at this offset
        else:
            assert got[0] == j1
            assert got[1] == pytest.approx(0.3)
