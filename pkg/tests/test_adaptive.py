import math

import numpy as np
import pytest

import oracles
from qfeedback import (
    DolinarConfig,
    FockBasis,
    NonPositiveGamma,
    PhysicalConstants,
    SegmentTooCoarse,
    TargetNotReached,
    TrajectoryConfig,
    coherent_state,
    dolinar_simulate,
    fixed_policy,
    helstrom_bound,
    optimal_static_beta,
    purification_experiment,
    qubit_density,
    rapid_policy,
    rapid_purify_step,
)
from qfeedback.stochastic import NoiseStream, trajectory_seed

CONST = PhysicalConstants()


class TestHelstrom:
    def test_coherent_pairs_match_closed_form(self):
        basis = FockBasis(n_max=40, mass=1.0, omega=1.0)
        vac = coherent_state(basis, 0.0, 0.0)
        for energy, p1 in ((0.2, 0.5), (1.0, 0.5), (0.5, 0.3), (2.0, 0.7)):
            # displacement carrying |alpha|^2 = energy in x units of the basis
            alpha = math.sqrt(energy)
            x_amp = math.sqrt(2.0 * CONST.hbar / (basis.mass * basis.omega)) * alpha
            pulse = coherent_state(basis, x_amp, 0.0)
            got = helstrom_bound(vac, pulse, p1)
            want = oracles.coherent_pair_error(energy, p1)
            assert got == pytest.approx(want, abs=1e-10)

    def test_qubit_pairs_match_projective_sweep(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            r0 = rng.normal(size=3)
            r1 = rng.normal(size=3)
            r0 = r0 / max(np.linalg.norm(r0), 1.0) * rng.random()
            r1 = r1 / max(np.linalg.norm(r1), 1.0) * rng.random()
            p1 = rng.uniform(0.1, 0.9)
            rho0, rho1 = qubit_density(r0), qubit_density(r1)
            got = helstrom_bound(rho0, rho1, p1)
            want = oracles.qubit_projective_sweep(rho0.entries, rho1.entries, p1)
            assert got == pytest.approx(want, abs=1e-8)


class TestDolinar:
    def test_approaches_helstrom(self):
        cfg = DolinarConfig(alpha=math.sqrt(0.2), pulse_duration=1.0,
                            n_segments=400, prior=0.5)
        rate, se = dolinar_simulate(cfg, seed=101, trials=20000)
        floor = oracles.coherent_pair_error(0.2, 0.5)
        # can't beat the bound; must sit within sampling noise above it
        assert rate > floor - 3.0 * se
        assert rate < floor + 4.0 * se

    def test_static_receiver_strictly_worse(self):
        cfg = DolinarConfig(alpha=math.sqrt(0.5), pulse_duration=1.0,
                            n_segments=400, prior=0.5)
        beta, analytic = optimal_static_beta(cfg)
        floor = oracles.coherent_pair_error(0.5, 0.5)
        assert analytic > floor + 0.01
        static_rate, static_se = dolinar_simulate(
            cfg, seed=7, trials=20000, static_beta=beta
        )
        assert abs(static_rate - analytic) < 3.0 * static_se

    def test_segment_too_coarse(self):
        cfg = DolinarConfig(alpha=2.0, pulse_duration=1.0, n_segments=10, prior=0.5)
        with pytest.raises(SegmentTooCoarse):
            dolinar_simulate(cfg, seed=1, trials=10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DolinarConfig(alpha=-0.1, pulse_duration=1.0, n_segments=10, prior=0.5)
        with pytest.raises(ValueError):
            DolinarConfig(alpha=0.5, pulse_duration=1.0, n_segments=0, prior=0.5)
        with pytest.raises(ValueError):
            DolinarConfig(alpha=0.5, pulse_duration=1.0, n_segments=10, prior=1.0)
        with pytest.raises(ValueError):
            DolinarConfig(alpha=0.5, pulse_duration=0.0, n_segments=10, prior=0.5)


class TestRapidPurifyStep:
    def test_maximally_mixed_is_fixed_point_at_zero_noise(self):
        rho = qubit_density(np.zeros(3))
        out = rapid_purify_step(rho, rapid_policy(), 1.0, 0.0, 1e-3)
        assert np.allclose(out.entries, 0.5 * np.eye(2), atol=1e-12)

    def test_negative_gamma_propagates(self):
        with pytest.raises(NonPositiveGamma):
            rapid_purify_step(qubit_density(np.zeros(3)), rapid_policy(), -1.0, 0.0, 1e-3)

    def test_rotation_lands_in_transverse_plane(self):
        rho = qubit_density(np.array([0.3, 0.0, 0.4]))
        out = rapid_purify_step(rho, rapid_policy(), 1.0, 0.05, 1e-3)
        z = (out.entries[0, 0] - out.entries[1, 1]).real
        assert abs(z) < 1e-10

    def test_rate_clamp_freezes_rotation(self):
        rho = qubit_density(np.array([0.3, 0.0, 0.4]))
        slow = rapid_purify_step(rho, rapid_policy(feedback_rate=1e-9), 1.0, 0.05, 1e-3)
        none = rapid_purify_step(rho, fixed_policy(), 1.0, 0.05, 1e-3)
        assert np.allclose(slow.entries, none.entries, atol=1e-10)

    def test_purity_never_decreases_under_rapid(self):
        # exact map shrinks impurity every step; the Euler step can dip
        # by O(dt) in the noise tails, so allow that much and no more
        rng = np.random.default_rng(21)
        dt = 1e-3
        rho = qubit_density(np.zeros(3))
        prev = 0.5
        for _ in range(500):
            rho = rapid_purify_step(rho, rapid_policy(), 2.0, rng.normal(0, math.sqrt(dt)), dt)
            purity = float(np.trace(rho.entries @ rho.entries).real)
            assert purity > prev - 1e-3
            assert np.linalg.eigvalsh(rho.entries)[0] > -1e-10
            prev = purity
        assert prev > 0.75

    def test_matrix_route_matches_scalar_recursion(self):
        """The density-matrix stepper and the closed-form scalar recursion
        the ensemble engine uses must track each other pathwise."""
        gamma, dt, n = 1.5, 1e-4, 2000
        stream = NoiseStream(trajectory_seed(55, 0), dt)
        dws = stream.draw(n)

        rho = qubit_density(np.zeros(3))
        u = 0.0
        log_imp = 0.0
        rho_r = qubit_density(np.zeros(3))
        for k in range(n):
            rho = rapid_purify_step(rho, fixed_policy(), gamma, dws[k], dt)
            rho_r = rapid_purify_step(rho_r, rapid_policy(), gamma, dws[k], dt)
            u = u + gamma * math.tanh(u) * dt + math.sqrt(gamma) * dws[k]
            log_imp = log_imp - 2.0 * math.log(math.cosh(math.sqrt(gamma) * dws[k]))
        z = (rho.entries[0, 0] - rho.entries[1, 1]).real
        assert z == pytest.approx(math.tanh(u), abs=1e-2)
        purity = float(np.trace(rho_r.entries @ rho_r.entries).real)
        imp_matrix = 2.0 * (1.0 - purity)  # 1 - r^2 for a qubit
        assert imp_matrix == pytest.approx(math.exp(log_imp), rel=0.05)


class TestPurificationExperiment:
    def test_rapid_exponent_near_gamma(self):
        gamma = 1.0
        st = purification_experiment(
            rapid_policy(), gamma,
            TrajectoryConfig(dt=0.002, t_final=14.0, seed=1, n_trajectories=500),
            record_stride=10,
        )
        assert st.impurity_decay_rate == pytest.approx(gamma, rel=0.02)

    def test_fixed_exponent_near_half_gamma(self):
        """The no-feedback mean impurity decays with exponent gamma/2 (plus
        a t^-1/2 transient); the final-half fit at gamma t = 14 lands a
        little above half."""
        st = purification_experiment(
            fixed_policy(), 1.0,
            TrajectoryConfig(dt=0.002, t_final=14.0, seed=1, n_trajectories=10000),
            record_stride=10,
        )
        assert 0.42 < st.impurity_decay_rate < 0.62

    def test_entropy_variance_collapse(self):
        """Feedback makes the entropy reduction deterministic: across
        trajectories its variance must be under 1% of the no-feedback one."""
        config = TrajectoryConfig(dt=0.002, t_final=4.0, seed=5, n_trajectories=2000)
        fx = purification_experiment(fixed_policy(), 1.0, config, record_stride=10)
        rp = purification_experiment(rapid_policy(), 1.0, config, record_stride=10)
        mid = (fx.times >= 1.0) & (fx.times <= 3.0)
        assert np.all(rp.entropy_variance[mid] <= 0.01 * fx.entropy_variance[mid])

    def test_average_entropy_non_increasing(self):
        config = TrajectoryConfig(dt=0.002, t_final=6.0, seed=3, n_trajectories=2000)
        for policy in (fixed_policy(), rapid_policy()):
            st = purification_experiment(policy, 1.0, config, record_stride=10)
            se = np.sqrt(np.clip(st.entropy_variance, 0.0, None) / st.n_trajectories)
            rises = np.diff(st.avg_entropy)
            slack = 3.0 * np.hypot(se[1:], se[:-1])
            assert np.all(rises <= slack + 1e-12)

    def test_gamma_rescaling_collapses_curves(self):
        """Halving gamma and doubling the horizon with matched step counts
        must give identical curves; no stray scale can enter."""
        a = purification_experiment(
            fixed_policy(), 2.0,
            TrajectoryConfig(dt=0.002, t_final=4.0, seed=9, n_trajectories=300),
            record_stride=10,
        )
        b = purification_experiment(
            fixed_policy(), 1.0,
            TrajectoryConfig(dt=0.004, t_final=8.0, seed=9, n_trajectories=300),
            record_stride=10,
        )
        assert np.allclose(a.times * 2.0, b.times, atol=1e-12)
        assert np.allclose(a.avg_entropy, b.avg_entropy, atol=1e-12)
        assert np.allclose(a.avg_log_impurity, b.avg_log_impurity, atol=1e-12)

    def test_adaptive_hitting_time_deterministic(self):
        gamma, target = 1.0, 0.99
        st = purification_experiment(
            rapid_policy(), gamma,
            TrajectoryConfig(dt=0.002, t_final=8.0, seed=11, n_trajectories=200),
            target_purity=target, record_stride=10,
        )
        want = oracles.adaptive_hitting_time(gamma, target)
        assert st.hitting_times.mean() == pytest.approx(want, abs=0.05)
        assert st.hitting_times.std() < 0.25

    def test_fixed_hitting_time_matches_bvp(self):
        gamma, target = 1.0, 0.99
        st = purification_experiment(
            fixed_policy(), gamma,
            TrajectoryConfig(dt=0.004, t_final=40.0, seed=17, n_trajectories=2000),
            target_purity=target, record_stride=100,
        )
        want = oracles.fixed_mean_hitting_time(gamma, target)
        se = st.hitting_times.std(ddof=1) / math.sqrt(st.hitting_times.size)
        assert abs(st.hitting_times.mean() - want) < 4.0 * se

    def test_target_not_reached_reports_count(self):
        with pytest.raises(TargetNotReached) as exc:
            purification_experiment(
                fixed_policy(), 1.0,
                TrajectoryConfig(dt=0.002, t_final=1.0, seed=2, n_trajectories=50),
                target_purity=0.999,
            )
        assert exc.value.n_missed > 0
