import math

import numpy as np
import pytest

import oracles
from qfeedback import (
    AsymmetricGrid,
    AtomLatticeScenario,
    DensityMatrix,
    DimensionMismatch,
    FockBasis,
    GridBasis,
    GridUnderResolved,
    NonPositiveGamma,
    PhysicalConstants,
    QuadraticCost,
    ResonatorScenario,
    TrajectoryConfig,
    TruncationLeak,
    bang_bang_decision,
    build_lattice,
    build_oscillator,
    gaussian_packet,
    grid_eigenstates,
    run_atom_cooling,
    run_resonator_cooling,
    thermal_momentum_diffusion,
    thermal_state,
)

CONST = PhysicalConstants()

OSC_BASIS = FockBasis(n_max=16, mass=1.0, omega=1.0)
ENERGY_COST = QuadraticCost(np.diag([0.5, 0.5]), 0.001)
LATTICE_BASIS = GridBasis(x_min=-np.pi / 2, x_max=np.pi / 2, n_points=128, mass=1.0)
V_LOW, V_HIGH, K = 5.0, 12.0, 1.0
TRIGGER_SCALE = K * math.sqrt(2.0 * V_LOW / LATTICE_BASIS.mass)


def _atom_scenario(**overrides):
    kw = dict(v_low=V_LOW, v_high=V_HIGH, k=K, basis=LATTICE_BASIS, gamma=15.0,
              switch_hysteresis=0.2)
    kw.update(overrides)
    return AtomLatticeScenario(**kw)


class TestScenarioValidation:
    def test_resonator_rejects_bad_parameters(self):
        with pytest.raises(NonPositiveGamma):
            ResonatorScenario(basis=OSC_BASIS, gamma=0.0, cost=ENERGY_COST)
        with pytest.raises(ValueError):
            ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST, nbar=-0.5)
        with pytest.raises(ValueError):
            ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST,
                              initial_nbar=-1.0)

    def test_resonator_start_nbar_defaults_to_bath(self):
        sc = ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST, nbar=0.7)
        assert sc.start_nbar == 0.7
        sc = ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST,
                               nbar=0.7, initial_nbar=0.2)
        assert sc.start_nbar == 0.2

    def test_atom_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            _atom_scenario(v_low=5.0, v_high=5.0)
        with pytest.raises(ValueError):
            _atom_scenario(k=0.0)
        with pytest.raises(NonPositiveGamma):
            _atom_scenario(gamma=-1.0)
        with pytest.raises(ValueError):
            _atom_scenario(switch_hysteresis=-0.1)
        with pytest.raises(ValueError):
            _atom_scenario(band_weights=(0.5, 0.6))
        with pytest.raises(ValueError):
            _atom_scenario(band_weights=(1.5, -0.5))
        with pytest.raises(ValueError):
            _atom_scenario(rate_scale=0.0)

    def test_atom_requires_symmetric_grid(self):
        shifted = GridBasis(x_min=0.0, x_max=np.pi, n_points=128, mass=1.0)
        with pytest.raises(AsymmetricGrid):
            _atom_scenario(basis=shifted)

    def test_trigger_scale_default_and_override(self):
        assert _atom_scenario().trigger_scale == pytest.approx(TRIGGER_SCALE)
        assert _atom_scenario(rate_scale=3.0).trigger_scale == 3.0

    def test_thermal_diffusion_rejects_negative_occupation(self):
        with pytest.raises(ValueError):
            thermal_momentum_diffusion(-0.1, 1.0, 1.0, CONST)


class TestResonatorCooling:
    def test_back_action_heating_slope(self):
        """With feedback off and no bath, <H> climbs linearly at the
        measurement back-action rate."""
        sc = ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST,
                               feedback_enabled=False, nbar=0.0)
        cfg = TrajectoryConfig(dt=0.005, t_final=3.0, seed=31, n_trajectories=64)
        out = run_resonator_cooling(sc, cfg, record_stride=10)
        slope, icpt = np.polyfit(out.times, out.energy_curve, 1)
        assert slope == pytest.approx(oracles.heating_slope(1.0, 0.0, 1.0), abs=0.012)
        assert icpt == pytest.approx(0.5, abs=0.05)

    def test_bath_heating_slope(self):
        basis = FockBasis(n_max=40, mass=1.0, omega=1.0)
        nbar = 1.0
        sc = ResonatorScenario(basis=basis, gamma=1.0, cost=ENERGY_COST,
                               feedback_enabled=False, nbar=nbar)
        cfg = TrajectoryConfig(dt=0.002, t_final=0.8, seed=33, n_trajectories=64)
        out = run_resonator_cooling(sc, cfg, record_stride=10)
        slope, _ = np.polyfit(out.times, out.energy_curve, 1)
        d_extra = thermal_momentum_diffusion(nbar, 1.0, 1.0, CONST)
        assert slope == pytest.approx(oracles.heating_slope(1.0, d_extra, 1.0), abs=0.1)

    def test_ensemble_mean_matches_master_equation(self):
        """Averaging the conditioned trajectories must reproduce the
        unconditional master equation on every recorded observable."""
        basis = FockBasis(n_max=24, mass=1.0, omega=1.0)
        gamma = 2.0
        sc = ResonatorScenario(basis=basis, gamma=gamma, cost=ENERGY_COST,
                               feedback_enabled=False, nbar=0.0, initial_nbar=0.5)
        cfg = TrajectoryConfig(dt=0.002, t_final=1.0, seed=41, n_trajectories=128)
        out = run_resonator_cooling(sc, cfg, record_stride=50)

        ops = build_oscillator(basis, CONST)
        ell = (math.sqrt(gamma) / 2.0) * ops.x.entries
        rho0 = thermal_state(basis, 0.5).entries
        states = oracles.lindblad_propagate(ops.h.entries, [ell], rho0, out.times,
                                            hbar=CONST.hbar)
        parity_diag = (-1.0) ** np.arange(basis.dim)
        expected = {
            "energy": np.array([np.trace(s @ ops.h.entries).real for s in states]),
            "ground": np.array([s[0, 0].real for s in states]),
            "excited": np.array([s[1, 1].real for s in states]),
            "parity": np.array([(np.diag(s).real * parity_diag).sum() for s in states]),
        }
        curves = {
            "energy": (out.energy_curve, out.energy_stderr),
            "ground": (out.ground_pop_curve, out.ground_pop_stderr),
            "excited": (out.excited_pop_curve, out.excited_pop_stderr),
            "parity": (out.parity_curve, out.parity_stderr),
        }
        for name, (curve, se) in curves.items():
            assert np.all(np.abs(curve - expected[name]) <= 3.0 * se + 0.01), name

    def test_feedback_reaches_predicted_cost(self):
        """The co-simulated steady energy must land on the LQG cost
        prediction, with only a small share spent on the input penalty."""
        basis = FockBasis(n_max=32, mass=1.0, omega=1.0)
        sc = ResonatorScenario(basis=basis, gamma=4.0, cost=ENERGY_COST,
                               feedback_enabled=True, nbar=0.5)
        cfg = TrajectoryConfig(dt=0.005, t_final=6.0, seed=51, n_trajectories=64)
        out = run_resonator_cooling(sc, cfg, record_stride=40)
        gap = abs(out.steady_energy - out.predicted_steady_cost)
        assert gap <= max(4.0 * out.steady_energy_stderr,
                          0.06 * out.predicted_steady_cost)
        assert 0.0 < out.control_share < 0.05
        assert len(out.labels) == cfg.n_trajectories
        assert set(out.labels) <= {"ground", "firstExcited", "other"}

    def test_truncation_leak_raises(self):
        tiny = FockBasis(n_max=6, mass=1.0, omega=1.0)
        sc = ResonatorScenario(basis=tiny, gamma=1.0, cost=ENERGY_COST,
                               feedback_enabled=False, nbar=1.0)
        cfg = TrajectoryConfig(dt=0.005, t_final=0.1, seed=1, n_trajectories=2)
        with pytest.raises(TruncationLeak):
            run_resonator_cooling(sc, cfg)

    def test_record_stride_must_divide(self):
        sc = ResonatorScenario(basis=OSC_BASIS, gamma=1.0, cost=ENERGY_COST)
        cfg = TrajectoryConfig(dt=0.01, t_final=0.1, seed=1, n_trajectories=2)
        with pytest.raises(ValueError):
            run_resonator_cooling(sc, cfg, record_stride=3)


class TestBangBangDecision:
    def setup_method(self):
        self.ops = build_lattice(V_LOW, K, LATTICE_BASIS, CONST)

    def test_stationary_state_keeps_current_depth(self):
        _, vecs = grid_eigenstates(self.ops.h, 1)
        rho = DensityMatrix(np.outer(vecs[:, 0], vecs[:, 0].conj()))
        for current in (V_LOW, V_HIGH):
            got = bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, current, 1e-6,
                                     kinetic=self.ops.kinetic, rate_scale=TRIGGER_SCALE)
            assert got == current

    def test_threshold_brackets_ehrenfest_rate(self):
        """Hysteresis just below / above the independently computed trigger
        magnitude must flip / hold the decision, pinning the signal value."""
        for p0, expect in ((2.0, V_HIGH), (-2.0, V_LOW)):
            rho = gaussian_packet(LATTICE_BASIS, -np.pi / 4, p0, 0.25)
            vals, vecs = np.linalg.eigh(rho.entries)
            psi = vecs[:, -1]
            rate = oracles.ehrenfest_vop_rate(
                psi, self.ops.h.entries, np.cos(K * LATTICE_BASIS.points) ** 2,
                hbar=CONST.hbar,
            )
            ghat = rate / TRIGGER_SCALE
            assert abs(ghat) > 0.3
            current = V_LOW if expect == V_HIGH else V_HIGH
            flipped = bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, current,
                                         0.9 * abs(ghat), kinetic=self.ops.kinetic,
                                         rate_scale=TRIGGER_SCALE)
            held = bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, current,
                                      1.1 * abs(ghat), kinetic=self.ops.kinetic,
                                      rate_scale=TRIGGER_SCALE)
            assert flipped == expect
            assert held == current

    def test_huge_hysteresis_never_switches(self):
        rho = gaussian_packet(LATTICE_BASIS, -np.pi / 4, 2.0, 0.25)
        got = bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, V_LOW, 1e9,
                                 kinetic=self.ops.kinetic, rate_scale=TRIGGER_SCALE)
        assert got == V_LOW

    def test_dimension_mismatch(self):
        rho = DensityMatrix(0.5 * np.eye(2))
        with pytest.raises(DimensionMismatch):
            bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, V_LOW, 0.1,
                               kinetic=self.ops.kinetic)

    def test_unknown_current_depth(self):
        rho = gaussian_packet(LATTICE_BASIS, 0.0, 0.0, 0.25)
        with pytest.raises(ValueError):
            bang_bang_decision(rho, self.ops.vop, V_LOW, V_HIGH, 7.0, 0.1,
                               kinetic=self.ops.kinetic)


@pytest.fixture(scope="module")
def atom_runs():
    cfg = TrajectoryConfig(dt=0.002, t_final=8.0, seed=7, n_trajectories=64)
    switching = run_atom_cooling(_atom_scenario(), cfg, record_stride=40)
    frozen = run_atom_cooling(_atom_scenario(switch_hysteresis=1e9), cfg,
                              record_stride=40)
    return switching, frozen


class TestAtomCooling:
    def test_unmeasured_mixture_is_stationary(self):
        sc = _atom_scenario(gamma=0.0)
        cfg = TrajectoryConfig(dt=0.002, t_final=1.0, seed=3, n_trajectories=2)
        out = run_atom_cooling(sc, cfg, record_stride=25)
        assert np.abs(out.energy_curve - out.energy_curve[0]).max() < 1e-8
        assert np.abs(out.parity_curve).max() < 1e-9
        w = np.asarray(sc.band_weights)
        assert np.abs(out.purity_curve - (w @ w)).max() < 1e-9
        assert out.switch_counts.sum() == 0

    def test_measurement_purifies_mixture(self, atom_runs):
        switching, _ = atom_runs
        w = np.asarray(_atom_scenario().band_weights)
        assert switching.purity_curve[0] == pytest.approx(float(w @ w), abs=1e-9)
        assert np.median(switching.final_purity) > 0.75
        assert switching.purity_curve[-1] > switching.purity_curve[0] + 0.3

    def test_mean_parity_is_conserved(self, atom_runs):
        switching, _ = atom_runs
        dev = np.abs(switching.parity_curve - switching.parity_curve[0])
        assert np.all(dev <= 3.0 * switching.parity_stderr + 0.01)

    def test_switching_slows_heating(self, atom_runs):
        switching, frozen = atom_runs
        assert frozen.switch_counts.sum() == 0
        gap = frozen.energy_curve[-1] - switching.energy_curve[-1]
        se = math.hypot(frozen.energy_stderr[-1], switching.energy_stderr[-1])
        assert gap > 2.5 * se

    def test_dwell_times_respect_hysteresis_bound(self, atom_runs):
        switching, _ = atom_runs
        switched = switching.switch_counts > 0
        assert switched.any()
        product = (switching.min_dwell_times[switched]
                   * switching.max_trigger_rates[switched])
        assert np.all(product >= 2.0 * switching.hysteresis * 0.99)

    def test_labels_partition_trajectories(self, atom_runs):
        switching, _ = atom_runs
        assert len(switching.labels) == 64
        assert set(switching.labels) <= {"ground", "firstExcited", "other"}

    def test_deep_well_must_be_resolved(self):
        coarse = GridBasis(x_min=-np.pi / 2, x_max=np.pi / 2, n_points=16, mass=1.0)
        sc = _atom_scenario(basis=coarse)
        cfg = TrajectoryConfig(dt=0.002, t_final=0.1, seed=1, n_trajectories=1)
        with pytest.raises(GridUnderResolved):
            run_atom_cooling(sc, cfg)

    def test_record_stride_must_divide(self):
        cfg = TrajectoryConfig(dt=0.002, t_final=0.1, seed=1, n_trajectories=1)
        with pytest.raises(ValueError):
            run_atom_cooling(_atom_scenario(), cfg, record_stride=7)
