"""Batch runner: parse a JSON scenario config, execute it, write results.

One config file drives one run.  Top level keys: "scenario" (registry
name), "seed" (mandatory integer; there is no wall-clock default),
"parameters" (scenario-specific map) and optionally "output_dir".
Unknown keys anywhere are errors, so configs cannot silently drift.

Outputs are a summary.json (sorted keys) plus one CSV per named curve
with header ``time,<name>,<name>_stderr`` and full-precision floats.
For the gamma-scan the first column holds the measurement strength
rather than time; the header is kept uniform so downstream plotting
stays generic.  Runtime is logged to stderr only, keeping output files
byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import argparse
import functools
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np

from . import __version__
from .adaptive import (
    DolinarConfig,
    dolinar_simulate,
    fixed_policy,
    helstrom_bound,
    optimal_static_beta,
    purification_experiment,
    rapid_policy,
)
from .cooling import (
    AtomLatticeScenario,
    ResonatorScenario,
    run_atom_cooling,
    run_resonator_cooling,
    thermal_momentum_diffusion,
)
from .errors import MissingKey, UnknownKey, UnknownScenario
from .filters import (
    GaussianBelief,
    kalman_bucy_step,
    measured_oscillator_model,
    sme_step_raw,
)
from .lqg import QuadraticCost, optimize_measurement_strength, synthesize_lqg
from .states import (
    FockBasis,
    GridBasis,
    PhysicalConstants,
    build_oscillator,
    coherent_state,
    pauli_operators,
    qubit_density,
)
from .stochastic import NoiseStream, TrajectoryConfig, run_ensemble, trajectory_seed

__all__ = [
    "RunConfig",
    "Curve",
    "ScenarioResult",
    "parse_config",
    "run_scenario",
    "write_results",
    "main",
]


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    seed: int
    parameters: dict[str, Any]
    output_dir: str | None = None


class Curve(NamedTuple):
    """One named time series; for scan scenarios the grid axis replaces
    time in the first column."""

    grid: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray


@dataclass
class ScenarioResult:
    scenario: str
    metadata: dict[str, Any]
    curves: dict[str, Curve] = field(default_factory=dict)
    scalars: dict[str, dict[str, float]] = field(default_factory=dict)
    per_trajectory: dict[str, list] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# scenario implementations


def _qubit_sme_stepper(state, dw, t, h, x, gamma, dt, hbar):
    new, _ = sme_step_raw(state, h, x, gamma, dw, dt, hbar=hbar)
    return new


def _bloch_obs(state, op):
    return float(np.trace(op @ state).real)


def _run_sme_vs_lindblad(params: dict, seed: int) -> ScenarioResult:
    constants = PhysicalConstants()
    omega, gamma = float(params["omega"]), float(params["gamma"])
    config = TrajectoryConfig(
        dt=float(params["dt"]),
        t_final=float(params["t_final"]),
        seed=seed,
        n_trajectories=int(params["n_trajectories"]),
    )
    stride = int(params.get("record_stride", 1))
    workers = int(params.get("workers", 1))
    pauli = pauli_operators()
    h = 0.5 * constants.hbar * omega * pauli["z"].entries
    x = pauli["z"].entries
    rho0 = qubit_density(np.array([1.0, 0.0, 0.0])).entries
    stepper = functools.partial(
        _qubit_sme_stepper, h=h, x=x, gamma=gamma, dt=config.dt, hbar=constants.hbar
    )
    observables = {
        name: functools.partial(_bloch_obs, op=pauli[name].entries)
        for name in ("x", "y", "z")
    }
    ens = run_ensemble(stepper, rho0, config, observables, n_workers=workers,
                       record_stride=stride)

    # dW-averaged reference: same stepper with the noise forced to zero
    ref = rho0
    refs = {name: [_bloch_obs(ref, pauli[name].entries)] for name in ("x", "y", "z")}
    for k in range(config.n_steps):
        ref, _ = sme_step_raw(ref, h, x, gamma, 0.0, config.dt, hbar=constants.hbar)
        if (k + 1) % stride == 0:
            for name in ("x", "y", "z"):
                refs[name].append(_bloch_obs(ref, pauli[name].entries))

    curves = {}
    zeros = np.zeros_like(ens.times)
    dist_sq = np.zeros_like(ens.times)
    for name in ("x", "y", "z"):
        curves[f"bloch_{name}"] = Curve(ens.times, ens.means[name], ens.stderrs[name])
        ref_arr = np.asarray(refs[name])
        curves[f"reference_{name}"] = Curve(ens.times, ref_arr, zeros)
        dist_sq += (ens.means[name] - ref_arr) ** 2
    trace_dist = 0.5 * np.sqrt(dist_sq)
    curves["trace_distance"] = Curve(ens.times, trace_dist, zeros)

    result = ScenarioResult(scenario="sme-vs-lindblad", metadata={})
    result.curves = curves
    result.scalars = {
        "final_trace_distance": {"value": float(trace_dist[-1]), "tolerance": 0.02},
    }
    return result


def _run_filter_equivalence(params: dict, seed: int) -> ScenarioResult:
    constants = PhysicalConstants()
    basis = FockBasis(
        n_max=int(params["n_max"]), mass=float(params["mass"]), omega=float(params["omega"])
    )
    gamma = float(params["gamma"])
    x0, p0 = float(params["x0"]), float(params["p0"])
    dt, t_final = float(params["dt"]), float(params["t_final"])
    stride = int(params.get("record_stride", 1))
    n_steps = int(round(t_final / dt))
    if n_steps % stride:
        raise ValueError("record_stride must divide the step count")

    ops = build_oscillator(basis, constants)
    h0, xop = ops.h.entries, ops.x.entries
    x2 = xop @ xop
    pop = ops.p.entries
    p2 = pop @ pop
    rho = coherent_state(basis, x0, p0, constants).entries
    model = measured_oscillator_model(basis.mass, basis.omega, gamma, constants)
    hbar = constants.hbar
    vac = np.diag(
        [hbar / (2.0 * basis.mass * basis.omega), hbar * basis.mass * basis.omega / 2.0]
    )
    belief = GaussianBelief(mean=np.array([x0, p0]), cov=vac)
    stream = NoiseStream(trajectory_seed(seed, 0), dt)
    dws = stream.draw(n_steps)

    def moments(r):
        mx = float(np.trace(xop @ r).real)
        mp = float(np.trace(pop @ r).real)
        vx = float(np.trace(x2 @ r).real) - mx * mx
        vp = float(np.trace(p2 @ r).real) - mp * mp
        return mx, mp, vx, vp

    names = ("mean_x", "mean_p", "var_x", "var_p")
    rows_sme = [moments(rho)]
    rows_kb = [(belief.mean[0], belief.mean[1], belief.cov[0, 0], belief.cov[1, 1])]
    for k in range(n_steps):
        rho, mean_x = sme_step_raw(rho, h0, xop, gamma, dws[k], dt, hbar=hbar)
        dr = mean_x * dt + dws[k] / math.sqrt(gamma)
        belief = kalman_bucy_step(belief, model, dr, dt)
        if (k + 1) % stride == 0:
            rows_sme.append(moments(rho))
            rows_kb.append(
                (belief.mean[0], belief.mean[1], belief.cov[0, 0], belief.cov[1, 1])
            )
    sme = np.asarray(rows_sme)
    kb = np.asarray(rows_kb)
    times = np.arange(sme.shape[0]) * (dt * stride)
    zeros = np.zeros_like(times)

    result = ScenarioResult(scenario="filter-equivalence", metadata={})
    for j, name in enumerate(names):
        result.curves[f"sme_{name}"] = Curve(times, sme[:, j], zeros)
        result.curves[f"kb_{name}"] = Curve(times, kb[:, j], zeros)
    # settled-window mismatch, normalized by the signal scale
    settle = times >= 0.5 * times[-1]
    for j, name in enumerate(names):
        diff = sme[settle, j] - kb[settle, j]
        scale = (
            math.sqrt(float(np.mean(sme[settle, j] ** 2)))
            if name.startswith("mean")
            else float(np.mean(sme[settle, j]))
        )
        rms = math.sqrt(float(np.mean(diff**2))) / max(scale, 1e-300)
        result.scalars[f"rms_error_{name}"] = {"value": rms, "tolerance": 0.02}
    return result


def _run_rapid_purification(params: dict, seed: int) -> ScenarioResult:
    gamma = float(params["gamma"])
    config = TrajectoryConfig(
        dt=float(params["dt"]),
        t_final=float(params["t_final"]),
        seed=seed,
        n_trajectories=int(params["n_trajectories"]),
    )
    stride = int(params.get("record_stride", 1))
    target = params.get("target_purity")
    target = None if target is None else float(target)

    stats = {}
    for name, policy in (("fixed", fixed_policy()), ("rapid", rapid_policy())):
        stats[name] = purification_experiment(
            policy, gamma, config, target_purity=target, record_stride=stride
        )

    result = ScenarioResult(scenario="rapid-purification", metadata={})
    zeros = np.zeros_like(stats["fixed"].times)
    for name, st in stats.items():
        se = np.sqrt(st.entropy_variance / st.n_trajectories)
        result.curves[f"entropy_{name}"] = Curve(st.times, st.avg_entropy, se)
        result.curves[f"log_impurity_{name}"] = Curve(st.times, st.avg_log_impurity, zeros)
        result.scalars[f"decay_rate_{name}"] = {
            "value": st.impurity_decay_rate,
            "stderr": 0.0,
        }
    ratio = stats["rapid"].impurity_decay_rate / stats["fixed"].impurity_decay_rate
    result.scalars["decay_rate_ratio"] = {"value": ratio, "tolerance": 0.2}
    if target is not None:
        for name, st in stats.items():
            hits = st.hitting_times
            result.scalars[f"mean_hitting_time_{name}"] = {
                "value": float(hits.mean()),
                "stderr": float(hits.std(ddof=1) / math.sqrt(hits.size)),
            }
        result.scalars["hitting_time_ratio"] = {
            "value": float(
                stats["rapid"].hitting_times.mean() / stats["fixed"].hitting_times.mean()
            ),
            "tolerance": 0.3,
        }
    return result


def _run_dolinar(params: dict, seed: int) -> ScenarioResult:
    cfg = DolinarConfig(
        alpha=float(params["alpha"]),
        pulse_duration=float(params["pulse_duration"]),
        n_segments=int(params["n_segments"]),
        prior=float(params["prior"]),
        beta_max=float(params["beta_max"]) if "beta_max" in params else None,
    )
    trials = int(params["trials"])
    rate, se = dolinar_simulate(cfg, seed, trials)

    # two-state floor for the same pair of pulses
    dim = max(16, int(cfg.alpha**2 + 8.0 * cfg.alpha + 10.0))
    basis = FockBasis(n_max=dim, mass=1.0, omega=1.0)
    rho0 = coherent_state(basis, 0.0, 0.0)
    rho1 = coherent_state(basis, math.sqrt(2.0) * cfg.alpha, 0.0)
    floor = helstrom_bound(rho0, rho1, cfg.prior)

    result = ScenarioResult(scenario="dolinar", metadata={})
    result.scalars = {
        "error_rate": {"value": rate, "stderr": se},
        "helstrom_bound": {"value": floor, "tolerance": 3.0 * se},
    }
    if bool(params.get("include_static", False)):
        beta, analytic = optimal_static_beta(cfg)
        static_rate, static_se = dolinar_simulate(cfg, seed, trials, static_beta=beta)
        result.scalars["static_error_rate"] = {"value": static_rate, "stderr": static_se}
        result.scalars["static_error_analytic"] = {"value": analytic, "stderr": 0.0}
        result.scalars["static_beta"] = {"value": beta, "stderr": 0.0}
    return result


def _energy_cost(mass: float, omega: float, control_cost: float) -> QuadraticCost:
    q = np.diag([0.5 * mass * omega**2, 0.5 / mass])
    return QuadraticCost(q=q, r=control_cost)


def _run_resonator_cooling(params: dict, seed: int) -> ScenarioResult:
    basis = FockBasis(
        n_max=int(params["n_max"]), mass=float(params["mass"]), omega=float(params["omega"])
    )
    scenario = ResonatorScenario(
        basis=basis,
        gamma=float(params["gamma"]),
        cost=_energy_cost(basis.mass, basis.omega, float(params["control_cost"])),
        feedback_enabled=bool(params.get("feedback", True)),
        nbar=float(params["nbar"]),
        initial_nbar=(
            float(params["initial_nbar"]) if "initial_nbar" in params else None
        ),
    )
    config = TrajectoryConfig(
        dt=float(params["dt"]),
        t_final=float(params["t_final"]),
        seed=seed,
        n_trajectories=int(params["n_trajectories"]),
    )
    out = run_resonator_cooling(scenario, config, int(params.get("record_stride", 1)))

    result = ScenarioResult(scenario="resonator-cooling", metadata={})
    for name in ("energy", "ground_pop", "excited_pop", "parity"):
        result.curves[name] = Curve(
            out.times, getattr(out, f"{name}_curve"), getattr(out, f"{name}_stderr")
        )
    result.scalars = {
        "steady_energy": {"value": out.steady_energy, "stderr": out.steady_energy_stderr},
        "predicted_steady_cost": {"value": out.predicted_steady_cost, "tolerance": 0.05},
        "control_share": {"value": out.control_share, "tolerance": 0.02},
    }
    result.per_trajectory["label"] = list(out.labels)
    return result


def _run_atom_cooling(params: dict, seed: int) -> ScenarioResult:
    k = float(params["k"])
    half_period = 0.5 * math.pi / k
    basis = GridBasis(
        x_min=-half_period,
        x_max=half_period,
        n_points=int(params["n_points"]),
        mass=float(params["mass"]),
    )
    scenario = AtomLatticeScenario(
        v_low=float(params["v_low"]),
        v_high=float(params["v_high"]),
        k=k,
        basis=basis,
        gamma=float(params["gamma"]),
        switch_hysteresis=float(params["hysteresis"]),
        rate_scale=float(params["rate_scale"]) if "rate_scale" in params else None,
    )
    config = TrajectoryConfig(
        dt=float(params["dt"]),
        t_final=float(params["t_final"]),
        seed=seed,
        n_trajectories=int(params["n_trajectories"]),
    )
    out = run_atom_cooling(scenario, config, int(params.get("record_stride", 1)))

    result = ScenarioResult(scenario="atom-cooling", metadata={})
    for name in ("energy", "ground_pop", "excited_pop", "parity", "purity"):
        result.curves[name] = Curve(
            out.times, getattr(out, f"{name}_curve"), getattr(out, f"{name}_stderr")
        )
    counts = {lab: out.labels.count(lab) for lab in ("ground", "firstExcited", "other")}
    n = len(out.labels)
    split_se = math.sqrt(0.25 / max(counts["ground"] + counts["firstExcited"], 1))
    result.scalars = {
        "n_ground": {"value": float(counts["ground"]), "stderr": 0.0},
        "n_first_excited": {"value": float(counts["firstExcited"]), "stderr": 0.0},
        "n_other": {"value": float(counts["other"]), "stderr": 0.0},
        "ground_fraction_of_split": {
            "value": counts["ground"] / max(counts["ground"] + counts["firstExcited"], 1),
            "stderr": split_se,
        },
        "median_final_purity": {
            "value": float(np.median(out.final_purity)),
            "tolerance": 0.05,
        },
        "parity_drift": {
            "value": float(out.parity_curve[-1] - out.parity_curve[0]),
            "stderr": float(
                math.hypot(float(out.parity_stderr[-1]), float(out.parity_stderr[0]))
            ),
        },
    }
    result.per_trajectory["label"] = list(out.labels)
    result.per_trajectory["final_purity"] = [float(v) for v in out.final_purity]
    result.per_trajectory["switch_count"] = [int(v) for v in out.switch_counts]
    return result


def _run_gamma_scan(params: dict, seed: int) -> ScenarioResult:
    mass, omega = float(params["mass"]), float(params["omega"])
    nbar = float(params["nbar"])
    cost = _energy_cost(mass, omega, float(params["control_cost"]))
    constants = PhysicalConstants()
    d_th = thermal_momentum_diffusion(nbar, mass, omega, constants)

    def cost_of(gamma: float) -> float:
        model = measured_oscillator_model(
            mass, omega, gamma, constants, extra_momentum_diffusion=d_th
        )
        return synthesize_lqg(model, cost).predicted_steady_cost

    opt = optimize_measurement_strength(
        cost_of,
        float(params["gamma_min"]),
        float(params["gamma_max"]),
        n_grid=int(params["n_grid"]),
    )
    result = ScenarioResult(scenario="gamma-scan", metadata={})
    result.curves["cost"] = Curve(
        np.asarray(opt.gammas), np.asarray(opt.costs), np.zeros(len(opt.gammas))
    )
    result.scalars = {
        "gamma_opt": {"value": opt.gamma_opt, "rel_tol": 1e-3},
        "cost_opt": {"value": opt.cost_opt, "rel_tol": 1e-3},
    }
    return result


# ---------------------------------------------------------------------------
# registry / front-end


@dataclass(frozen=True)
class _Entry:
    required: frozenset
    optional: frozenset
    size_key: str | None
    run: Callable[[dict, int], ScenarioResult]


_REGISTRY: dict[str, _Entry] = {
    "sme-vs-lindblad": _Entry(
        frozenset({"omega", "gamma", "t_final", "dt", "n_trajectories"}),
        frozenset({"workers", "record_stride"}),
        "n_trajectories",
        _run_sme_vs_lindblad,
    ),
    "filter-equivalence": _Entry(
        frozenset({"n_max", "mass", "omega", "gamma", "x0", "p0", "t_final", "dt"}),
        frozenset({"workers", "record_stride"}),
        None,
        _run_filter_equivalence,
    ),
    "rapid-purification": _Entry(
        frozenset({"gamma", "t_final", "dt", "n_trajectories"}),
        frozenset({"workers", "record_stride", "target_purity"}),
        "n_trajectories",
        _run_rapid_purification,
    ),
    "dolinar": _Entry(
        frozenset({"alpha", "pulse_duration", "n_segments", "prior", "trials"}),
        frozenset({"workers", "include_static", "beta_max"}),
        "trials",
        _run_dolinar,
    ),
    "resonator-cooling": _Entry(
        frozenset(
            {"n_max", "mass", "omega", "gamma", "nbar", "control_cost",
             "t_final", "dt", "n_trajectories"}
        ),
        frozenset({"workers", "record_stride", "feedback", "initial_nbar"}),
        "n_trajectories",
        _run_resonator_cooling,
    ),
    "atom-cooling": _Entry(
        frozenset(
            {"v_low", "v_high", "k", "n_points", "mass", "gamma", "hysteresis",
             "t_final", "dt", "n_trajectories"}
        ),
        frozenset({"workers", "record_stride", "rate_scale"}),
        "n_trajectories",
        _run_atom_cooling,
    ),
    "gamma-scan": _Entry(
        frozenset(
            {"mass", "omega", "nbar", "control_cost", "gamma_min", "gamma_max", "n_grid"}
        ),
        frozenset({"workers"}),
        None,
        _run_gamma_scan,
    ),
}

_TOP_KEYS = {"scenario", "seed", "parameters", "output_dir"}


def parse_config(path: str) -> RunConfig:
    """Load and validate a run config; every key is checked."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise UnknownKey("config root must be a JSON object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise UnknownKey(f"unknown top-level keys: {sorted(extra)}")
    for key in ("scenario", "seed"):
        if key not in raw:
            raise MissingKey(f"config is missing required key {key!r}")
    name = raw["scenario"]
    if name not in _REGISTRY:
        raise UnknownScenario(
            f"scenario {name!r} not in registry {sorted(_REGISTRY)}"
        )
    params = raw.get("parameters", {})
    if not isinstance(params, dict):
        raise UnknownKey("parameters must be a JSON object")
    entry = _REGISTRY[name]
    missing = entry.required - set(params)
    if missing:
        raise MissingKey(f"scenario {name!r} missing parameters: {sorted(missing)}")
    unknown = set(params) - entry.required - entry.optional
    if unknown:
        raise UnknownKey(f"scenario {name!r} got unknown parameters: {sorted(unknown)}")
    return RunConfig(
        scenario=name,
        seed=int(raw["seed"]),
        parameters=dict(params),
        output_dir=raw.get("output_dir"),
    )


def run_scenario(cfg: RunConfig) -> ScenarioResult:
    """Dispatch to the scenario implementation; fully seed-determined."""
    entry = _REGISTRY[cfg.scenario]
    result = entry.run(cfg.parameters, cfg.seed)
    result.metadata = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "parameters": cfg.parameters,
        "version": __version__,
    }
    return result


def write_results(result: ScenarioResult, out_dir: str) -> list[str]:
    """Write summary.json plus one CSV per curve; idempotent overwrite."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = {
        "scenario": result.scenario,
        "metadata": result.metadata,
        "scalars": result.scalars,
        "per_trajectory": result.per_trajectory,
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(str(summary_path))
    for name, curve in sorted(result.curves.items()):
        path = out / f"{name}.csv"
        lines = [f"time,{name},{name}_stderr"]
        for t, v, s in zip(curve.grid, curve.values, curve.stderrs):
            lines.append(f"{float(t)!r},{float(v)!r},{float(s)!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))
    return written


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qfeedback")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a scenario config")
    runp.add_argument("config", help="path to a JSON run config")
    runp.add_argument("--out", default=None, help="output directory override")
    runp.add_argument("--trajectories", type=int, default=None,
                      help="ensemble size override")
    runp.add_argument("--seed", type=int, default=None, help="seed override")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(cfg.scenario, int(args.seed), cfg.parameters, cfg.output_dir)
        if args.trajectories is not None:
            key = _REGISTRY[cfg.scenario].size_key
            if key is None:
                raise UnknownKey(
                    f"scenario {cfg.scenario!r} has no ensemble size to override"
                )
            params = dict(cfg.parameters)
            params[key] = int(args.trajectories)
            cfg = RunConfig(cfg.scenario, cfg.seed, params, cfg.output_dir)
        out_dir = args.out or cfg.output_dir or "results"
        started = time.monotonic()
        result = run_scenario(cfg)
        files = write_results(result, out_dir)
        elapsed = time.monotonic() - started
        print(
            f"{cfg.scenario}: wrote {len(files)} files to {out_dir} "
            f"({elapsed:.1f}s)",
            file=sys.stderr,
        )
        return 0
    except Exception as exc:  # noqa: BLE001 - single machine-readable error line
        line = json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
        )
        print(line, file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
