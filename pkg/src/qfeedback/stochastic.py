"""Trajectory noise generation and the ensemble runner.

Noise is counter-based: every draw call is keyed by (stream seed, call
counter) through a Philox generator, so any block of increments can be
regenerated independently of how earlier blocks were sized.  Trajectory i
of an ensemble gets its own 64-bit seed derived from the master seed and
i, which makes results independent of worker count and lets workers run
without shared state.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import NonPositiveGamma, TrajectoryFailure

__all__ = [
    "block_generator",
    "NoiseStream",
    "wiener_increments",
    "trajectory_seed",
    "MeasurementRecord",
    "synthesize_record",
    "innovations_from_record",
    "TrajectoryConfig",
    "EnsembleResult",
    "run_ensemble",
]


def block_generator(seed: int, counter: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, counter); same key, same stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(counter),))
    return np.random.Generator(np.random.Philox(ss))


_block_rng = block_generator


@dataclass
class NoiseStream:
    """Source of Wiener increments for one trajectory.

    seed: 64-bit stream identity.  dt: step size the increments are scaled
    for.  counter: number of draw calls made so far; the increments
    returned by call k are a pure function of (seed, k).
    """

    seed: int
    dt: float
    counter: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def draw(self, n: int) -> np.ndarray:
        """n Gaussian increments with variance dt; advances the counter."""
        if n < 0:
            raise ValueError("n must be >= 0")
        rng = _block_rng(self.seed, self.counter)
        self.counter += 1
        return rng.normal(0.0, math.sqrt(self.dt), size=n)


def wiener_increments(stream: NoiseStream, n: int) -> np.ndarray:
    """Draw n increments from the stream (one counter tick)."""
    return stream.draw(n)


def trajectory_seed(master_seed: int, index: int) -> int:
    """Derive the 64-bit seed for trajectory `index` from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MeasurementRecord:
    """A measurement record: increments dr over uniform steps dt.

    dr = <x> dt + dW / sqrt(gamma) links the record to the conditional
    mean and the innovation dW.
    """

    dt: float
    gamma: float
    increments: np.ndarray

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.gamma > 0.0:
            raise NonPositiveGamma(f"gamma must be positive, got {self.gamma}")
        inc = np.asarray(self.increments, dtype=float)
        if not np.all(np.isfinite(inc)):
            raise ValueError("record increments must be finite")
        object.__setattr__(self, "increments", inc)


def synthesize_record(mean_x, gamma: float, dw, dt: float):
    """Record increment dr = mean_x dt + dW / sqrt(gamma).

    Works elementwise on arrays so a whole trajectory can be converted in
    one call.
    """
    if not gamma > 0.0:
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
    return np.asarray(mean_x) * dt + np.asarray(dw) / math.sqrt(gamma)


def innovations_from_record(record: MeasurementRecord, means) -> np.ndarray:
    """Invert synthesize_record: dW = sqrt(gamma) (dr - <x> dt)."""
    return math.sqrt(record.gamma) * (record.increments - np.asarray(means) * record.dt)


@dataclass(frozen=True)
class TrajectoryConfig:
    """Shared integration parameters for an ensemble run."""

    dt: float
    t_final: float
    seed: int
    n_trajectories: int = 1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.t_final > self.dt:
            raise ValueError("t_final must exceed dt")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class EnsembleResult:
    """Ensemble statistics on the recorded time grid.

    means/variances/stderrs map observable name -> array over times.
    per_trajectory is (n_traj, n_times) per observable when requested.
    """

    times: np.ndarray
    means: dict[str, np.ndarray]
    variances: dict[str, np.ndarray]
    stderrs: dict[str, np.ndarray]
    n_trajectories: int
    per_trajectory: dict[str, np.ndarray] = field(default_factory=dict)


def _run_one(args) -> np.ndarray:
    stepper, initial_state, config, obs_fns, stride, index = args
    stream = NoiseStream(trajectory_seed(config.seed, index), config.dt)
    dws = stream.draw(config.n_steps)
    state = initial_state
    n_rec = config.n_steps // stride + 1
    out = np.empty((len(obs_fns), n_rec))
    try:
        for k, fn in enumerate(obs_fns):
            out[k, 0] = fn(state)
        rec = 1
        t = 0.0
        for i in range(config.n_steps):
            state = stepper(state, dws[i], t)
            t += config.dt
            if (i + 1) % stride == 0:
                for k, fn in enumerate(obs_fns):
                    out[k, rec] = fn(state)
                rec += 1
    except Exception as exc:  # noqa: BLE001 - re-raised with trajectory context
        raise TrajectoryFailure(f"trajectory {index} failed: {exc}", index) from exc
    return out


def run_ensemble(
    stepper: Callable[[Any, float, float], Any],
    initial_state: Any,
    config: TrajectoryConfig,
    observables: Mapping[str, Callable[[Any], float]],
    n_workers: int = 1,
    record_stride: int = 1,
    keep_per_trajectory: bool = False,
) -> EnsembleResult:
    """Integrate an ensemble of trajectories and aggregate observables.

    stepper(state, dW, t) advances one step.  Observables are evaluated at
    t=0 and every record_stride-th step.  Trajectory i always consumes the
    noise of stream trajectory_seed(seed, i), and aggregation runs in
    trajectory order, so results are bit-identical for any n_workers.
    With n_workers > 1 the stepper and states must be picklable.
    """
    if config.n_steps % record_stride != 0:
        raise ValueError("record_stride must divide the step count")
    names = list(observables)
    obs_fns = [observables[k] for k in names]
    jobs = [
        (stepper, initial_state, config, obs_fns, record_stride, i)
        for i in range(config.n_trajectories)
    ]
    if n_workers > 1 and config.n_trajectories > 1:
        chunk = max(1, config.n_trajectories // (4 * n_workers))
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            curves = list(pool.map(_run_one, jobs, chunksize=chunk))
    else:
        curves = [_run_one(j) for j in jobs]

    n_rec = config.n_steps // record_stride + 1
    times = np.arange(n_rec) * (config.dt * record_stride)
    n = config.n_trajectories
    sums = np.zeros((len(names), n_rec))
    sq_sums = np.zeros((len(names), n_rec))
    for curve in curves:  # fixed trajectory order: worker-count invariant
        sums += curve
        sq_sums += curve**2
    means = sums / n
    variances = np.maximum(sq_sums / n - means**2, 0.0)
    if n > 1:
        variances *= n / (n - 1)
    stderrs = np.sqrt(variances / n)
    result = EnsembleResult(
        times=times,
        means={k: means[i] for i, k in enumerate(names)},
        variances={k: variances[i] for i, k in enumerate(names)},
        stderrs={k: stderrs[i] for i, k in enumerate(names)},
        n_trajectories=n,
    )
    if keep_per_trajectory:
        stacked = np.stack(curves)  # (n_traj, n_obs, n_rec)
        result.per_trajectory = {k: stacked[:, i, :] for i, k in enumerate(names)}
    return result
