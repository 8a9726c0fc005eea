"""Conditional-state propagation under a continuous position-type record.

Three filters share the record convention dr = <x> dt + dW / sqrt(gamma):

* ``sme_step``: full quantum conditional state (density matrix),
  d rho = -(i/hbar)[H, rho] dt - (gamma/8)[X, [X, rho]] dt
          + (sqrt(gamma)/2) ({X - <x>, rho}) dW.
* ``ks_grid_step``: classical Bayesian filter for a phase-space density,
  dP = [-(p/m) d/dx - F d/dp] P dt + sqrt(gamma) (x - <x>) P dW.
* ``kalman_bucy_step``: Gaussian mean/covariance filter for linear models;
  the quantum conditional moments of a measured harmonic oscillator obey
  exactly this filter once measurement back-action enters as momentum
  diffusion hbar^2 gamma / 4 (see ``measured_oscillator_model``).

All steppers consume the innovation increment dW directly (co-simulation
mode); record-driven use recovers dW = sqrt(gamma)(dr - <x> dt) first.

Integration scheme: deterministic drift advanced by an explicit midpoint
evaluation, diffusion by Euler-Maruyama on the pre-step state, then
hermitization, trace renormalization and positivity repair.  The midpoint
drift matters: plain Euler inflates the Bloch vector by O(dt^2) per step
and trips the positivity guard in long unitary runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    CFLViolation,
    CovarianceBlowup,
    DimensionMismatch,
    GridUnderResolved,
    NegativeDensity,
    NonPositiveGamma,
)
from .states import DensityMatrix, ObservableOperator, PhysicalConstants, repair_psd

__all__ = [
    "GaussianBelief",
    "GridBelief",
    "LinearMeasuredModel",
    "measured_oscillator_model",
    "sme_step",
    "sme_step_raw",
    "ks_grid_step",
    "kalman_bucy_step",
]

DENSITY_CLIP = -1e-9
MIN_CELLS_PER_SIGMA = 8.0


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian posterior over (position, momentum)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise DimensionMismatch(f"need mean (2,), cov (2,2); got {mean.shape}, {cov.shape}")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise CovarianceBlowup("covariance not symmetric within 1e-12")
        if float(np.linalg.eigvalsh(cov)[0]) < -1e-10:
            raise CovarianceBlowup("covariance has eigenvalue below -1e-10")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class GridBelief:
    """Phase-space density on a rectangular (x, p) grid.

    density[i, j] is the probability density at (x[i], p[j]); cell mass is
    density * dx * dp and must sum to 1 within 1e-6.
    """

    x: np.ndarray
    p: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if d.shape != (x.size, p.size):
            raise DimensionMismatch(f"density {d.shape} does not match axes {(x.size, p.size)}")
        if np.min(d) < DENSITY_CLIP:
            raise NegativeDensity(f"density minimum {np.min(d):.3e} below {DENSITY_CLIP}")
        d = np.clip(d, 0.0, None)
        mass = d.sum() * self.dx_of(x) * self.dx_of(p)
        if abs(mass - 1.0) > 1e-6:
            raise NegativeDensity(f"density mass {mass!r} differs from 1 by > 1e-6")
        for arr in (x, p, d):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "density", d)

    @staticmethod
    def dx_of(axis: np.ndarray) -> float:
        return float(axis[1] - axis[0])

    @property
    def dx(self) -> float:
        return self.dx_of(self.x)

    @property
    def dp(self) -> float:
        return self.dx_of(self.p)

    def marginal_x(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.dp

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance of the density."""
        w = self.density * self.dx * self.dp
        mx = float(np.sum(w.sum(axis=1) * self.x))
        mp = float(np.sum(w.sum(axis=0) * self.p))
        dxs = self.x - mx
        dps = self.p - mp
        vx = float(np.sum(w.sum(axis=1) * dxs**2))
        vp = float(np.sum(w.sum(axis=0) * dps**2))
        cxp = float(dxs @ w @ dps)
        return np.array([mx, mp]), np.array([[vx, cxp], [cxp, vp]])


@dataclass(frozen=True)
class LinearMeasuredModel:
    """Linear dynamics dX = (A X + B u) dt + noise, record on c . X.

    diffusion is the process-noise intensity matrix; gamma sets the record
    noise 1/gamma.  For a quantum oscillator the back-action contributes
    hbar^2 gamma / 4 of momentum diffusion.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    gamma: float
    diffusion: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        d = np.asarray(self.diffusion, dtype=float)
        if a.shape != (2, 2) or b.shape != (2,) or c.shape != (2,) or d.shape != (2, 2):
            raise DimensionMismatch("model arrays must be A(2,2), B(2,), c(2,), diffusion(2,2)")
        if not self.gamma > 0.0:
            raise NonPositiveGamma(f"gamma must be positive, got {self.gamma}")
        if np.max(np.abs(d - d.T)) > 1e-12 or float(np.linalg.eigvalsh(d)[0]) < -1e-12:
            raise DimensionMismatch("diffusion must be symmetric PSD")
        for arr in (a, b, c, d):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "diffusion", d)


def measured_oscillator_model(
    mass: float,
    omega: float,
    gamma: float,
    constants: PhysicalConstants = PhysicalConstants(),
    extra_momentum_diffusion: float = 0.0,
) -> LinearMeasuredModel:
    """Gaussian-filter model equivalent to the position-measured oscillator.

    Process noise holds the measurement back-action hbar^2 gamma / 4 in
    the momentum block, plus any extra (e.g. thermal) momentum diffusion.
    """
    a = np.array([[0.0, 1.0 / mass], [-mass * omega**2, 0.0]])
    b = np.array([0.0, 1.0])
    c = np.array([1.0, 0.0])
    d_pp = constants.hbar**2 * gamma / 4.0 + extra_momentum_diffusion
    diffusion = np.array([[0.0, 0.0], [0.0, d_pp]])
    return LinearMeasuredModel(a=a, b=b, c=c, gamma=gamma, diffusion=diffusion)


def _trace(arrs: np.ndarray) -> np.ndarray:
    return np.einsum("...ii->...", arrs)


def sme_step_raw(
    rho: np.ndarray,
    h: np.ndarray,
    x: np.ndarray,
    gamma: float,
    dw,
    dt: float,
    hbar: float = 1.0,
    repair: bool = False,
    extra_dephasing: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """One conditional-evolution step on raw arrays.

    Broadcasts over leading batch axes of rho / h / dw, so a whole
    ensemble advances in one call.  Returns (new rho, pre-step <x>).
    Positivity repair is optional here; batch engines run it on their
    recording stride and the wrapped ``sme_step`` runs it every call.
    extra_dephasing adds to the gamma/8 double-commutator coefficient
    without touching the conditioning term (unobserved noise, e.g. a
    thermal bath entering as momentum diffusion 2 * hbar^2 * coefficient).
    """
    dw = np.asarray(dw)
    if dw.ndim:
        dw = dw[..., None, None]
    dephase = gamma / 8.0 + extra_dephasing

    def drift(r):
        out = np.zeros_like(r)
        if h is not None:
            hr = h @ r
            out += (-1j / hbar) * (hr - np.swapaxes(hr, -1, -2).conj())
        if dephase != 0.0:
            xr = x @ r
            comm = xr - np.swapaxes(xr, -1, -2).conj()  # [X, rho] for Hermitian rho
            xc = x @ comm
            # comm is anti-Hermitian, so [X, comm] = X comm + (X comm)^dag
            out -= dephase * (xc + np.swapaxes(xc, -1, -2).conj())
        return out

    mean_x = _trace(x @ rho).real
    half = rho + 0.5 * dt * drift(rho)
    new = rho + dt * drift(half)
    if gamma != 0.0:
        xr = x @ rho
        anti = xr + np.swapaxes(xr, -1, -2).conj()  # {X, rho}
        centered = anti - 2.0 * mean_x[..., None, None] * rho
        new = new + (math.sqrt(gamma) / 2.0) * dw * centered
    new = 0.5 * (new + np.swapaxes(new, -1, -2).conj())
    new = new / _trace(new).real[..., None, None]
    if repair:
        if new.ndim == 2:
            new = repair_psd(new)
        else:
            flat = new.reshape(-1, new.shape[-1], new.shape[-1])
            new = np.stack([repair_psd(m) for m in flat]).reshape(new.shape)
    return new, mean_x


def sme_step(
    rho: DensityMatrix,
    h: ObservableOperator | None,
    x: ObservableOperator,
    gamma: float,
    dw: float,
    dt: float,
    constants: PhysicalConstants = PhysicalConstants(),
) -> tuple[DensityMatrix, float]:
    """Advance the conditional state by one step; returns (rho', <x> before).

    gamma = 0 reduces to plain (midpoint) unitary evolution and ignores
    dw; negative gamma is an error.  The returned state has been
    hermitized, renormalized and positivity-repaired.
    """
    if gamma < 0.0:
        raise NonPositiveGamma(f"gamma must be >= 0, got {gamma}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if rho.dim != x.dim or (h is not None and h.dim != rho.dim):
        raise DimensionMismatch("state and operators must share one dimension")
    new, mean_x = sme_step_raw(
        rho.entries,
        None if h is None else h.entries,
        x.entries,
        gamma,
        dw,
        dt,
        hbar=constants.hbar,
        repair=True,
    )
    return DensityMatrix(new), float(mean_x)


def _upwind(density: np.ndarray, courant: np.ndarray, axis: int) -> np.ndarray:
    """One upwind advection substep with zero-inflow boundaries.

    courant broadcasts against density and carries the signed Courant
    number v dt / dh for the advected axis.
    """
    d = density
    fwd = np.roll(d, -1, axis=axis)
    back = np.roll(d, 1, axis=axis)
    # zero-inflow: kill the wrapped-around slices
    idx_last = [slice(None)] * d.ndim
    idx_last[axis] = -1
    idx_first = [slice(None)] * d.ndim
    idx_first[axis] = 0
    fwd[tuple(idx_last)] = 0.0
    back[tuple(idx_first)] = 0.0
    pos = np.clip(courant, 0.0, None)
    neg = np.clip(courant, None, 0.0)
    return d - pos * (d - back) + neg * (d - fwd)


def ks_grid_step(
    belief: GridBelief,
    force: Callable[[np.ndarray, float], np.ndarray],
    mass: float,
    gamma: float,
    dw: float,
    dt: float,
    t: float = 0.0,
) -> GridBelief:
    """Classical conditional density step: advect, then weight by the record.

    Advection is split upwind in x (velocity p/m) and p (velocity
    force(x, t)), each checked against the CFL bound.  The measurement
    update multiplies by exp(sqrt(gamma)(x - <x>) dW - gamma (x - <x>)^2
    dt / 2), the positive likelihood factor of the record increment, and
    renormalizes.  The grid must keep >= 8 cells per standard deviation
    in both directions.
    """
    if gamma < 0.0:
        raise NonPositiveGamma(f"gamma must be >= 0, got {gamma}")
    _, cov = belief.moments()
    sx, sp = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    if sx < MIN_CELLS_PER_SIGMA * belief.dx or sp < MIN_CELLS_PER_SIGMA * belief.dp:
        raise GridUnderResolved(
            f"sigma ({sx:.3g}, {sp:.3g}) below {MIN_CELLS_PER_SIGMA} cells "
            f"({belief.dx:.3g}, {belief.dp:.3g})"
        )
    vx = belief.p / mass
    cfl_x = vx * dt / belief.dx
    f = np.asarray(force(belief.x, t), dtype=float)
    if f.shape != belief.x.shape:
        raise DimensionMismatch("force must return one value per x grid point")
    cfl_p = f * dt / belief.dp
    worst = max(np.max(np.abs(cfl_x)), np.max(np.abs(cfl_p)))
    if worst > 1.0:
        raise CFLViolation(f"Courant number {worst:.3g} exceeds 1; shrink dt")

    d = _upwind(belief.density, cfl_x[None, :], axis=0)
    d = _upwind(d, cfl_p[:, None], axis=1)

    if gamma != 0.0:
        w = d * belief.dx * belief.dp
        mean_x = float(np.sum(w.sum(axis=1) * belief.x))
        dev = belief.x - mean_x
        factor = np.exp(math.sqrt(gamma) * dev * dw - 0.5 * gamma * dev**2 * dt)
        d = d * factor[:, None]

    low = float(np.min(d))
    if low < DENSITY_CLIP:
        raise NegativeDensity(f"density minimum {low:.3e} below {DENSITY_CLIP}")
    d = np.clip(d, 0.0, None)
    mass_now = d.sum() * belief.dx * belief.dp
    if mass_now <= 0.0:
        raise NegativeDensity("density lost all mass")
    return GridBelief(x=belief.x, p=belief.p, density=d / mass_now)


def kalman_bucy_step(
    belief: GaussianBelief,
    model: LinearMeasuredModel,
    dr: float,
    dt: float,
    control: float = 0.0,
    trace_bound: float = 1e9,
) -> GaussianBelief:
    """One Kalman-Bucy step driven by the record increment dr.

    Gain K = gamma V c; mean follows the innovation dr - c.mean dt, the
    covariance follows its Riccati equation.  Raises CovarianceBlowup when
    tr(V) exceeds trace_bound.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    m, v = belief.mean, belief.cov
    a, b, c = model.a, model.b, model.c
    gain = model.gamma * (v @ c)
    innovation = dr - float(c @ m) * dt
    m_new = m + (a @ m + b * control) * dt + gain * innovation
    vc = v @ c
    dv = a @ v + v @ a.T + model.diffusion - model.gamma * np.outer(vc, vc)
    v_new = v + dv * dt
    v_new = 0.5 * (v_new + v_new.T)
    tr = float(np.trace(v_new))
    if not np.isfinite(tr) or tr > trace_bound:
        raise CovarianceBlowup(f"covariance trace {tr:.3e} exceeds bound {trace_bound:.3e}")
    return GaussianBelief(mean=m_new, cov=v_new)
