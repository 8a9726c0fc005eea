"""Steady-state LQG synthesis for the measured oscillator.

The control side and the filter side are the same algebraic Riccati
equation in different coordinates, so one solver covers both:

    A' P + P A' - P B' R'^-1 B'^T P + Q' = 0

solved by the Hamiltonian eigenvector method (stack the stable invariant
subspace, P = X2 X1^-1).  scipy is deliberately not used for the CARE
itself, only for the auxiliary Lyapunov equation; tests cross-check
against an independent Riccati ODE integration.

Cost convention: J = lim E[x^T Q x + R u^2] per unit time.  With the
estimator covariance V (state about the mean) and the mean covariance S
(mean about zero), J = tr(Q V) + tr((Q + K^T R K) S).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import (
    DimensionMismatch,
    MinimumOnBoundary,
    NoConvergence,
    NotStabilizable,
)
from .filters import LinearMeasuredModel

__all__ = [
    "QuadraticCost",
    "ControlLaw",
    "OptimizationResult",
    "solve_care",
    "steady_filter_cov",
    "synthesize_lqg",
    "optimize_measurement_strength",
]

CARE_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class QuadraticCost:
    """Running cost x^T q x + r u^2 with q symmetric PSD and r > 0."""

    q: np.ndarray
    r: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (2, 2):
            raise DimensionMismatch(f"q must be (2,2), got {q.shape}")
        if np.max(np.abs(q - q.T)) > 1e-12 or float(np.linalg.eigvalsh(q)[0]) < -1e-12:
            raise DimensionMismatch("q must be symmetric PSD")
        if not self.r > 0.0:
            raise ValueError(f"r must be positive, got {self.r}")
        q = 0.5 * (q + q.T)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


class ControlLaw(NamedTuple):
    """Synthesized u = -gain . mean, with its predicted steady state."""

    gain: np.ndarray
    filter_cov: np.ndarray
    mean_cov: np.ndarray
    predicted_steady_cost: float
    closed_loop_eigs: np.ndarray


class OptimizationResult(NamedTuple):
    gamma_opt: float
    cost_opt: float
    gammas: np.ndarray
    costs: np.ndarray


def _pbh_uncontrollable_mode(a: np.ndarray, b: np.ndarray) -> complex | None:
    """Eigenvalue of a with Re >= 0 that b cannot move, or None."""
    n = a.shape[0]
    for lam in np.linalg.eigvals(a):
        if lam.real < 0.0:
            continue
        test = np.hstack([a - lam * np.eye(n), b])
        if np.linalg.matrix_rank(test, tol=1e-10) < n:
            return complex(lam)
    return None


def solve_care(a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0.

    Eigenvectors of the Hamiltonian matrix spanning its stable subspace
    give P = X2 X1^-1.  Raises NotStabilizable when a non-decaying mode
    is outside the input's reach, NoConvergence when the residual stays
    above 1e-8.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = a.shape[0]
    if b.ndim == 1:
        b = b[:, None]
    bad = _pbh_uncontrollable_mode(a, b)
    if bad is not None:
        raise NotStabilizable(f"mode at {bad:.6g} is unreachable from the input")
    r_inv = np.linalg.inv(r)
    ham = np.block([[a, -b @ r_inv @ b.T], [-q, -a.T]])
    vals, vecs = np.linalg.eig(ham)
    stable = np.argsort(vals.real)[:n]
    if np.any(vals.real[stable] >= 0.0):
        raise NotStabilizable("Hamiltonian matrix lacks an n-dimensional stable subspace")
    x1 = vecs[:n, stable]
    x2 = vecs[n:, stable]
    try:
        p = x2 @ np.linalg.inv(x1)
    except np.linalg.LinAlgError as exc:
        raise NotStabilizable("stable subspace is deficient in the state block") from exc
    p = 0.5 * (p + p.conj().T).real
    residual = a.T @ p + p @ a - p @ b @ r_inv @ b.T @ p + q
    scale = 1.0 + float(np.max(np.abs(p)))
    if float(np.max(np.abs(residual))) > CARE_RESIDUAL_TOL * scale:
        raise NoConvergence(
            f"Riccati residual {np.max(np.abs(residual)):.3e} above tolerance"
        )
    return p


def steady_filter_cov(model: LinearMeasuredModel) -> np.ndarray:
    """Steady conditional covariance: A V + V A^T + D - gamma V c^T c V = 0."""
    return solve_care(
        model.a.T,
        model.c[:, None],
        model.diffusion,
        np.array([[1.0 / model.gamma]]),
    )


def synthesize_lqg(model: LinearMeasuredModel, cost: QuadraticCost) -> ControlLaw:
    """Optimal feedback on the filter mean, with predicted steady cost.

    The mean diffuses with intensity gamma (V c^T)(c V) through the
    filter gain; its steady covariance comes from the closed-loop
    Lyapunov equation.
    """
    p = solve_care(model.a, model.b[:, None], cost.q, np.array([[cost.r]]))
    gain = (model.b @ p) / cost.r
    a_cl = model.a - np.outer(model.b, gain)
    eigs = np.linalg.eigvals(a_cl)
    if np.any(eigs.real >= 0.0):
        raise NotStabilizable("closed loop is not Hurwitz")
    v = steady_filter_cov(model)
    vc = v @ model.c
    mean_cov = solve_continuous_lyapunov(a_cl, -model.gamma * np.outer(vc, vc))
    mean_cov = 0.5 * (mean_cov + mean_cov.T)
    cost_value = float(
        np.trace(cost.q @ v)
        + np.trace((cost.q + cost.r * np.outer(gain, gain)) @ mean_cov)
    )
    return ControlLaw(
        gain=gain,
        filter_cov=v,
        mean_cov=mean_cov,
        predicted_steady_cost=cost_value,
        closed_loop_eigs=eigs,
    )


_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def optimize_measurement_strength(
    cost_of_gamma: Callable[[float], float],
    gamma_min: float,
    gamma_max: float,
    n_grid: int = 25,
    rel_tol: float = 1e-3,
) -> OptimizationResult:
    """Locate the cost-minimizing gamma on [gamma_min, gamma_max].

    A logarithmic scan brackets the minimum, golden-section search in
    log-gamma refines it to relative width rel_tol.  A minimum sitting on
    either scan edge raises MinimumOnBoundary carrying the whole scanned
    curve, since edge minima mean the tradeoff has no interior optimum in
    the window.
    """
    if not (0.0 < gamma_min < gamma_max):
        raise ValueError("need 0 < gamma_min < gamma_max")
    gammas = np.geomspace(gamma_min, gamma_max, n_grid)
    costs = np.array([float(cost_of_gamma(g)) for g in gammas])
    k = int(np.argmin(costs))
    if k == 0 or k == n_grid - 1:
        raise MinimumOnBoundary(
            f"minimum cost sits at the {'lower' if k == 0 else 'upper'} edge "
            f"gamma={gammas[k]:.6g}",
            gammas=gammas,
            costs=costs,
        )
    lo, hi = np.log(gammas[k - 1]), np.log(gammas[k + 1])
    x1 = hi - _INV_PHI * (hi - lo)
    x2 = lo + _INV_PHI * (hi - lo)
    f1 = float(cost_of_gamma(float(np.exp(x1))))
    f2 = float(cost_of_gamma(float(np.exp(x2))))
    while hi - lo > rel_tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INV_PHI * (hi - lo)
            f1 = float(cost_of_gamma(float(np.exp(x1))))
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INV_PHI * (hi - lo)
            f2 = float(cost_of_gamma(float(np.exp(x2))))
    g_opt = float(np.exp(0.5 * (lo + hi)))
    return OptimizationResult(
        gamma_opt=g_opt,
        cost_opt=float(cost_of_gamma(g_opt)),
        gammas=gammas,
        costs=costs,
    )
