"""Independent expected-value routes for the test suite.

Everything here is computed from scratch with dense linear algebra, ODE
integration, or quadrature, sharing no integrator or stepping code with the
package.  Tests freeze their expectations against these routes so that a bug
in the package cannot silently agree with itself.
"""

import math

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import solve_continuous_are


# ---------------------------------------------------------------------------
# master equations


def lindblad_propagate(h, lindblads, rho0, times, hbar=1.0):
    """Dense unconditional master equation via the vectorized generator.

    Row-major flattening: vec(A rho B) = (A kron B^T) vec(rho).  Returns the
    density matrix at each requested time.
    """
    d = rho0.shape[0]
    eye = np.eye(d)
    gen = -1j / hbar * (np.kron(h, eye) - np.kron(eye, h.T))
    for ell in lindblads:
        elld = ell.conj().T
        gen += np.kron(ell, elld.T)
        anti = elld @ ell
        gen -= 0.5 * (np.kron(anti, eye) + np.kron(eye, anti.T))

    def rhs(_, v):
        return gen @ v

    sol = solve_ivp(
        rhs,
        (0.0, float(times[-1])),
        rho0.flatten().astype(complex),
        t_eval=np.asarray(times, dtype=float),
        method="RK45",
        rtol=1e-9,
        atol=1e-11,
    )
    return [sol.y[:, i].reshape(d, d) for i in range(sol.y.shape[1])]


def dephasing_qubit_state(bloch0, omega, gamma, t, hbar=1.0):
    """Closed form for H = (hbar w / 2) sz, X = sz: coherence spirals down
    at gamma/2 while populations freeze."""
    x0, y0, z0 = bloch0
    damp = math.exp(-gamma * t / 2.0)
    c, s = math.cos(omega * t), math.sin(omega * t)
    x = damp * (x0 * c - y0 * s)
    y = damp * (x0 * s + y0 * c)
    return np.array(
        [[(1 + z0) / 2, (x - 1j * y) / 2], [(x + 1j * y) / 2, (1 - z0) / 2]]
    )


def trace_distance(a, b):
    vals = np.linalg.eigvalsh(a - b)
    return 0.5 * float(np.abs(vals).sum())


# ---------------------------------------------------------------------------
# linear-Gaussian filtering and control


def care_scipy(a, b, q, r):
    """Reference continuous algebraic Riccati solve."""
    return solve_continuous_are(a, b, q, r)


def filter_cov_ode(a, d, gamma, v0, t_final):
    """Conditional covariance of the linear filter by direct integration.

    dV/dt = A V + V A' + D - gamma V c c' V with record row c = [1, 0].
    """
    a = np.asarray(a, dtype=float)
    d_mat = np.asarray(d, dtype=float)
    c = np.array([1.0, 0.0])

    def rhs(_, v_flat):
        v = v_flat.reshape(2, 2)
        vc = v @ c
        dv = a @ v + v @ a.T + d_mat - gamma * np.outer(vc, vc)
        return dv.flatten()

    sol = solve_ivp(
        rhs,
        (0.0, t_final),
        np.asarray(v0, dtype=float).flatten(),
        method="RK45",
        rtol=1e-10,
        atol=1e-12,
    )
    return sol.y[:, -1].reshape(2, 2)


def control_riccati_ode(a, b, q, r, t_final=80.0):
    """Steady control Riccati solution by integrating the ODE to stationarity
    (independent of both the package solver and scipy's direct solve)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(2, 1)
    rinv = 1.0 / float(np.asarray(r).flatten()[0])

    def rhs(_, v_flat):
        v = v_flat.reshape(2, 2)
        dv = a.T @ v + v @ a + q - rinv * (v @ b) @ (b.T @ v)
        return dv.flatten()

    sol = solve_ivp(
        rhs, (0.0, t_final), np.zeros(4), method="RK45", rtol=1e-11, atol=1e-13
    )
    return sol.y[:, -1].reshape(2, 2)


def oscillator_mean_rotation(x0, p0, mass, omega, t):
    """Free harmonic evolution of the first moments."""
    c, s = math.cos(omega * t), math.sin(omega * t)
    x = x0 * c + p0 / (mass * omega) * s
    p = p0 * c - mass * omega * x0 * s
    return x, p


def heating_slope(gamma, d_extra, mass, hbar=1.0):
    """Energy growth rate of the undamped measured oscillator.

    Momentum diffusion D_pp = gamma hbar^2 / 4 (back-action) + d_extra feeds
    <H> at D_pp / (2m); position diffusion is absent, so <H> grows linearly
    with exactly this slope and never settles.
    """
    return (gamma * hbar**2 / 4.0 + d_extra) / (2.0 * mass)


# ---------------------------------------------------------------------------
# qubit purification


def adaptive_hitting_time(gamma, target_purity):
    """Time for the rotation-feedback qubit to reach the target purity.

    With the Bloch vector held orthogonal to the measurement axis the squared
    length obeys dr^2/dt = gamma (1 - r^2) deterministically; integrate and
    invert for the crossing.
    """
    r2_target = 2.0 * target_purity - 1.0

    def rhs(_, y):
        return gamma * (1.0 - y[0])

    # event-based crossing detection does the inversion
    def hit(_, y):
        return y[0] - r2_target

    hit.terminal = True
    hit.direction = 1.0
    sol = solve_ivp(
        rhs, (0.0, 100.0 / gamma), [0.0], events=hit, rtol=1e-12, atol=1e-14
    )
    return float(sol.t_events[0][0])


def fixed_mean_hitting_time(gamma, target_purity):
    """Mean first-passage time to the target purity without feedback.

    The measured-axis Bloch component is z = tanh(u) with
    du = gamma tanh(u) dt + sqrt(gamma) dW from u = 0.  The mean exit time
    from (-u*, u*) solves (gamma/2) T'' + gamma tanh(u) T' = -1 with
    absorbing ends; the integrating factor cosh^2 gives a double quadrature.
    """
    r_target = math.sqrt(2.0 * target_purity - 1.0)
    u_star = math.atanh(r_target)

    def inner(u):
        # antiderivative of cosh^2
        return (u + math.sinh(u) * math.cosh(u)) / 2.0

    val, err = quad(lambda u: inner(u) / math.cosh(u) ** 2, 0.0, u_star, limit=200)
    assert err < 1e-8 * max(val, 1.0)
    return 2.0 * val / gamma


# ---------------------------------------------------------------------------
# discrimination


def coherent_pair_error(energy, p1=0.5):
    """Minimum discrimination error for symmetric coherent signals whose
    record-distinguishability exponent is `energy`: overlap^2 = exp(-E)."""
    overlap_sq = math.exp(-energy)
    p0 = 1.0 - p1
    return 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * p0 * p1 * overlap_sq))


def qubit_projective_sweep(rho0, rho1, p1, n_coarse=2001, refine=6):
    """Brute-force minimum error over projective qubit measurements.

    Sweeps the measurement axis over the relevant great circle (the optimal
    axis lies in the plane spanned by the two Bloch vectors), with local
    refinement around the best angle.  Classical post-processing (relabeling)
    is included by taking min(err, 1-err).
    """

    def bloch(rho):
        return np.array(
            [
                2.0 * rho[0, 1].real,
                -2.0 * rho[0, 1].imag,
                (rho[0, 0] - rho[1, 1]).real,
            ]
        )

    b0, b1 = bloch(np.asarray(rho0)), bloch(np.asarray(rho1))
    e1 = b0 + b1
    if np.linalg.norm(e1) < 1e-12:
        e1 = b0
    if np.linalg.norm(e1) < 1e-12:
        e1 = np.array([0.0, 0.0, 1.0])
    e1 = e1 / np.linalg.norm(e1)
    e2 = b1 - e1 * (b1 @ e1)
    if np.linalg.norm(e2) < 1e-12:
        e2 = np.array([1.0, 0.0, 0.0]) - e1 * e1[0]
        if np.linalg.norm(e2) < 1e-12:
            e2 = np.array([0.0, 1.0, 0.0]) - e1 * e1[1]
    e2 = e2 / np.linalg.norm(e2)
    p0 = 1.0 - p1

    def err_at(theta):
        axis = math.cos(theta) * e1 + math.sin(theta) * e2
        # P(guess 1 | rho) for the +axis projector assigned to hypothesis 1
        up0 = (1.0 + b0 @ axis) / 2.0
        up1 = (1.0 + b1 @ axis) / 2.0
        err = p0 * up0 + p1 * (1.0 - up1)
        return min(err, 1.0 - err)

    thetas = np.linspace(0.0, math.pi, n_coarse)
    errs = np.array([err_at(t) for t in thetas])
    best = int(np.argmin(errs))
    lo = thetas[max(best - 1, 0)]
    hi = thetas[min(best + 1, n_coarse - 1)]
    for _ in range(refine):
        grid = np.linspace(lo, hi, 41)
        vals = [err_at(t) for t in grid]
        j = int(np.argmin(vals))
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, 40)]
    # guessing without measuring beats any projector when one prior dominates
    return min(err_at(0.5 * (lo + hi)), p0, p1)


# ---------------------------------------------------------------------------
# grid mechanics


def parity_by_quadrature(psi, x):
    """<psi|Pi|psi> as the overlap integral with the mirrored wavefunction,
    by interpolation plus trapezoid; route independent of index games."""
    mirrored = np.interp(-x, x, psi.real) + 1j * np.interp(-x, x, psi.imag)
    norm = np.trapezoid(np.abs(psi) ** 2, x)
    return float(np.trapezoid((np.conj(psi) * mirrored).real, x) / norm)


def ehrenfest_vop_rate(psi, hmat, vop_diag, hbar=1.0, delta=1e-5):
    """d<Vop>/dt by exact eigenpropagation and centered differencing."""
    vals, vecs = np.linalg.eigh(hmat)
    coef = vecs.conj().T @ psi

    def expect(tau):
        phases = np.exp(-1j * vals * tau / hbar)
        wf = vecs @ (phases * coef)
        return float(np.real(np.conj(wf) @ (vop_diag * wf) / (np.conj(wf) @ wf)))

    return (expect(delta) - expect(-delta)) / (2.0 * delta)


def thermal_occupations(nbar, n_max):
    """Geometric Boltzmann weights on a truncated ladder, renormalized."""
    ratio = nbar / (nbar + 1.0)
    w = ratio ** np.arange(n_max + 1)
    return w / w.sum()
