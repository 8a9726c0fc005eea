"""Quantum state and operator primitives.

Density matrices, Hermitian observables, and the three bases the toolkit
works in: a qubit, a truncated harmonic-oscillator number basis, and a
periodic position grid.  Everything is validated at construction so the
simulation loops upstream can assume well-formed inputs.

Conventions
-----------
hbar is carried explicitly through :class:`PhysicalConstants` (default 1.0).
Oscillator operators use X = sqrt(hbar/(2 m omega)) (a + a^dag) and
P = i sqrt(hbar m omega / 2) (a^dag - a), so Heisenberg motion is
dX/dt = P/m and dP/dt = -m omega^2 X.  Position grids are periodic with
n_points = x-samples on [x_min, x_max); spacing (x_max - x_min)/n_points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import (
    AsymmetricGrid,
    DimensionMismatch,
    GridTooCoarse,
    NonNegligibleImaginaryPart,
    StatePositivityViolation,
    TruncationLeak,
)

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-8
REAL_TOL = 1e-8
TOP_LEVEL_POP_MAX = 1e-4

__all__ = [
    "PhysicalConstants",
    "QubitBasis",
    "FockBasis",
    "GridBasis",
    "BasisSpec",
    "DensityMatrix",
    "ObservableOperator",
    "OscillatorOperators",
    "LatticeOperators",
    "expectation",
    "purity",
    "von_neumann_entropy",
    "parity_operator",
    "parity_expectation",
    "build_oscillator",
    "build_lattice",
    "repair_psd",
    "check_truncation_tail",
    "pauli_operators",
    "qubit_density",
    "maximally_mixed",
    "number_operator",
    "fock_state",
    "coherent_state",
    "thermal_state",
    "gaussian_packet",
    "grid_eigenstates",
]


@dataclass(frozen=True)
class PhysicalConstants:
    """Physical constants threaded through every module. hbar > 0."""

    hbar: float = 1.0

    def __post_init__(self):
        if not self.hbar > 0.0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")


@dataclass(frozen=True)
class QubitBasis:
    """Two-level system."""

    @property
    def dim(self) -> int:
        return 2


@dataclass(frozen=True)
class FockBasis:
    """Truncated number basis with n_max levels (0 .. n_max-1).

    mass and omega fix the length scale of the quadrature operators.
    """

    n_max: int
    mass: float
    omega: float

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError(f"n_max must be >= 2, got {self.n_max}")
        if not (self.mass > 0.0 and self.omega > 0.0):
            raise ValueError("mass and omega must be positive")

    @property
    def dim(self) -> int:
        return self.n_max


@dataclass(frozen=True)
class GridBasis:
    """Periodic position grid on [x_min, x_max), n_points a power of two."""

    x_min: float
    x_max: float
    n_points: int
    mass: float

    def __post_init__(self):
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")
        n = self.n_points
        if n < 16 or (n & (n - 1)) != 0:
            raise ValueError(f"n_points must be a power of two >= 16, got {n}")
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")

    @property
    def dim(self) -> int:
        return self.n_points

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """FFT-ordered spatial wavenumbers for spectral differentiation."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def is_symmetric(self, tol: float = 1e-9) -> bool:
        return abs(self.x_min + self.x_max) <= tol * (self.x_max - self.x_min)


BasisSpec = Union[QubitBasis, FockBasis, GridBasis]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density matrix.

    Construction enforces Hermiticity (1e-10), unit trace (1e-10) and
    positivity down to -1e-8 on the smallest eigenvalue.  The entry array
    is write-locked; treat instances as immutable.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"density matrix must be square, got {arr.shape}")
        dev = np.max(np.abs(arr - arr.conj().T))
        if dev > HERMITICITY_TOL:
            raise StatePositivityViolation(f"not Hermitian: max deviation {dev:.3e}")
        tr = np.trace(arr).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StatePositivityViolation(f"trace {tr!r} differs from 1 by > {TRACE_TOL}")
        lo = float(np.linalg.eigvalsh(arr)[0])
        if lo < EIGENVALUE_FLOOR:
            raise StatePositivityViolation(f"negative eigenvalue {lo:.3e} below {EIGENVALUE_FLOOR}")
        object.__setattr__(self, "entries", _frozen(arr))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_array(cls, arr: np.ndarray, repair: bool = False) -> "DensityMatrix":
        """Wrap a raw array, optionally applying the standard repair step.

        With repair=True the array is hermitized, eigenvalues in
        [-1e-8, 0) are clipped to zero and the result renormalized; more
        negative eigenvalues still raise StatePositivityViolation.
        """
        if repair:
            arr = repair_psd(arr)
        return cls(arr)


@dataclass(frozen=True)
class ObservableOperator:
    """Hermitian operator with a human-readable label."""

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {arr.shape}")
        dev = np.max(np.abs(arr - arr.conj().T))
        if dev > HERMITICITY_TOL:
            raise NonNegligibleImaginaryPart(
                f"operator {self.label!r} not Hermitian: max deviation {dev:.3e}"
            )
        object.__setattr__(self, "entries", _frozen(arr))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


class OscillatorOperators(NamedTuple):
    h: ObservableOperator
    x: ObservableOperator
    p: ObservableOperator


class LatticeOperators(NamedTuple):
    h: ObservableOperator
    vop: ObservableOperator
    kinetic: ObservableOperator


def _hermitize(arr: np.ndarray) -> np.ndarray:
    return 0.5 * (arr + arr.conj().T)


def repair_psd(arr: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Clip slightly negative eigenvalues and renormalize the trace.

    Eigenvalues in [floor, 0) are set to zero; anything below floor means
    the integration has genuinely left the physical set and raises.
    """
    arr = _hermitize(np.asarray(arr, dtype=complex))
    vals, vecs = np.linalg.eigh(arr)
    lo = float(vals[0])
    if lo < floor:
        raise StatePositivityViolation(f"eigenvalue {lo:.3e} below repair floor {floor}")
    if lo < 0.0:
        vals = np.clip(vals, 0.0, None)
        arr = (vecs * vals) @ vecs.conj().T
    tr = np.trace(arr).real
    if tr <= 0.0:
        raise StatePositivityViolation(f"non-positive trace {tr!r} after repair")
    return arr / tr


def check_truncation_tail(populations: np.ndarray, max_pop: float = TOP_LEVEL_POP_MAX) -> None:
    """Raise TruncationLeak if the top two basis levels hold > max_pop."""
    tail = float(np.real(populations[-2] + populations[-1]))
    if tail > max_pop:
        raise TruncationLeak(f"top-two-level population {tail:.3e} exceeds {max_pop}")


def expectation(rho: DensityMatrix, op: ObservableOperator) -> float:
    """Tr[rho A] as a real number.

    Raises DimensionMismatch on incompatible shapes and
    NonNegligibleImaginaryPart if the trace has imaginary part > 1e-8
    (possible when the operand arrays were corrupted after validation).
    """
    if rho.dim != op.dim:
        raise DimensionMismatch(f"state dim {rho.dim} vs operator dim {op.dim}")
    val = np.trace(rho.entries @ op.entries)
    if abs(val.imag) > REAL_TOL:
        raise NonNegligibleImaginaryPart(f"Tr[rho A] imaginary part {val.imag:.3e}")
    return float(val.real)


def purity(rho: DensityMatrix) -> float:
    """Tr[rho^2]; equals the squared Frobenius norm for Hermitian rho."""
    return float(np.sum(np.abs(rho.entries) ** 2))


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """-Tr[rho ln rho] in nats, with 0 ln 0 = 0."""
    vals = np.linalg.eigvalsh(rho.entries)
    vals = np.clip(vals.real, 0.0, None)
    nz = vals[vals > 0.0]
    s = float(-np.sum(nz * np.log(nz)))
    # guard against tiny negative round-off for pure states
    return max(s, 0.0)


def parity_operator(basis: GridBasis) -> ObservableOperator:
    """Spatial reflection x -> -x on a symmetric periodic grid.

    Grid index j maps to (n - j) mod n, which is the exact reflection when
    x_min = -x_max (raises AsymmetricGrid otherwise).
    """
    if not isinstance(basis, GridBasis):
        raise DimensionMismatch("parity operator is defined on a GridBasis")
    if not basis.is_symmetric():
        raise AsymmetricGrid(
            f"grid [{basis.x_min}, {basis.x_max}) is not symmetric about zero"
        )
    n = basis.n_points
    perm = (n - np.arange(n)) % n
    mat = np.zeros((n, n))
    mat[np.arange(n), perm] = 1.0
    return ObservableOperator(mat, label="parity")


def parity_expectation(rho: DensityMatrix, basis: GridBasis) -> float:
    """<Pi> = Tr[rho Pi] for the reflection operator of a symmetric grid."""
    return expectation(rho, parity_operator(basis))


def _ladder(n_max: int) -> np.ndarray:
    a = np.zeros((n_max, n_max), dtype=complex)
    ns = np.arange(1, n_max)
    a[ns - 1, ns] = np.sqrt(ns)
    return a


def build_oscillator(
    basis: FockBasis, constants: PhysicalConstants = PhysicalConstants()
) -> OscillatorOperators:
    """Harmonic oscillator H, X, P in the truncated number basis.

    H = P^2/2m + m omega^2 X^2 / 2 built from the truncated ladder
    operators, so diagonal elements are hbar omega (n + 1/2) everywhere
    except the top level, and [X, P] = i hbar holds away from the top two
    levels.  Callers evolving states here must keep population out of the
    top levels (see check_truncation_tail).
    """
    hbar = constants.hbar
    m, w = basis.mass, basis.omega
    a = _ladder(basis.n_max)
    ad = a.conj().T
    x = np.sqrt(hbar / (2.0 * m * w)) * (a + ad)
    p = 1j * np.sqrt(hbar * m * w / 2.0) * (ad - a)
    h = _hermitize(p @ p / (2.0 * m) + 0.5 * m * w**2 * (x @ x))
    return OscillatorOperators(
        h=ObservableOperator(h, label="oscillator energy"),
        x=ObservableOperator(_hermitize(x), label="position"),
        p=ObservableOperator(_hermitize(p), label="momentum"),
    )


def _spectral_kinetic(basis: GridBasis, hbar: float) -> np.ndarray:
    """Dense kinetic operator via the Fourier grid: F^dag diag(hbar^2 k^2/2m) F."""
    n = basis.n_points
    kin_diag = (hbar * basis.wavenumbers) ** 2 / (2.0 * basis.mass)
    cols = np.fft.fft(np.eye(n), axis=0)
    t = np.fft.ifft(kin_diag[:, None] * cols, axis=0)
    return _hermitize(t)


def build_lattice(
    v0: float,
    k: float,
    basis: GridBasis,
    constants: PhysicalConstants = PhysicalConstants(),
) -> LatticeOperators:
    """Optical-lattice Hamiltonian H = P^2/2m + v0 cos^2(k X) on the grid.

    The kinetic term is exact for band-limited states (spectral
    differentiation, periodic boundary).  The grid must span at least one
    full potential period pi/k and resolve it with >= 16 points.
    """
    if not (v0 >= 0.0 and k > 0.0):
        raise ValueError("need v0 >= 0 and k > 0")
    period = np.pi / k
    span = basis.x_max - basis.x_min
    if span < period * (1.0 - 1e-9):
        raise GridTooCoarse(f"grid span {span:.4g} shorter than one period {period:.4g}")
    points_per_period = period / basis.dx
    if points_per_period < 16.0 - 1e-9:
        raise GridTooCoarse(
            f"{points_per_period:.1f} points per potential period, need >= 16"
        )
    xs = basis.points
    vop = np.cos(k * xs) ** 2
    kin = _spectral_kinetic(basis, constants.hbar)
    h = kin + np.diag(v0 * vop)
    return LatticeOperators(
        h=ObservableOperator(_hermitize(h), label="lattice energy"),
        vop=ObservableOperator(np.diag(vop), label="lattice modulation"),
        kinetic=ObservableOperator(kin, label="kinetic energy"),
    )


# ---------------------------------------------------------------------------
# state constructors


def pauli_operators() -> dict[str, ObservableOperator]:
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sy = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    return {
        "x": ObservableOperator(sx, label="sigma_x"),
        "y": ObservableOperator(sy, label="sigma_y"),
        "z": ObservableOperator(sz, label="sigma_z"),
    }


def qubit_density(bloch: np.ndarray) -> DensityMatrix:
    """Qubit state from a Bloch vector with |r| <= 1."""
    r = np.asarray(bloch, dtype=float)
    if r.shape != (3,):
        raise DimensionMismatch(f"Bloch vector must have shape (3,), got {r.shape}")
    if np.linalg.norm(r) > 1.0 + 1e-12:
        raise StatePositivityViolation(f"Bloch length {np.linalg.norm(r)} exceeds 1")
    x, y, z = r
    arr = 0.5 * np.array([[1.0 + z, x - 1j * y], [x + 1j * y, 1.0 - z]])
    return DensityMatrix(arr)


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(np.eye(dim) / dim)


def number_operator(basis: FockBasis) -> ObservableOperator:
    return ObservableOperator(np.diag(np.arange(basis.n_max, dtype=float)), label="number")


def fock_state(basis: FockBasis, n: int) -> DensityMatrix:
    if not 0 <= n < basis.n_max:
        raise DimensionMismatch(f"level {n} outside basis of {basis.n_max} levels")
    arr = np.zeros((basis.n_max, basis.n_max), dtype=complex)
    arr[n, n] = 1.0
    return DensityMatrix(arr)


def coherent_state(
    basis: FockBasis,
    x0: float,
    p0: float,
    constants: PhysicalConstants = PhysicalConstants(),
) -> DensityMatrix:
    """Coherent state centered at phase-space point (x0, p0).

    alpha = x0 sqrt(m omega / 2 hbar) + i p0 / sqrt(2 hbar m omega); the
    amplitude tail must fit the truncation (checked).
    """
    hbar = constants.hbar
    m, w = basis.mass, basis.omega
    alpha = x0 * np.sqrt(m * w / (2.0 * hbar)) + 1j * p0 / np.sqrt(2.0 * hbar * m * w)
    ns = np.arange(basis.n_max)
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, basis.n_max)))))
    with np.errstate(divide="ignore"):
        log_abs = ns * np.log(np.abs(alpha)) if alpha != 0 else np.where(ns == 0, 0.0, -np.inf)
    amps = np.exp(-0.5 * np.abs(alpha) ** 2 + log_abs - 0.5 * log_fact) * np.exp(
        1j * ns * np.angle(alpha)
    )
    norm = np.linalg.norm(amps)
    if norm < 1.0 - 1e-8:
        raise TruncationLeak(
            f"coherent state |alpha|^2={np.abs(alpha)**2:.3g} does not fit {basis.n_max} levels"
        )
    amps = amps / norm
    return DensityMatrix(np.outer(amps, amps.conj()))


def thermal_state(basis: FockBasis, nbar: float) -> DensityMatrix:
    """Thermal state with mean occupation nbar, renormalized on the truncation."""
    if nbar < 0.0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0.0:
        return fock_state(basis, 0)
    ratio = nbar / (1.0 + nbar)
    weights = ratio ** np.arange(basis.n_max)
    weights = weights / weights.sum()
    check_truncation_tail(weights)
    return DensityMatrix(np.diag(weights).astype(complex))


def gaussian_packet(
    basis: GridBasis,
    x0: float,
    p0: float,
    sigma: float,
    constants: PhysicalConstants = PhysicalConstants(),
) -> DensityMatrix:
    """Pure Gaussian wavepacket: position spread sigma, mean momentum p0."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    xs = basis.points
    psi = np.exp(-((xs - x0) ** 2) / (4.0 * sigma**2) + 1j * p0 * xs / constants.hbar)
    psi = psi / np.linalg.norm(psi)
    return DensityMatrix(np.outer(psi, psi.conj()))


def grid_eigenstates(h: ObservableOperator, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest `count` eigenpairs of a dense Hamiltonian, ascending energy.

    Returns (energies, columns); eigenvector phases are fixed so the
    largest-magnitude component is real positive, keeping results
    deterministic across runs.
    """
    vals, vecs = np.linalg.eigh(h.entries)
    vals, vecs = vals[:count], vecs[:, :count]
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        phase = vecs[i, j] / abs(vecs[i, j])
        vecs[:, j] = vecs[:, j] / phase
    return vals, vecs
