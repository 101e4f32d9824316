"""Hamiltonian evolution of fields and covariance operators.

With hbar fixed at 1 the field obeys d(phi)/dt = -i H phi.  In the real
phase-space coordinates phi = q + ip this is the Hamilton system

    dq/dt = dH/dp,   dp/dt = -dH/dq,   H(q, p) = <H_op phi, phi> / 2,

and splitting H_op = R + iJ (R symmetric, J antisymmetric) gives

    dq/dt = R p + J q,   dp/dt = -R q + J p.

The factor 1/2 in the Hamilton function is exactly what makes the flow
coincide with multiplication by exp(-i t H_op); both routes are provided.
The exact propagator comes from the eigendecomposition and is the oracle;
the time stepper is a Stoermer-Verlet (leapfrog) step for the separable R
part, wrapped in Strang fashion by the exact rotation exp(dt J / 2) of the
J part.  The composition is symplectic and second order, so the energy and
norm stay within a bounded oscillation for all times instead of drifting.

Covariances push forward as D -> U D U^+, which solves the von Neumann
equation dD/dt = -i [H_op, D]; a background block eps I commutes with U
and is left exactly in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import FieldVector, HermitianOperator
from .random_field import GaussianFieldEnsemble
from .serialize import write_csv

UNITARITY_TOL = 1e-10


@dataclass(frozen=True)
class PhasePoint:
    """Real phase-space coordinates (q, p) of a complex field phi = q + ip."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True)
        p = np.array(self.p, dtype=np.float64, copy=True)
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape:
            raise ValueError("q and p must be 1-D arrays of equal dimension")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_field(cls, phi: FieldVector) -> "PhasePoint":
        return cls(phi.components.real, phi.components.imag)

    def to_field(self) -> FieldVector:
        return FieldVector(self.q + 1j * self.p)


class HamiltonianSystem:
    """Energy observable H_op together with its Hamilton function."""

    __slots__ = ("_h", "_r", "_j")

    def __init__(self, h_op: HermitianOperator):
        self._h = h_op
        r = h_op.matrix.real
        j = h_op.matrix.imag
        # Hermiticity makes Re symmetric and Im antisymmetric up to round-off;
        # enforce it exactly so the split flows stay Hamiltonian.
        self._r = (r + r.T) / 2.0
        self._j = (j - j.T) / 2.0

    @property
    def h_op(self) -> HermitianOperator:
        return self._h

    @property
    def dim(self) -> int:
        return self._h.dim

    @property
    def r_block(self) -> np.ndarray:
        return self._r

    @property
    def j_block(self) -> np.ndarray:
        return self._j

    def hamilton_function(self, point: PhasePoint) -> float:
        """H(q, p) = <H_op phi, phi> / 2 = (q^T R q + p^T R p - 2 q^T J p) / 2."""
        q, p = point.q, point.p
        return 0.5 * float(q @ (self._r @ q) + p @ (self._r @ p) - 2.0 * q @ (self._j @ p))

    def velocity(self, point: PhasePoint) -> tuple[np.ndarray, np.ndarray]:
        """Right-hand side (dq/dt, dp/dt) of the Hamilton equations."""
        q, p = point.q, point.p
        return self._r @ p + self._j @ q, -(self._r @ q) + self._j @ p


def exact_propagator(h_op: HermitianOperator, t: float) -> np.ndarray:
    """U(t) = exp(-i t H_op) via the eigendecomposition of H_op."""
    w, v = h_op.eig()
    u = (v * np.exp(-1j * t * w)) @ v.conj().T
    defect = float(np.abs(u.conj().T @ u - np.eye(h_op.dim)).max())
    if defect > UNITARITY_TOL:
        raise ArithmeticError(f"propagator unitarity defect {defect:.3e}")
    return u


def _expm_antisymmetric(j: np.ndarray, t: float) -> np.ndarray:
    """exp(t J) for real antisymmetric J, via the Hermitian matrix iJ."""
    w, v = np.linalg.eigh(1j * j)
    return ((v * np.exp(-1j * t * w)) @ v.conj().T).real


class SymplecticIntegrator:
    """Strang splitting: exact half-rotation of J around a Verlet step of R.

    One step of size dt maps (q, p) by

        half J rotation -> R kick (dt/2) -> R drift (dt) -> R kick (dt/2)
        -> half J rotation,

    every piece a linear symplectic map.  For real Hamiltonians (J = 0) this
    is plain leapfrog.  `one_step_matrix` exposes the composed 2n x 2n map
    used to push whole sample batches without a per-sample Python loop.
    """

    __slots__ = ("system", "dt", "_half_j", "_matrix")

    def __init__(self, system: HamiltonianSystem, dt: float):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.system = system
        self.dt = float(dt)
        self._half_j = _expm_antisymmetric(system.j_block, self.dt / 2.0)
        self._matrix = None

    def step(self, point: PhasePoint) -> PhasePoint:
        r = self.system.r_block
        dt = self.dt
        q = self._half_j @ point.q
        p = self._half_j @ point.p
        p = p - (dt / 2.0) * (r @ q)
        q = q + dt * (r @ p)
        p = p - (dt / 2.0) * (r @ q)
        return PhasePoint(self._half_j @ q, self._half_j @ p)

    @property
    def one_step_matrix(self) -> np.ndarray:
        if self._matrix is None:
            n = self.system.dim
            r = self.system.r_block
            dt = self.dt
            eye = np.eye(n)
            hj = np.block(
                [[self._half_j, np.zeros((n, n))], [np.zeros((n, n)), self._half_j]]
            )
            kick = np.block([[eye, np.zeros((n, n))], [-(dt / 2.0) * r, eye]])
            drift = np.block([[eye, dt * r], [np.zeros((n, n)), eye]])
            self._matrix = hj @ kick @ drift @ kick @ hj
        return self._matrix


def _step_count(t: float, dt: float) -> tuple[int, float]:
    """Number of uniform steps covering t, and the adjusted step size."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t < 0.0:
        raise ValueError("t must be non-negative")
    if t == 0.0:
        return 0, dt
    steps = max(1, int(round(t / dt)))
    return steps, t / steps


def symplectic_step(system: HamiltonianSystem, point: PhasePoint, dt: float) -> PhasePoint:
    """Single splitting step of size dt."""
    return SymplecticIntegrator(system, dt).step(point)


def integrate(system: HamiltonianSystem, point: PhasePoint, t: float, dt: float) -> PhasePoint:
    """March the Hamilton flow to time t in uniform steps of size ~dt.

    The step size is adjusted to t / round(t / dt) so the horizon is hit
    exactly with a uniform (hence symplectic) step sequence.
    """
    steps, dt_eff = _step_count(t, dt)
    if steps == 0:
        return point
    integrator = SymplecticIntegrator(system, dt_eff)
    for _ in range(steps):
        point = integrator.step(point)
    return point


def evolve_ensemble(
    ensemble: GaussianFieldEnsemble, h_op: HermitianOperator, t: float
) -> GaussianFieldEnsemble:
    """Push the ensemble covariance forward: D -> U(t) D U(t)^+.

    Equals the covariance of the per-sample push-forward, and leaves any
    eps I background block invariant because it commutes with U(t).
    """
    if ensemble.dim != h_op.dim:
        raise ValueError(f"dimension mismatch: {ensemble.dim} vs {h_op.dim}")
    u = exact_propagator(h_op, t)
    evolved = u @ ensemble.covariance.matrix @ u.conj().T
    return GaussianFieldEnsemble(
        HermitianOperator.symmetrized(evolved), ensemble.background_epsilon
    )


def propagate_samples(samples: np.ndarray, h_op: HermitianOperator, t: float, dt: float) -> np.ndarray:
    """Apply the symplectic integrator to every row of a sample batch.

    The batch form iterates the composed one-step matrix, the same linear
    map as per-sample stepping.
    """
    x = np.asarray(samples, dtype=np.complex128)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array, one sample per row")
    if x.shape[0] == 0:
        return x.copy()
    if x.shape[1] != h_op.dim:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {h_op.dim}")
    steps, dt_eff = _step_count(t, dt)
    if steps == 0:
        return x.copy()
    system = HamiltonianSystem(h_op)
    m = SymplecticIntegrator(system, dt_eff).one_step_matrix
    z = np.vstack([x.real.T, x.imag.T])
    for _ in range(steps):
        z = m @ z
    n = h_op.dim
    return (z[:n] + 1j * z[n:]).T


def covariance_derivative(ensemble: GaussianFieldEnsemble, h_op: HermitianOperator) -> np.ndarray:
    """Right-hand side -i [H_op, D] of the covariance evolution equation."""
    h = h_op.matrix
    d = ensemble.covariance.matrix
    return -1j * (h @ d - d @ h)


def write_trajectory_csv(
    path, h_op: HermitianOperator, phi0: FieldVector, t: float, dt: float, stride: int = 1
) -> None:
    """Dump t, field components, energy and power along a trajectory."""
    system = HamiltonianSystem(h_op)
    steps, dt_eff = _step_count(t, dt)
    integrator = SymplecticIntegrator(system, dt_eff) if steps else None
    point = PhasePoint.from_field(phi0)
    header = ["t"]
    for k in range(phi0.dim):
        header += [f"re_{k}", f"im_{k}"]
    header += ["energy", "power"]
    rows = []
    for k in range(steps + 1):
        if k % stride == 0 or k == steps:
            phi = point.q + 1j * point.p
            row = [k * dt_eff]
            for c in phi:
                row += [c.real, c.imag]
            row += [system.hamilton_function(point), float((phi @ phi.conj()).real)]
            rows.append(row)
        if k < steps:
            point = integrator.step(point)
    write_csv(path, header, rows)
