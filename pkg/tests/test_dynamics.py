import csv

import numpy as np
import pytest

from prefield.dynamics import (
    HamiltonianSystem,
    PhasePoint,
    SymplecticIntegrator,
    covariance_derivative,
    evolve_ensemble,
    exact_propagator,
    integrate,
    propagate_samples,
    symplectic_step,
    write_trajectory_csv,
)
from prefield.hilbert import DensityOperator, FieldVector, HermitianOperator
from prefield.random_field import (
    BackgroundField,
    RandomSeed,
    empirical_covariance,
    ensemble_from_density,
    ensemble_from_pure_state,
)

SEED = RandomSeed(99)


def rand_hermitian(rng, dim, radius=1.0):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (m + m.conj().T) / 2
    h *= radius / np.abs(np.linalg.eigvalsh(h)).max()
    return HermitianOperator(h)


def rand_unit(rng, dim):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return FieldVector(v / np.linalg.norm(v))


class TestExactPropagator:
    def test_zero_time_is_identity(self):
        h = HermitianOperator.diagonal([1.0, 2.0])
        np.testing.assert_allclose(exact_propagator(h, 0.0), np.eye(2), atol=1e-15)

    def test_pi_rotation(self):
        h = HermitianOperator.diagonal([1.0, -1.0])
        np.testing.assert_allclose(exact_propagator(h, np.pi), -np.eye(2), atol=1e-12)

    def test_group_property(self):
        rng = np.random.default_rng(0)
        h = rand_hermitian(rng, 4)
        u = exact_propagator(h, 0.7) @ exact_propagator(h, -0.7)
        np.testing.assert_allclose(u, np.eye(4), atol=1e-10)

    def test_norm_preserved_to_machine(self):
        rng = np.random.default_rng(1)
        h = rand_hermitian(rng, 5)
        phi = rand_unit(rng, 5)
        out = exact_propagator(h, 3.3) @ phi.components
        assert abs(np.linalg.norm(out) - 1.0) <= 1e-12


class TestHamiltonStructure:
    def test_hamilton_equations_match_schroedinger(self):
        # dq/dt + i dp/dt must equal -i H (q + ip)
        rng = np.random.default_rng(2)
        h = rand_hermitian(rng, 3)
        system = HamiltonianSystem(h)
        phi = rand_unit(rng, 3)
        point = PhasePoint.from_field(phi)
        dq, dp = system.velocity(point)
        rhs = -1j * (h.matrix @ phi.components)
        np.testing.assert_allclose(dq + 1j * dp, rhs, atol=1e-12)

    def test_energy_is_half_form(self):
        rng = np.random.default_rng(3)
        h = rand_hermitian(rng, 3)
        phi = rand_unit(rng, 3)
        system = HamiltonianSystem(h)
        direct = 0.5 * float(np.vdot(phi.components, h.matrix @ phi.components).real)
        assert system.hamilton_function(PhasePoint.from_field(phi)) == pytest.approx(
            direct, abs=1e-13
        )

    def test_phase_point_roundtrip(self):
        phi = FieldVector([1 + 2j, -0.5j])
        np.testing.assert_array_equal(
            PhasePoint.from_field(phi).to_field().components, phi.components
        )


class TestSymplecticIntegrator:
    def test_zero_hamiltonian_is_identity(self):
        system = HamiltonianSystem(HermitianOperator(np.zeros((2, 2))))
        point = PhasePoint(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        out = symplectic_step(system, point, 0.1)
        np.testing.assert_array_equal(out.q, point.q)
        np.testing.assert_array_equal(out.p, point.p)

    def test_harmonic_circle_bounded_and_driftless(self):
        # dim 1, frequency 1: the orbit is a circle; leapfrog keeps the
        # radius inside a bounded O(dt^2) oscillation (closed-form bound)
        # with no secular drift across periods
        system = HamiltonianSystem(HermitianOperator([[1.0]]))
        dt, steps = 1e-3, 10_000
        integrator = SymplecticIntegrator(system, dt)
        point = PhasePoint(np.array([1.0]), np.array([0.0]))
        radii = np.empty(steps + 1)
        radii[0] = 1.0
        for k in range(steps):
            point = integrator.step(point)
            radii[k + 1] = np.hypot(point.q[0], point.p[0])
        assert np.abs(radii - 1.0).max() <= (dt**2) / 4.0  # oscillation bound
        # secular drift: compare period-averaged radius at both ends
        period = int(round(2 * np.pi / dt))  # 6283 steps
        window = period // 2
        assert abs(radii[-window:].mean() - radii[:window].mean()) <= 1e-8

    def test_matches_exact_propagator_dim4(self):
        rng = np.random.default_rng(4)
        h = rand_hermitian(rng, 4)
        phi0 = rand_unit(rng, 4)
        final = integrate(HamiltonianSystem(h), PhasePoint.from_field(phi0), 1.0, 1e-3)
        target = exact_propagator(h, 1.0) @ phi0.components
        assert np.linalg.norm((final.q + 1j * final.p) - target) <= 1e-4

    def test_flow_equivalence_dims_2_to_8(self):
        rng = np.random.default_rng(5)
        for dim in (2, 3, 5, 8):
            h = rand_hermitian(rng, dim)
            phi0 = rand_unit(rng, dim)
            final = integrate(HamiltonianSystem(h), PhasePoint.from_field(phi0), 0.5, 1e-3)
            target = exact_propagator(h, 0.5) @ phi0.components
            assert np.linalg.norm((final.q + 1j * final.p) - target) <= 1e-4

    def test_energy_and_norm_bounded_over_long_run(self):
        rng = np.random.default_rng(6)
        h = rand_hermitian(rng, 4)
        system = HamiltonianSystem(h)
        integrator = SymplecticIntegrator(system, 1e-3)
        point = PhasePoint.from_field(rand_unit(rng, 4))
        e0 = system.hamilton_function(point)
        n0 = float(point.q @ point.q + point.p @ point.p)
        for _ in range(10_000):  # t in [0, 10]
            point = integrator.step(point)
            assert abs(system.hamilton_function(point) - e0) <= 1e-6
            n = float(point.q @ point.q + point.p @ point.p)
            assert abs(n - n0) <= 1e-6

    def test_one_step_matrix_matches_step(self):
        rng = np.random.default_rng(7)
        h = rand_hermitian(rng, 3)
        integrator = SymplecticIntegrator(HamiltonianSystem(h), 0.01)
        q, p = rng.standard_normal(3), rng.standard_normal(3)
        out = integrator.step(PhasePoint(q, p))
        vec = integrator.one_step_matrix @ np.concatenate([q, p])
        np.testing.assert_allclose(np.concatenate([out.q, out.p]), vec, atol=1e-13)


class TestEnsembleEvolution:
    def test_zero_time_unchanged(self):
        rng = np.random.default_rng(8)
        ens = ensemble_from_pure_state(rand_unit(rng, 3), BackgroundField(0.2))
        out = evolve_ensemble(ens, rand_hermitian(rng, 3), 0.0)
        np.testing.assert_allclose(out.covariance.matrix, ens.covariance.matrix, atol=1e-13)

    def test_background_is_stationary(self):
        eps = 0.3
        ens = ensemble_from_density(DensityOperator.maximally_mixed(2), BackgroundField(eps - 0.25))
        # covariance (0.5 + eps - 0.25) I: any isotropic law is stationary
        rng = np.random.default_rng(9)
        h = rand_hermitian(rng, 2)
        out = evolve_ensemble(ens, h, 2.0)
        np.testing.assert_allclose(out.covariance.matrix, ens.covariance.matrix, atol=1e-12)

    def test_pure_state_with_background_shifts_additively(self):
        rng = np.random.default_rng(10)
        psi = rand_unit(rng, 3)
        eps = 0.15
        h = rand_hermitian(rng, 3)
        ens = ensemble_from_pure_state(psi, BackgroundField(eps))
        t = 1.7
        out = evolve_ensemble(ens, h, t)
        psi_t = exact_propagator(h, t) @ psi.components
        expected = np.outer(psi_t, psi_t.conj()) + eps * np.eye(3)
        assert np.abs(out.covariance.matrix - expected).max() <= 1e-12

    def test_von_neumann_equation_at_zero(self):
        rng = np.random.default_rng(11)
        psi = rand_unit(rng, 3)
        h = rand_hermitian(rng, 3)
        ens = ensemble_from_pure_state(psi, BackgroundField(0.1))
        step = 1e-4
        u_p = exact_propagator(h, step)
        u_m = exact_propagator(h, -step)
        d = ens.covariance.matrix
        fd = (u_p @ d @ u_p.conj().T - u_m @ d @ u_m.conj().T) / (2 * step)
        assert np.abs(fd - covariance_derivative(ens, h)).max() <= 1e-6


class TestPropagateSamples:
    def test_empty_batch(self):
        h = HermitianOperator(np.eye(2))
        out = propagate_samples(np.empty((0, 2), dtype=complex), h, 1.0, 0.1)
        assert out.shape == (0, 2)

    def test_covariance_pushforward(self):
        rng = np.random.default_rng(12)
        psi = rand_unit(rng, 2)
        h = rand_hermitian(rng, 2)
        ens = ensemble_from_pure_state(psi, BackgroundField(0.2))
        x = ens.sample(10_000, SEED)
        y = propagate_samples(x, h, 1.0, 1e-2)
        target = evolve_ensemble(ens, h, 1.0).covariance.matrix
        emp = empirical_covariance(y).matrix
        assert np.abs(emp - target).max() <= 0.05 * np.abs(target).max()

    def test_power_preserved(self):
        rng = np.random.default_rng(13)
        h = rand_hermitian(rng, 2)
        ens = ensemble_from_pure_state(rand_unit(rng, 2), BackgroundField(0.1))
        x = ens.sample(200, SEED)
        y = propagate_samples(x, h, 1.0, 1e-3)
        p_in = (np.abs(x) ** 2).sum(axis=1)
        p_out = (np.abs(y) ** 2).sum(axis=1)
        assert np.abs(p_in - p_out).max() <= 1e-6


def test_trajectory_csv(tmp_path):
    rng = np.random.default_rng(14)
    h = rand_hermitian(rng, 2)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, h, rand_unit(rng, 2), 1.0, 1e-3, stride=100)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "re_0", "im_0", "re_1", "im_1", "energy", "power"]
    energies = np.array([float(r[-2]) for r in rows[1:]])
    powers = np.array([float(r[-1]) for r in rows[1:]])
    assert np.abs(energies - energies[0]).max() <= 1e-6
    assert np.abs(powers - powers[0]).max() <= 1e-6
    assert float(rows[-1][0]) == pytest.approx(1.0, abs=1e-9)
