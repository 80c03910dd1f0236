import math
import warnings

import numpy as np
import pytest

from ionladder import couplings as cp
from ionladder import dynamics as dyn
from ionladder.crystal import TrapConfig, equilibrium_positions
from ionladder.exceptions import DimensionOverflow

from conftest import OMEGA_Z


def _pair(j):
    return cp.SpinCouplings(np.array([[0.0, j], [j, 0.0]]), "test")


def test_two_spins_precess_at_four_j():
    j = 1.3
    times = np.linspace(0, 3, 200)
    psi = dyn.product_spin_state([dyn.SPIN_PLUS, dyn.SPIN_PLUS])
    tr = dyn.evolve_effective(_pair(j), 0.0, psi, times)
    assert np.allclose(tr.mean[0], np.cos(4 * j * times), atol=1e-12)
    assert tr.norm_drift < 1e-12


def test_transverse_field_stepper_matches_rabi_flopping():
    # J = 0, field h: <sigma^x> stays 1 from |+>, <sigma^x> from |up> stays 0
    times = np.linspace(0, 2, 50)
    up = dyn.product_spin_state([dyn.SPIN_UP, dyn.SPIN_UP])
    tr = dyn.evolve_effective(_pair(0.0), 0.7, up, times)
    assert np.allclose(tr.mean, 0.0, atol=1e-9)


def _integrated_variance(c, tau, t):
    return c * tau ** 3 * (t / tau - 1 + np.exp(-t / tau))


def test_ou_dephasing_matches_gaussian_decay():
    noise = dyn.NoiseConfig.from_T2(1.0, 0.2, n_traj=2000, rng_seed=5)
    times = np.linspace(0, 1, 11)
    psi = dyn.product_spin_state([dyn.SPIN_PLUS, dyn.SPIN_PLUS])
    tr = dyn.evolve_effective(_pair(0.0), 0.0, psi, times, noise)
    expected = np.exp(-0.5 * _integrated_variance(noise.c, noise.tau, times))
    assert np.all(np.abs(tr.mean[0] - expected) <= 5 * tr.stderr[0] + 1e-3)


def test_ou_stationary_variance():
    noise = dyn.NoiseConfig(c=2.0, tau=0.5)
    rng = np.random.default_rng(0)
    eps = np.zeros(100_000)
    for _ in range(40):
        eps = dyn.ou_step(eps, 0.25, noise, rng)
    assert eps.var() == pytest.approx(noise.stationary_variance, rel=0.02)
    assert abs(eps.mean()) < 0.01


def test_noise_is_seeded():
    noise = dyn.NoiseConfig.from_T2(1e-2, 1e-3, n_traj=5, rng_seed=11)
    t = np.linspace(0, 1e-2, 30)
    assert np.array_equal(dyn.noise_phases(t, noise), dyn.noise_phases(t, noise))
    other = dyn.NoiseConfig.from_T2(1e-2, 1e-3, n_traj=5, rng_seed=12)
    assert not np.array_equal(dyn.noise_phases(t, noise), dyn.noise_phases(t, other))


def test_t2_round_trip():
    noise = dyn.NoiseConfig.from_T2(3e-3, 2e-4)
    assert noise.T2 == pytest.approx(3e-3, rel=1e-12)


@pytest.fixture(scope="module")
def ion_pair():
    trap = TrapConfig(3.0 * OMEGA_Z, 20 * OMEGA_Z, OMEGA_Z)
    crystal = equilibrium_positions(trap, 2)
    omega_L = 1.1 * trap.omega_y
    laser = cp.LaserConfig.from_lamb_dicke(trap, 0.1, omega_L,
                                           0.15 * abs(trap.omega_y - omega_L) / 0.1)
    return crystal, laser


def test_truncation_converges_to_coherent_solution(ion_pair):
    crystal, laser = ion_pair
    times = np.linspace(0, 1 / laser.j_eff(crystal.trap), 60)
    spin = dyn.product_spin_state([dyn.SPIN_PLUS, dyn.SPIN_MINUS])
    errors = []
    for cutoff in (1, 2):
        H = dyn.build_rwa_hamiltonian(crystal, laser, cutoff, eta_x=0.01)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = dyn.evolve_full(H, dyn.spin_phonon_product(H, spin), times)
        assert tr.norm_drift < 1e-10
        assert tr.energy_drift < 1e-8
        errors.append(tr.truncation_error)
    assert errors[1] < 0.5 * errors[0]
    assert errors[1] < 0.03


def test_effective_model_improves_with_weaker_drive(ion_pair):
    crystal, base = ion_pair
    spin = dyn.product_spin_state([dyn.SPIN_PLUS, dyn.SPIN_PLUS])
    gaps = []
    for scale in (1.0, 0.5, 0.25):
        laser = cp.LaserConfig(base.Omega_L * scale, base.omega_L, base.k_L, base.theta)
        j_eff = laser.j_eff(crystal.trap)
        times = np.linspace(0, 1 / j_eff, 80)
        H = dyn.build_rwa_hamiltonian(crystal, laser, 1, eta_x=0.01)
        full = dyn.evolve_untruncated(H, spin, times)
        eff = dyn.evolve_effective(dyn.rwa_couplings(H, j_eff), 0.0, spin, times)
        gaps.append(dyn.dynamics_deviation(full, eff)["max"])
    # the gap is second order in the drive: halving it divides the gap by about four
    assert gaps[0] / gaps[1] > 3 and gaps[1] / gaps[2] > 3
    assert gaps[2] < 0.005


def test_dimension_budget_is_enforced(triangle):
    laser = cp.LaserConfig.from_lamb_dicke(triangle.trap, 0.1, 1.1 * triangle.trap.omega_y,
                                           1e6)
    with pytest.raises(DimensionOverflow):
        dyn.build_rwa_hamiltonian(triangle, laser, fock_cutoff=6)


def test_unnormalized_state_rejected(ion_pair):
    crystal, laser = ion_pair
    H = dyn.build_rwa_hamiltonian(crystal, laser, 1, eta_x=0.01)
    psi = 2 * dyn.spin_phonon_product(H, dyn.product_spin_state([dyn.SPIN_UP, dyn.SPIN_UP]))
    with pytest.raises(ValueError):
        dyn.evolve_full(H, psi, [0.0, 1e-6])


def test_deviation_requires_common_grid():
    a = dyn.SpinTrace(np.array([0.0, 1.0]), np.zeros((1, 2)), np.zeros((1, 2)))
    b = dyn.SpinTrace(np.array([0.0, 2.0]), np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        dyn.dynamics_deviation(a, b)


def test_benchmark_rejects_unknown_case():
    with pytest.raises(ValueError):
        dyn.benchmark_setup("sideways")


def test_benchmark_effective_coupling_value():
    s = dyn.benchmark_setup()
    # J_eff = (Omega eta)^2 kappa_y omega_y / (8 delta^2) with Omega eta = 0.15 |delta|
    expected = 0.15 ** 2 / 8 * s.crystal.trap.kappa_y * s.crystal.trap.omega_y
    assert s.j_eff == pytest.approx(expected, rel=1e-12)
    assert math.isclose(s.eta_x, 0.01)
