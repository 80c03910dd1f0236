import math

import numpy as np

from ionladder.crystal import TrapConfig, equilibrium_positions, potential_hessian
from ionladder.phonons import (branch_gap, planar_modes, symmetric_modes, transverse_matrix,
                               transverse_modes)

from conftest import OMEGA_Z


def test_transverse_frequencies_match_oracle(triangle, oracle):
    tm = transverse_modes(triangle)
    assert np.allclose(tm.frequencies / OMEGA_Z, oracle["three_ion_transverse_over_wz"],
                       rtol=1e-7)


def test_planar_frequencies_match_oracle(triangle, oracle):
    pm = planar_modes(triangle)
    assert np.allclose(pm.frequencies / OMEGA_Z, oracle["three_ion_planar_over_wz"], rtol=1e-7)


def test_mode_matrix_is_full_hessian_block(triangle):
    # the y block of the full Hessian, rescaled, is the transverse matrix
    H = potential_hessian(triangle.positions, triangle.trap.kappas)
    kap_y = triangle.trap.kappa_y
    assert np.allclose(kap_y * H[1::3, 1::3], transverse_matrix(triangle), atol=1e-12)


def test_com_mode_of_long_chain():
    trap = TrapConfig.from_kappas(1e-2, 1e-2 / 400)
    c = equilibrium_positions(trap, 20)
    tm = transverse_modes(c)
    top = tm.mode_matrix[:, -1]
    assert abs(tm.eigenvalues[-1] - 1.0) < 1e-10
    assert np.allclose(np.abs(top), 1 / math.sqrt(20), atol=1e-8)


def test_orthonormal_modes(triangle):
    for modes in (transverse_modes(triangle), planar_modes(triangle)):
        M = modes.mode_matrix
        assert np.max(np.abs(M.T @ M - np.eye(len(M)))) < 1e-10


def test_degenerate_vectors_are_deterministic():
    A = np.diag([1.0, 1.0, 2.0])
    _, v1 = symmetric_modes(A)
    _, v2 = symmetric_modes(A.copy())
    assert np.array_equal(v1, v2)


def test_branch_gap_sign():
    narrow = TrapConfig.from_kappas(1e-2, 1e-2 / 400)
    c = equilibrium_positions(narrow, 12)
    gap = branch_gap(transverse_modes(c), planar_modes(c))
    assert gap["gap"] > 0 and not gap["overlap"]
