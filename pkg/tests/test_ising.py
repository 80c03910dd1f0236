import math

import numpy as np
import pytest

from ionladder import ising
from ionladder.exceptions import InvalidRange, SizeLimit

GEOM = {"d": 1.0, "a": 1.0}
GOLDEN = (1 + math.sqrt(5)) / 2


def test_open_chain_matches_oracle(oracle):
    model = ising.build_model(4, f={1: 1.0, 2: 0.5}, g=0.1, boundary="open")
    e = ising.lanczos_ground(model).energy
    assert e == pytest.approx(oracle["ed_open_L4_f2_0.5_g0.1"], abs=1e-9)


def test_dipolar_ring_matches_oracle(oracle):
    model = ising.build_model(10, geometry=GEOM, g=0.5)
    assert ising.lanczos_ground(model).energy == pytest.approx(
        oracle["ed_ring_L10_dipolar_g0.5"], abs=1e-9)


def test_scan_ring_energy_and_structure_match_oracle(oracle):
    ref = oracle["ed_ring_L12_f2_0.69_g0.3"]
    model = ising.build_model(12, geometry=GEOM, f2=0.69, mode="scan", g=0.3)
    gs = ising.lanczos_ground(model)
    assert gs.energy == pytest.approx(ref["energy"], abs=1e-9)
    sf = ising.structure_factor(gs, model)
    assert np.allclose(sf.values, ref["S"], atol=1e-8)
    assert sf.peaks(1)[0]["q"] == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("L", [6, 8, 10, 12])
def test_lanczos_matches_dense(L):
    model = ising.build_model(L, geometry=GEOM, f2=0.6, g=0.4, delta_max=min(4, (L - 1) // 2))
    dense = np.linalg.eigvalsh(ising.dense_hamiltonian(model))[0]
    for sector in ("symmetric", "full"):
        assert ising.lanczos_ground(model, tol=1e-12, sector=sector).energy == pytest.approx(
            dense, abs=1e-9)


def test_random_start_matches_uniform_start():
    model = ising.build_model(10, geometry=GEOM, f2=0.45, g=0.7)
    a = ising.lanczos_ground(model, seed=3).energy
    b = ising.lanczos_ground(model).energy
    assert a == pytest.approx(b, abs=1e-9)


def test_matrix_free_matches_dense(rng):
    model = ising.build_model(8, f={1: 1.0, 2: 0.3, 3: 0.1}, g=0.8)
    psi = rng.normal(size=model.dim)
    assert np.allclose(ising.apply_hamiltonian(model, psi),
                       ising.dense_hamiltonian(model) @ psi, atol=1e-12)


@pytest.mark.parametrize("f2", [0.3, 0.8, 0.5])
@pytest.mark.parametrize("L", [8, 12, 16, 20])
def test_classical_counts_match_brute_force(oracle, f2, L):
    model = ising.build_model(L, f={1: 1.0, 2: f2}, g=0.0)
    got = ising.classical_ground_set(model).degeneracy
    assert got == oracle["classical_counts"][f"{f2}_{L}"]


def test_degeneracy_growth_is_log_golden_ratio(oracle):
    counts = {L: oracle["classical_counts"][f"0.5_{L}"] for L in (8, 12, 16, 20)}
    assert ising.degeneracy_growth(counts) == pytest.approx(math.log(GOLDEN), rel=0.05)


def test_classical_set_needs_zero_field():
    with pytest.raises(ValueError):
        ising.classical_ground_set(ising.build_model(6, f={1: 1.0}, g=0.1))


def test_classical_size_limit():
    with pytest.raises(SizeLimit):
        ising.classical_ground_set(ising.build_model(26, f={1: 1.0}, g=0.0))


def test_ring_rejects_double_counted_bonds():
    with pytest.raises(InvalidRange):
        ising.build_model(8, geometry=GEOM, delta_max=4)
    ising.build_model(8, geometry=GEOM, delta_max=4, boundary="open")


def test_rung_width_reproduces_f2():
    for f2 in (0.2, 0.45, 0.57, 0.9):
        d = ising.rung_for_f2(f2)
        assert ising.dipolar_ratios(d, 1.0)[2] == pytest.approx(f2, rel=1e-12)
    with pytest.raises(InvalidRange):
        ising.rung_for_f2(0.1)


def test_tied_mode_follows_geometry():
    model = ising.build_model(16, geometry=GEOM, f2=0.57, mode="tied")
    assert model.f[2] == pytest.approx(0.57)
    assert model.f == pytest.approx(ising.dipolar_ratios(ising.rung_for_f2(0.57), 1.0))


def test_structure_factor_of_neel_state():
    L = 8
    up_down = sum(1 << k for k in range(1, L, 2))
    psi = np.zeros(2 ** L)
    psi[up_down] = 1.0
    sf = ising.structure_factor(psi, L)
    assert sf.at(math.pi) == pytest.approx(1.0)
    assert np.allclose(np.delete(sf.values, L // 2), 0.0, atol=1e-12)


def test_ferromagnetic_phase_peaks_at_zero():
    model = ising.build_model(12, geometry=GEOM, f2=0.3, g=0.05)
    peak = ising.structure_factor(ising.lanczos_ground(model), model).peaks(1)[0]
    assert peak["q"] == 0.0 and peak["amplitude"] > 0.9


def test_paramagnet_has_small_order():
    model = ising.build_model(12, geometry=GEOM, f2=0.3, g=3.0)
    sf = ising.structure_factor(ising.lanczos_ground(model), model)
    assert sf.values.max() < 0.2


def test_count_drops():
    g = np.linspace(0, 1, 11)
    two = [1, 1, 0.8, 0.6, 0.6, 0.6, 0.4, 0.2, 0.2, 0.2, 0.2]
    assert len(ising.count_drops(g, two)) == 2
    one = np.linspace(1, 0, 11)
    assert len(ising.count_drops(g, one)) == 1
    assert ising.count_drops(g, np.ones(11)) == []


def test_phase_scan_rows():
    points = ising.phase_scan(8, [0.45], [0.1, 0.5], geometry=GEOM, delta_max=3)
    assert [p.g for p in points] == [0.1, 0.5]
    assert all(p.converged for p in points)
    assert len(points[0].row()) == len(ising.SCAN_HEADER)


def test_sawtooth_bonds():
    bonds = ising.sawtooth_bonds(8)
    assert len(bonds) == 8 + 4
    model = ising.build_model(8, bonds=bonds, g=0.0)
    assert ising.classical_ground_set(model).degeneracy > 2


def test_correlation_classify_long_range_order():
    model = ising.build_model(12, geometry=GEOM, f2=0.3, g=0.05)
    gs = ising.lanczos_ground(model)
    result = ising.correlation_classify(gs, model)
    assert result["decay"] == "LRO"
