"""Spin-phonon dynamics in the rotating frame and its effective Ising limit.

The full model keeps three local oscillators per ion (x, y, z) truncated at
``fock_cutoff`` quanta each.  Because every term of the Hamiltonian is
diagonal in the sigma^z basis, the state splits into 2^N independent phonon
wavefunctions, one per spin configuration.  Each block is diagonalized once
and propagated exactly.

Dephasing enters as ``(1/2) eps(t) sum_i sigma^z_i`` with an Ornstein-Uhlenbeck
``eps``.  This term commutes with both the full and the h = 0 effective
Hamiltonian, so a noise history only rotates every spin about z by the
accumulated phase ``Phi(t) = int eps dt``.  The phase is integrated with
``eps`` held constant on an OU sub-grid of spacing ``<= tau / 20``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy import linalg, sparse

from .couplings import LaserConfig, SpinCouplings
from .crystal import IonCrystal
from .exceptions import DimensionOverflow, StepRejection
from .phonons import coulomb_hessian

AXIS_NAMES = ("x", "y", "z")
DEFAULT_DIM_BUDGET = 2 ** 27


@dataclass(frozen=True)
class NoiseConfig:
    c: float = 0.0
    tau: float = 1e-3
    n_traj: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.c < 0:
            raise ValueError("c must be non-negative")

    @property
    def T2(self):
        return math.inf if self.c == 0 else 2.0 / (self.c * self.tau ** 2)

    @property
    def stationary_variance(self):
        return 0.5 * self.c * self.tau

    @classmethod
    def from_T2(cls, T2, tau, n_traj=1000, rng_seed=0):
        return cls(2.0 / (T2 * tau ** 2), tau, n_traj, rng_seed)


def ou_step(eps, dt, noise: NoiseConfig, rng):
    """Exact Ornstein-Uhlenbeck transition over ``dt`` (any size)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    decay = math.exp(-dt / noise.tau)
    spread = math.sqrt(0.5 * noise.c * noise.tau * (1.0 - decay ** 2))
    eps = np.asarray(eps, dtype=float)
    return eps * decay + spread * rng.standard_normal(eps.shape)


def trajectory_rngs(noise: NoiseConfig):
    seq = np.random.SeedSequence(noise.rng_seed)
    return [np.random.default_rng(s) for s in seq.spawn(noise.n_traj)]


def noise_phases(times, noise: NoiseConfig):
    """Accumulated phase Phi(t) per trajectory, shape (n_traj, len(times)).

    Each trajectory starts from a stationary draw and owns its generator,
    so results do not depend on evaluation order.
    """
    times = np.asarray(times, dtype=float)
    if noise.c == 0:
        return np.zeros((noise.n_traj, len(times)))
    t_end = float(times[-1])
    n_steps = max(1, int(math.ceil(t_end / (noise.tau / 20))))
    dt = t_end / n_steps
    grid = np.linspace(0.0, t_end, n_steps + 1)
    out = np.empty((noise.n_traj, len(times)))
    sd0 = math.sqrt(noise.stationary_variance)
    for k, rng in enumerate(trajectory_rngs(noise)):
        eps = np.empty(n_steps)
        e = sd0 * rng.standard_normal()
        for m in range(n_steps):
            eps[m] = e
            e = float(ou_step(e, dt, noise, rng))
        phi = np.concatenate([[0.0], np.cumsum(eps * dt)])
        out[k] = np.interp(times, grid, phi)
    return out


# -- operators ---------------------------------------------------------------

def _ladder(levels):
    return sparse.diags(np.sqrt(np.arange(1, levels)), 1, format="csr")


def _embed(op, site, dims):
    mats = [sparse.identity(d, format="csr") for d in dims]
    mats[site] = op
    return reduce(lambda a, b: sparse.kron(a, b, format="csr"), mats)


def spin_configurations(n):
    """sigma^z eigenvalues, row b for basis index b; ion 1 is the leading bit."""
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return 1 - 2 * bits


@dataclass
class RwaHamiltonian:
    n_ions: int
    fock_cutoff: int
    detunings: np.ndarray        # per local mode (ion-major, axis-minor), rad/s
    hopping: np.ndarray          # single-particle matrix including detunings
    forces: np.ndarray           # complex g_{i,a}, shape (N, 3)
    warnings: list = field(default_factory=list)
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n_modes(self):
        return 3 * self.n_ions

    @property
    def phonon_dim(self):
        return (self.fock_cutoff + 1) ** self.n_modes

    @property
    def dim(self):
        return 2 ** self.n_ions * self.phonon_dim

    def phonon_operators(self):
        levels = self.fock_cutoff + 1
        dims = [levels] * self.n_modes
        a = _ladder(levels)
        return [_embed(a, m, dims) for m in range(self.n_modes)]

    def phonon_parts(self):
        if "hop" not in self._blocks:
            ops = self.phonon_operators()
            hop = sparse.csr_matrix((self.phonon_dim, self.phonon_dim), dtype=complex)
            for p, ap in enumerate(ops):
                for q, aq in enumerate(ops):
                    if self.hopping[p, q] != 0:
                        hop = hop + self.hopping[p, q] * (ap.T @ aq)
            push = []
            for i in range(self.n_ions):
                f = sparse.csr_matrix((self.phonon_dim, self.phonon_dim), dtype=complex)
                for a in range(3):
                    g = self.forces[i, a]
                    if g != 0:
                        op = ops[3 * i + a]
                        f = f + g * op.T + np.conj(g) * op
                push.append(f)
            self._blocks["hop"] = hop
            self._blocks["push"] = push
        return self._blocks["hop"], self._blocks["push"]

    def sector_matrix(self, spins):
        hop, push = self.phonon_parts()
        return hop + sum(s * f for s, f in zip(spins, push))

    def matrix(self):
        """Full sparse Hamiltonian, spin index leading."""
        configs = spin_configurations(self.n_ions)
        blocks = [self.sector_matrix(s) for s in configs]
        return sparse.block_diag(blocks, format="csr")

    def sector_eig(self, index):
        key = ("eig", int(index))
        if key not in self._blocks:
            spins = spin_configurations(self.n_ions)[index]
            dense = self.sector_matrix(spins).toarray()
            self._blocks[key] = linalg.eigh(0.5 * (dense + dense.conj().T))
        return self._blocks[key]


def rwa_validity(crystal: IonCrystal, omega_L: float):
    """Ratio of each local hopping to the sum of the two bare frequencies."""
    trap = crystal.trap
    omegas = np.array([trap.omega_x, trap.omega_y, trap.omega_z])
    kap = trap.kappas
    V = coulomb_hessian(crystal).V
    n = crystal.n_ions
    worst = 0.0
    for i in range(n):
        for j in range(n):
            for a in range(3):
                for b in range(3):
                    lhs = 0.25 * trap.omega_z * (kap[a] * kap[b]) ** 0.25 * abs(V[i, j, a, b])
                    worst = max(worst, lhs / (omegas[a] + omegas[b]))
    return worst


def build_rwa_hamiltonian(crystal: IonCrystal, laser: LaserConfig, fock_cutoff: int = 1,
                          eta_x: float | None = None, dim_budget: int = DEFAULT_DIM_BUDGET,
                          rwa_threshold: float = 0.25) -> RwaHamiltonian:
    """Rotating-frame spin-phonon Hamiltonian in the local oscillator basis.

    ``eta_x`` overrides the planar Lamb-Dicke factor derived from the laser
    geometry (useful to test leakage into the planar modes at fixed phases).
    """
    n = crystal.n_ions
    dim = 2 ** n * (fock_cutoff + 1) ** (3 * n)
    if dim > dim_budget:
        raise DimensionOverflow(f"state dimension {dim} exceeds budget {dim_budget}")
    trap = crystal.trap
    omegas = np.array([trap.omega_x, trap.omega_y, trap.omega_z])
    detune = omegas - laser.omega_L
    kap = trap.kappas
    V = coulomb_hessian(crystal).V
    scale = 0.5 * trap.omega_z * np.outer(kap, kap) ** 0.25
    hop = np.einsum("ijab,ab->iajb", V, scale).reshape(3 * n, 3 * n)
    hop += np.diag(np.tile(detune, n))

    eta = np.array([laser.eta_x(trap) if eta_x is None else eta_x, laser.eta_y(trap), 0.0])
    phase = np.exp(1j * laser.phases(crystal))
    forces = 0.5j * laser.Omega_L * phase[:, None] * eta[None, :]

    out = RwaHamiltonian(n, fock_cutoff, np.tile(detune, n), hop, forces)
    ratio = rwa_validity(crystal, laser.omega_L)
    if ratio >= rwa_threshold:
        msg = f"local-basis rotating-wave condition marginal (ratio {ratio:.3g})"
        out.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return out


# -- states and observables --------------------------------------------------

SPIN_UP = np.array([1.0, 0.0], dtype=complex)
SPIN_DOWN = np.array([0.0, 1.0], dtype=complex)
SPIN_PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2)
SPIN_MINUS = np.array([1.0, -1.0], dtype=complex) / math.sqrt(2)


def product_spin_state(single_spins):
    return reduce(np.kron, single_spins)


def spin_phonon_product(H: RwaHamiltonian, spin_state):
    """Spin state times the phonon vacuum, as (2^N, phonon_dim) amplitudes."""
    psi = np.zeros((2 ** H.n_ions, H.phonon_dim), dtype=complex)
    psi[:, 0] = spin_state
    return psi


def _flip_table(n):
    idx = np.arange(2 ** n)
    return [idx ^ (1 << (n - 1 - j)) for j in range(n)]


def _spin_xy_from_blocks(psi_t, n):
    """<sigma^x_j>, <sigma^y_j> from sector amplitudes psi_t[b, :, t]."""
    configs = spin_configurations(n)
    sx = np.zeros((n, psi_t.shape[-1]))
    sy = np.zeros_like(sx)
    for j, flip in enumerate(_flip_table(n)):
        overlap = np.einsum("bkt,bkt->bt", psi_t[flip].conj(), psi_t)
        sx[j] = overlap.sum(axis=0).real
        # sigma^y |up> = i |down>, sigma^y |down> = -i |up>
        sy[j] = (1j * configs[:, j][:, None] * overlap).sum(axis=0).real
    return sx, sy


def propagate_blocks(H: RwaHamiltonian, psi0, times):
    """Noiseless evolution; returns amplitudes of shape (2^N, phonon_dim, T)."""
    psi0 = np.asarray(psi0, dtype=complex).reshape(2 ** H.n_ions, H.phonon_dim)
    times = np.asarray(times, dtype=float)
    out = np.zeros(psi0.shape + (len(times),), dtype=complex)
    for b in range(2 ** H.n_ions):
        if not np.any(psi0[b]):
            continue
        evals, vecs = H.sector_eig(b)
        coeff = vecs.conj().T @ psi0[b]
        out[b] = vecs @ (coeff[:, None] * np.exp(-1j * np.outer(evals, times)))
    return out


@dataclass
class SpinTrace:
    times: np.ndarray
    mean: np.ndarray        # (N, T) averaged <sigma^x_j>
    stderr: np.ndarray
    norm_drift: float = 0.0
    energy_drift: float = 0.0
    per_traj: np.ndarray | None = None
    truncation_error: float | None = None

    def csv_rows(self):
        rows = []
        for k, t in enumerate(self.times):
            for j in range(self.mean.shape[0]):
                rows.append((t, j + 1, self.mean[j, k], self.stderr[j, k]))
        return rows


def _dephase(sx, sy, times, noise: NoiseConfig, keep_traj=False):
    phases = noise_phases(times, noise)
    # exp(i Phi Z/2) sigma^x exp(-i Phi Z/2) = cos(Phi) sigma^x - sin(Phi) sigma^y
    vals = (np.cos(phases)[:, None, :] * sx[None] - np.sin(phases)[:, None, :] * sy[None])
    mean = vals.mean(axis=0)
    if noise.n_traj > 1:
        stderr = vals.std(axis=0, ddof=1) / math.sqrt(noise.n_traj)
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr, (vals if keep_traj else None)


def evolve_full(H: RwaHamiltonian, psi0, times, noise: NoiseConfig | None = None,
                keep_traj=False, truncation_tol=0.01) -> SpinTrace:
    """Trajectory-averaged <sigma^x_j(t)> under the truncated RWA Hamiltonian.

    When ``psi0`` is a spin state times the phonon vacuum, the noiseless
    result is also compared with the cutoff-free coherent-state solution and
    the largest gap is stored as ``truncation_error`` (warning above
    ``truncation_tol``).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing")
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.vdot(psi0, psi0).real - 1) > 1e-8:
        raise ValueError("initial state is not normalized")
    noise = noise or NoiseConfig(0.0, 1.0, 1)
    psi_t = propagate_blocks(H, psi0, times)
    norms = np.einsum("bkt,bkt->t", psi_t.conj(), psi_t).real
    energies = np.zeros(len(times))
    scale = 0.0
    psi0b = psi0.reshape(2 ** H.n_ions, H.phonon_dim)
    for b in range(2 ** H.n_ions):
        if np.any(psi0b[b]):
            evals, vecs = H.sector_eig(b)
            pops = np.abs(vecs.conj().T @ psi_t[b]) ** 2
            energies += evals @ pops
            scale += np.abs(evals) @ pops[:, 0]
    # <H> can vanish (vacuum start), so drift is measured against <|H|>
    scale = max(abs(energies[0]), scale, 1e-300)
    sx, sy = _spin_xy_from_blocks(psi_t, H.n_ions)
    mean, stderr, vals = _dephase(sx, sy, times, noise, keep_traj)
    out = SpinTrace(times, mean, stderr, float(np.max(np.abs(norms - 1))),
                    float(np.max(np.abs(energies - energies[0])) / scale), vals)
    if not np.any(psi0b[:, 1:]):
        exact = evolve_untruncated(H, psi0b[:, 0], times)
        out.truncation_error = float(np.max(np.abs(exact.mean - sx)))
        if out.truncation_error > truncation_tol:
            warnings.warn(f"Fock cutoff {H.fock_cutoff} leaves a spin error of "
                          f"{out.truncation_error:.3g}", stacklevel=2)
    return out


def evolve_untruncated(H: RwaHamiltonian, spin_state, times,
                       noise: NoiseConfig | None = None) -> SpinTrace:
    """Closed-form evolution from spin state times phonon vacuum, no Fock cutoff.

    In every spin sector the phonons see a quadratic hopping plus a linear
    push, so the vacuum stays a coherent state.  With gamma = h^-1 f the
    sector state is exp(i gamma.h.gamma t + i Im(beta.gamma*)) |beta - gamma>
    where beta = exp(-i h t) gamma.
    """
    times = np.asarray(times, dtype=float)
    noise = noise or NoiseConfig(0.0, 1.0, 1)
    n = H.n_ions
    configs = spin_configurations(n)
    evals, vecs = np.linalg.eigh(H.hopping)
    spin_state = np.asarray(spin_state, dtype=complex)
    alphas = np.zeros((2 ** n, H.n_modes, len(times)), dtype=complex)
    amps = np.zeros((2 ** n, len(times)), dtype=complex)
    for b, spins in enumerate(configs):
        f = (spins[:, None] * H.forces).reshape(-1)
        gamma = vecs @ ((vecs.conj().T @ f) / evals)
        beta = vecs @ ((vecs.conj().T @ gamma)[:, None] * np.exp(-1j * np.outer(evals, times)))
        phase = np.vdot(gamma, H.hopping @ gamma).real * times + np.imag(gamma.conj() @ beta)
        alphas[b] = beta - gamma[:, None]
        amps[b] = spin_state[b] * np.exp(1j * phase)
    sq = np.sum(np.abs(alphas) ** 2, axis=1)
    sx = np.zeros((n, len(times)))
    sy = np.zeros_like(sx)
    for j, flip in enumerate(_flip_table(n)):
        cross = np.einsum("bmt,bmt->bt", alphas[flip].conj(), alphas)
        overlap = amps[flip].conj() * amps * np.exp(-0.5 * sq[flip] - 0.5 * sq + cross)
        sx[j] = overlap.sum(axis=0).real
        sy[j] = (1j * configs[:, j][:, None] * overlap).sum(axis=0).real
    mean, stderr, _ = _dephase(sx, sy, times, noise)
    return SpinTrace(times, mean, stderr)


# -- effective Ising model ---------------------------------------------------

def _pauli_strings(n):
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0]).astype(complex)
    eye = np.eye(2, dtype=complex)

    def site(op, j):
        return reduce(np.kron, [op if k == j else eye for k in range(n)])

    return ([site(sx, j) for j in range(n)], [site(sy, j) for j in range(n)],
            [site(sz, j) for j in range(n)])


def ising_matrix(J: SpinCouplings, h: float | None = None):
    """H = sum_{i != j} J_ij s^z_i s^z_j - h sum_i s^x_i (dense)."""
    n = J.n
    h = J.h if h is None else h
    configs = spin_configurations(n).astype(float)
    diag = np.einsum("bi,ij,bj->b", configs, J.J, configs)
    H = np.diag(diag).astype(complex)
    if h:
        sx, _, _ = _pauli_strings(n)
        H -= h * sum(sx)
    return H


def rwa_couplings(H: RwaHamiltonian, j_scale: float = 1.0) -> SpinCouplings:
    """Ising couplings of ``H`` itself, from eliminating its phonons at second order.

    Completing the square in every spin sector gives
    J_ij = -Re(g_i^dag h^-1 g_j), with g_i the force on the three local modes
    of ion i and h the hopping matrix.  Unlike the normal-mode sum this keeps
    the local-oscillator Lamb-Dicke factors that ``H`` uses, so it is the
    effective model the full evolution should approach.
    """
    n = H.n_ions
    hinv = linalg.inv(H.hopping)
    g = H.forces
    J = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                J[i, j] = -np.real(g[i].conj() @ hinv[3 * i:3 * i + 3, 3 * j:3 * j + 3] @ g[j])
    return SpinCouplings(0.5 * (J + J.T), "rwa", j_scale=j_scale)


def evolve_effective(J: SpinCouplings, h: float, psi0_spin, times,
                     noise: NoiseConfig | None = None, keep_traj=False) -> SpinTrace:
    n = J.n
    if n > 12:
        raise DimensionOverflow("dense effective evolution limited to N <= 12")
    times = np.asarray(times, dtype=float)
    noise = noise or NoiseConfig(0.0, 1.0, 1)
    psi0 = np.asarray(psi0_spin, dtype=complex)
    H = ising_matrix(J, h)
    sx_ops, sy_ops, sz_ops = _pauli_strings(n)
    if not h:
        evals, vecs = linalg.eigh(H)
        coeff = vecs.conj().T @ psi0
        psi_t = vecs @ (coeff[:, None] * np.exp(-1j * np.outer(evals, times)))
        sx = np.array([np.einsum("kt,kl,lt->t", psi_t.conj(), op, psi_t).real for op in sx_ops])
        sy = np.array([np.einsum("kt,kl,lt->t", psi_t.conj(), op, psi_t).real for op in sy_ops])
        norms = np.einsum("kt,kt->t", psi_t.conj(), psi_t).real
        mean, stderr, vals = _dephase(sx, sy, times, noise, keep_traj)
        return SpinTrace(times, mean, stderr, float(np.max(np.abs(norms - 1))), 0.0, vals)
    return _evolve_effective_stepped(H, sx_ops, sz_ops, psi0, times, noise, keep_traj)


def _evolve_effective_stepped(H, sx_ops, sz_ops, psi0, times, noise, keep_traj):
    """Transverse field on: noise no longer commutes, step it explicitly."""
    Z = sum(sz_ops)
    n = len(sx_ops)
    vals = np.zeros((noise.n_traj, n, len(times)))
    drift = 0.0
    t_end = float(times[-1])
    n_steps = max(1, int(math.ceil(t_end / (noise.tau / 20)))) if noise.c else 1
    grid = np.linspace(0.0, t_end, n_steps + 1)
    for k, rng in enumerate(trajectory_rngs(noise)):
        eps = math.sqrt(noise.stationary_variance) * rng.standard_normal() if noise.c else 0.0
        psi = psi0.copy()
        t_now = 0.0
        out_idx = 0
        for m in range(n_steps):
            Hm = H + 0.5 * eps * Z
            evals, vecs = linalg.eigh(Hm)
            stop = grid[m + 1]
            while out_idx < len(times) and times[out_idx] <= stop + 1e-15 * max(1, stop):
                dt = times[out_idx] - t_now
                phi = vecs @ (np.exp(-1j * evals * dt) * (vecs.conj().T @ psi))
                vals[k, :, out_idx] = [np.vdot(phi, op @ phi).real for op in sx_ops]
                out_idx += 1
            psi = vecs @ (np.exp(-1j * evals * (stop - t_now)) * (vecs.conj().T @ psi))
            t_now = stop
            drift = max(drift, abs(np.vdot(psi, psi).real - 1))
            if noise.c:
                eps = float(ou_step(eps, stop - grid[m], noise, rng))
        if drift > 1e-8:
            raise StepRejection("norm drift exceeded 1e-8")
    mean = vals.mean(axis=0)
    stderr = (vals.std(axis=0, ddof=1) / math.sqrt(noise.n_traj)
              if noise.n_traj > 1 else np.zeros_like(mean))
    return SpinTrace(times, mean, stderr, drift, 0.0, vals if keep_traj else None)


def dynamics_deviation(full: SpinTrace, effective: SpinTrace, t_max=None) -> dict:
    if full.mean.shape != effective.mean.shape or not np.allclose(full.times, effective.times):
        raise ValueError("traces need a common time grid")
    mask = np.ones(len(full.times), dtype=bool) if t_max is None else full.times <= t_max
    diff = full.mean[:, mask] - effective.mean[:, mask]
    return {"max": float(np.max(np.abs(diff))) if diff.size else 0.0,
            "rms": float(np.sqrt(np.mean(diff ** 2))) if diff.size else 0.0,
            "per_ion_max": np.max(np.abs(diff), axis=1).tolist() if diff.size else []}


# -- the three-ion benchmark -------------------------------------------------

@dataclass
class BenchmarkSetup:
    crystal: IonCrystal
    laser: LaserConfig
    eta_x: float
    j_eff: float


def benchmark_setup(case="frustrated", omega_z=2 * math.pi * 1e6, eta_y=0.1,
                    eta_ratio=10.0, detuning_factor=1.1, coupling=0.15):
    """Three-ion triangle with omega_y = 20 omega_z and omega_x = 1.43 omega_z.

    ``case`` is "frustrated" (k_L along y) or "inhibited" (phase pi/2 on the
    bonds 1-2 and 2-3).
    """
    from .couplings import laser_with_inhibited_pair
    from .crystal import TrapConfig, equilibrium_positions

    trap = TrapConfig(1.43 * omega_z, 20 * omega_z, omega_z)
    crystal = equilibrium_positions(trap, 3)
    omega_L = detuning_factor * trap.omega_y
    delta_y = trap.omega_y - omega_L
    laser = LaserConfig.from_lamb_dicke(trap, eta_y, omega_L, coupling * abs(delta_y) / eta_y)
    if case == "inhibited":
        laser = laser_with_inhibited_pair(crystal, laser, (0, 1))
    elif case != "frustrated":
        raise ValueError(f"unknown case {case!r}")
    return BenchmarkSetup(crystal, laser, eta_y / eta_ratio, laser.j_eff(trap))

