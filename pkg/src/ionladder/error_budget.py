"""Error models for the laser-driven spin simulator.

Three-level (Lambda) dynamics and its adiabatic elimination, excess
micromotion sidebands, thermal and heating errors of the spin-phonon model,
and an audit of the regime inequalities.

Lambda-system conventions: level order (r, up, down).  Propagation happens in
the interaction picture of the spin energies, with the excited level rotating
at ``eps_r - frame`` so the residual oscillations stay slow.  The spin block
of that frame is the frame used by the effective two-level model, so
``sigma_x = 2 Re rho[up, down]`` compares directly between the two.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, sparse, special
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from .couplings import LaserConfig
from .crystal import IonCrystal, TrapConfig
from .dynamics import SPIN_DOWN, SPIN_MINUS, SPIN_PLUS, SPIN_UP, product_spin_state
from .dynamics import spin_configurations
from .exceptions import (DimensionOverflow, RegimeViolation, StepRejection,
                         TruncationNotConverged)
from .phonons import coulomb_hessian, transverse_modes

SPINS = ("up", "down")
BEAMS = (1, 2)
LEVEL = {"r": 0, "up": 1, "down": 2}
SPIN_INDEX = {"up": 0, "down": 1}
NAMED_SPINS = {"up": SPIN_UP, "down": SPIN_DOWN, "plus": SPIN_PLUS, "minus": SPIN_MINUS}

PASS_BELOW = 0.1
WARN_BELOW = 0.3


# ---------------------------------------------------------------- Lambda scheme

@dataclass(frozen=True)
class LambdaConfig:
    """Three-level system driven by two beams.

    ``rabi`` maps ``(beam, spin)`` with beam in {1, 2} and spin in
    {"up", "down"} to a complex Rabi frequency; missing entries are zero.
    """

    eps_r: float
    eps_up: float
    eps_down: float
    omega_1: float
    omega_2: float
    gamma: float
    rabi: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {(l, s): 0j for l in BEAMS for s in SPINS}
        for key, value in self.rabi.items():
            if key not in full:
                raise ValueError(f"unknown coupling {key!r}")
            full[key] = complex(value)
        object.__setattr__(self, "rabi", full)
        if self.gamma < 0:
            raise ValueError("decay rate must be non-negative")

    def energy(self, spin):
        return self.eps_up if spin == "up" else self.eps_down

    def beam_frequency(self, beam):
        return self.omega_1 if beam == 1 else self.omega_2

    def detuning(self, beam, spin):
        return self.eps_r - self.energy(spin) - self.beam_frequency(beam)

    @property
    def detunings(self):
        return {(l, s): self.detuning(l, s) for l in BEAMS for s in SPINS}

    @property
    def gamma_t(self):
        return 2.0 * self.gamma

    @property
    def omega_0(self):
        return self.eps_up - self.eps_down

    @property
    def omega_L(self):
        return self.omega_1 - self.omega_2

    def active(self):
        return [key for key, value in self.rabi.items() if value != 0]

    def adiabatic_ratio(self):
        """max(|Omega|, Gamma) over the smallest detuning of a driven line."""
        keys = self.active() or list(self.rabi)
        smallest = min(abs(self.detuning(*k)) for k in keys)
        largest = max(max(abs(v) for v in self.rabi.values()), self.gamma)
        return largest / smallest if smallest > 0 else math.inf

    def with_rabi(self, **changes):
        """Copy with Rabi entries replaced, keys like ``up1`` or ``down2``."""
        rabi = dict(self.rabi)
        for name, value in changes.items():
            rabi[(int(name[-1]), name[:-1])] = value
        return replace(self, rabi=rabi)

    def scaled_rabi(self, factor):
        return replace(self, rabi={k: v * factor for k, v in self.rabi.items()})


def raman_config():
    """Raman-resonant beams in units of eps_r (populations oscillate)."""
    eps_up, eps_down = 0.1, 0.05
    omega_1 = 1.0 - eps_up - 0.5
    return LambdaConfig(1.0, eps_up, eps_down, omega_1, omega_1 - (eps_up - eps_down), 0.05,
                        {(2, "up"): 0.05, (1, "down"): 0.05})


def dipole_config():
    """Beatnote far below the spin splitting with opposite-sign differential
    couplings: a sigma^z force with no population transfer."""
    base = raman_config()
    omega_2 = base.omega_1 - 1e-3 * base.omega_0
    return replace(base, omega_2=omega_2,
                   rabi={(1, "up"): -0.05, (2, "down"): 0.05,
                         (2, "up"): 0.05, (1, "down"): 0.05})


def spin_density(state):
    """2x2 density matrix from a name, a spin vector, or a matrix."""
    if isinstance(state, str):
        vec = NAMED_SPINS[state]
        return np.outer(vec, vec.conj())
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        arr = arr / np.linalg.norm(arr)
        return np.outer(arr, arr.conj())
    return arr


def _check_density(rho, tol=1e-10):
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise ValueError("initial density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("initial density matrix does not have unit trace")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ValueError("initial density matrix is not positive semidefinite")


def _commutator_superop(H):
    """-i[H, .] acting on row-major vectorized matrices."""
    eye = np.eye(len(H))
    return -1j * (np.kron(H, eye) - np.kron(eye, H.T))


def _jump_superop(A, B):
    """A rho B^dag - (B^dag A rho + rho B^dag A) / 2, row-major."""
    eye = np.eye(len(A))
    BA = B.conj().T @ A
    return np.kron(A, B.conj()) - 0.5 * np.kron(BA, eye) - 0.5 * np.kron(eye, BA.T)


class FourierGenerator:
    """Time-dependent Lindblad generator sum_k exp(i nu_k t) S_k."""

    def __init__(self, dim, decimals=12):
        self.dim = dim
        self._terms = {}
        self._decimals = decimals

    def add(self, freq, superop):
        key = round(float(freq), self._decimals)
        if key in self._terms:
            self._terms[key] = self._terms[key] + superop
        else:
            self._terms[key] = np.array(superop, dtype=complex)

    def add_hamiltonian(self, freq, op):
        """Adds op e^{i freq t} + h.c. (op alone when freq is 0 and op is Hermitian)."""
        self.add(freq, _commutator_superop(op))
        if freq != 0 or not np.allclose(op, op.conj().T):
            self.add(-freq, _commutator_superop(op.conj().T))

    def add_jump(self, components):
        """Jump operator sum_k c_k e^{i nu_k t}; components is [(nu, matrix)]."""
        for nu, A in components:
            for nu2, B in components:
                self.add(nu - nu2, _jump_superop(A, B))

    def frozen(self):
        freqs = np.array(list(self._terms))
        stack = np.array([self._terms[f] for f in freqs])
        return freqs, stack

    def solve(self, rho0, times, rtol=1e-10, atol=1e-12):
        freqs, stack = self.frozen()
        d2 = self.dim ** 2
        flat = stack.reshape(len(freqs), d2 * d2)
        static = np.all(freqs == 0)

        def rhs(t, v):
            if static:
                return stack[0] @ v
            return (np.exp(1j * freqs * t) @ flat).reshape(d2, d2) @ v

        times = np.asarray(times, dtype=float)
        sol = solve_ivp(rhs, (times[0], times[-1]), np.asarray(rho0, complex).ravel(),
                        method="DOP853", t_eval=times, rtol=rtol, atol=atol)
        if sol.status < 0:
            raise StepRejection(f"Lindblad integration failed: {sol.message}")
        return sol.y.T.reshape(len(times), self.dim, self.dim)


@dataclass
class DensityTrajectory:
    times: np.ndarray
    rho: np.ndarray              # (T, d, d)
    index: dict                  # level name -> row
    trace_error: float
    hermiticity_error: float
    min_eigenvalue: float
    warnings: list = field(default_factory=list)

    def population(self, level):
        return self.rho[:, self.index[level], self.index[level]].real

    @property
    def p_down(self):
        return self.population("down")

    @property
    def p_up(self):
        return self.population("up")

    @property
    def sigma_x(self):
        """2 Re rho[up, down] in the spin rotating frame."""
        return 2 * self.rho[:, self.index["up"], self.index["down"]].real

    @property
    def sigma_y(self):
        return -2 * self.rho[:, self.index["up"], self.index["down"]].imag

    def csv_rows(self):
        return [(t, pd, sx) for t, pd, sx in zip(self.times, self.p_down, self.sigma_x)]


def _trajectory(times, rho, index, positivity_tol=1e-8):
    traces = np.trace(rho, axis1=1, axis2=2)
    herm = np.max(np.abs(rho - np.conj(np.swapaxes(rho, 1, 2))))
    hermitian = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    min_eig = float(np.min(np.linalg.eigvalsh(hermitian)))
    out = DensityTrajectory(np.asarray(times), rho, index,
                            float(np.max(np.abs(traces - 1))), float(herm), min_eig)
    if min_eig < -positivity_tol:
        msg = f"density matrix lost positivity (min eigenvalue {min_eig:.2e})"
        out.warnings.append(msg)
        warnings.warn(msg, stacklevel=3)
    return out


def bessel_sidebands(xi, omega_rf, m_max):
    """[(i^m J_m(xi), m Omega_rf)] for |m| <= m_max, dropping exact zeros."""
    out = []
    for m in range(-m_max, m_max + 1):
        c = (1j ** (m % 4)) * special.jv(m, xi)
        if c != 0:
            out.append((c, m * omega_rf))
    return out


def _exact_generator(cfg: LambdaConfig, frame=None, sidebands=None):
    """Generator in the frame rotating the excited level at eps_r - frame."""
    active = cfg.active()
    if frame is None:
        frame = float(np.mean([cfg.detuning(*k) for k in active])) if active else 0.0
    gen = FourierGenerator(3)
    gen.add_hamiltonian(0.0, np.diag([frame, 0.0, 0.0]).astype(complex))
    for (l, s) in active:
        op = np.zeros((3, 3), dtype=complex)
        op[LEVEL["r"], LEVEL[s]] = 1.0
        lines = (sidebands or {}).get(l, [(1.0, 0.0)])
        for c, nu in lines:
            gen.add_hamiltonian(cfg.detuning(l, s) - frame + nu, 0.5 * cfg.rabi[(l, s)] * c * op)
    for s in SPINS:
        L = np.zeros((3, 3), dtype=complex)
        L[LEVEL[s], LEVEL["r"]] = math.sqrt(cfg.gamma)
        gen.add_jump([(0.0, L)])
    return gen


def lambda_exact_evolution(cfg: LambdaConfig, rho0, times, rtol=1e-10, atol=1e-12,
                           sidebands=None) -> DensityTrajectory:
    """Three-level master equation with decay r -> up and r -> down at Gamma each.

    ``rho0`` may be a 2x2 spin state (embedded with the excited level empty)
    or a full 3x3 density matrix.  ``sidebands`` maps a beam to a list of
    ``(amplitude, frequency)`` pairs that replace its single carrier.
    """
    rho0 = spin_density(rho0)
    if rho0.shape == (2, 2):
        full = np.zeros((3, 3), dtype=complex)
        full[1:, 1:] = rho0
        rho0 = full
    _check_density(rho0)
    gen = _exact_generator(cfg, sidebands=sidebands)
    rho = gen.solve(rho0, times, rtol, atol)
    return _trajectory(times, rho, LEVEL)


@dataclass
class EffectiveLambda:
    """Adiabatically eliminated two-level model (spin interaction picture)."""

    cfg: LambdaConfig
    stark: dict                  # spin -> shift
    raman: dict                  # (l, l') -> Omega^r
    dipole: dict                 # spin -> Omega^d
    omega_L: complex             # differential (sigma^z) dipole Rabi frequency
    omega_L_common: complex      # common-mode part
    hamiltonian: list            # [(freq, 2x2)] with H(t) = sum e^{i f t} M
    jumps: list                  # per jump: [(freq, 2x2)]

    def hamiltonian_at(self, t):
        return sum(np.exp(1j * f * t) * M for f, M in self.hamiltonian)

    def jump_at(self, n, t):
        return sum(np.exp(1j * f * t) * A for f, A in self.jumps[n])

    def generator(self):
        gen = FourierGenerator(2)
        for f, M in self.hamiltonian:
            gen.add(f, _commutator_superop(M))
        for comps in self.jumps:
            gen.add_jump(comps)
        return gen

    def evolve(self, rho0, times, rtol=1e-10, atol=1e-12) -> DensityTrajectory:
        rho0 = spin_density(rho0)
        _check_density(rho0)
        rho = self.generator().solve(rho0, times, rtol, atol)
        return _trajectory(times, rho, SPIN_INDEX)

    @property
    def jump_rates(self):
        """Time-averaged rate of every (jump, output spin, input spin) channel."""
        out = {}
        for n, comps in enumerate(self.jumps):
            for a in range(2):
                for b in range(2):
                    rate = sum(abs(A[a, b]) ** 2 for _, A in comps)
                    if rate > 0:
                        out[(n, SPINS[a], SPINS[b])] = rate
        return out


def effective_two_level(cfg: LambdaConfig, min_ratio=3.0) -> EffectiveLambda:
    """Eliminate the excited level.

    Second-order coupling between spins s and s' through beams l, l':
        -1/2 conj(W_{l s'}) W_{l' s} (d_{l s'} + d_{l' s})
        / ((2 d_{l' s} - i G)(2 d_{l s'} + i G)) * exp(i (d_{l' s} - d_{l s'}) t)
    with G = 2 Gamma.  Jump to spin s':
        sqrt(Gamma) sum_{l, s} W_{l s} exp(i d_{l s} t) / (2 d_{l s} - i G) |s'><s|.
    """
    active = cfg.active()
    worst = max([abs(v) for v in cfg.rabi.values()] + [cfg.gamma])
    for key in active:
        if abs(cfg.detuning(*key)) <= min_ratio * worst:
            raise RegimeViolation(
                f"detuning {cfg.detuning(*key):.3g} of line {key} is not large against "
                f"max(|Omega|, Gamma) = {worst:.3g}")
    G = cfg.gamma_t
    d = cfg.detunings
    W = cfg.rabi

    def coupling(l, sp, lp, s):
        return (-0.5 * np.conj(W[(l, sp)]) * W[(lp, s)] * (d[(l, sp)] + d[(lp, s)])
                / ((2 * d[(lp, s)] - 1j * G) * (2 * d[(l, sp)] + 1j * G)))

    terms = {}
    for l in BEAMS:
        for lp in BEAMS:
            for sp in SPINS:
                for s in SPINS:
                    if W[(l, sp)] == 0 or W[(lp, s)] == 0:
                        continue
                    freq = round(d[(lp, s)] - d[(l, sp)], 12)
                    M = terms.setdefault(freq, np.zeros((2, 2), dtype=complex))
                    M[SPIN_INDEX[sp], SPIN_INDEX[s]] += coupling(l, sp, lp, s)
    hamiltonian = sorted(terms.items())

    jumps = []
    for sp in ("down", "up"):
        comps = []
        for l in BEAMS:
            for s in SPINS:
                if W[(l, s)] == 0:
                    continue
                A = np.zeros((2, 2), dtype=complex)
                A[SPIN_INDEX[sp], SPIN_INDEX[s]] = (math.sqrt(cfg.gamma) * W[(l, s)]
                                                    / (2 * d[(l, s)] - 1j * G))
                comps.append((d[(l, s)], A))
        if comps and cfg.gamma > 0:
            jumps.append(comps)

    stark = {s: -sum(abs(W[(l, s)]) ** 2 * d[(l, s)] / (4 * d[(l, s)] ** 2 + G ** 2)
                     for l in BEAMS) for s in SPINS}
    raman = {(l, lp): 2 * coupling(l, "down", lp, "up") for l in BEAMS for lp in BEAMS}
    dipole = {s: 2 * coupling(1, s, 2, s) for s in SPINS}
    omega_L = 0.5 * np.conj(dipole["up"] - dipole["down"])
    common = 0.5 * np.conj(dipole["up"] + dipole["down"])
    return EffectiveLambda(cfg, stark, raman, dipole, complex(omega_L), complex(common),
                           hamiltonian, jumps)


def far_detuned_dipole_rabi(cfg: LambdaConfig, delta=None):
    """Large-detuning limit of the differential dipole Rabi frequency.

    Uses a common detuning (default: beam 1 on the up line).  The factor is
    1/(4 delta); see ``EffectiveLambda.omega_L`` for the full expression.
    """
    delta = cfg.detuning(1, "up") if delta is None else delta
    W = cfg.rabi
    return (W[(1, "down")] * np.conj(W[(2, "down")])
            - W[(1, "up")] * np.conj(W[(2, "up")])) / (4 * delta)


def spontaneous_decay_factor(gamma, delta):
    """Ratio of the dipole Rabi frequency with decay to the one without,
    for a common detuning ``delta`` (total width 2 gamma)."""
    return 1.0 / (1.0 + (gamma / delta) ** 2)


def oscillation_frequency(times, signal, prominence=0.1):
    """Angular frequency from the mean spacing of successive maxima."""
    signal = np.asarray(signal)
    peaks, _ = find_peaks(signal, prominence=prominence * np.ptp(signal))
    troughs, _ = find_peaks(-signal, prominence=prominence * np.ptp(signal))
    spacings = []
    for idx in (peaks, troughs):
        if len(idx) >= 2:
            spacings.extend(np.diff(np.asarray(times)[idx]))
    if not spacings:
        raise ValueError("fewer than two extrema; extend the time window")
    return 2 * math.pi / float(np.mean(spacings))


def lambda_comparison(cfg: LambdaConfig, rho0, times, **kw):
    """Exact and effective trajectories plus sup-norm deviations."""
    exact = lambda_exact_evolution(cfg, rho0, times, **kw)
    eff = effective_two_level(cfg).evolve(rho0, times, **kw)
    return {
        "exact": exact,
        "effective": eff,
        "p_down_deviation": float(np.max(np.abs(exact.p_down - eff.p_down))),
        "sigma_x_deviation": float(np.max(np.abs(exact.sigma_x - eff.sigma_x))),
    }


# ----------------------------------------------------------------- micromotion

@dataclass(frozen=True)
class MicromotionConfig:
    """Paul-trap drive.  ``q`` and ``a`` map axis name -> Mathieu parameter."""

    omega_rf: float
    q: dict = field(default_factory=lambda: {"x": 0.2, "y": -0.2, "z": 0.0})
    a: dict = field(default_factory=dict)
    kappa_g: float = 1.0
    m_max: int | None = None

    def secular_frequency(self, axis):
        arg = self.a.get(axis, 0.0) + 0.5 * self.q.get(axis, 0.0) ** 2
        if arg <= 0:
            raise ValueError(f"axis {axis} is not confined (a + q^2/2 = {arg:.3g})")
        return 0.5 * self.omega_rf * math.sqrt(arg)

    def check(self, trap: TrapConfig | None = None, rel_tol=0.05, small=0.1):
        """Warnings for the stability regime and for secular-frequency mismatch."""
        out = []
        for axis in ("x", "y", "z"):
            a, q = abs(self.a.get(axis, 0.0)), self.q.get(axis, 0.0) ** 2
            if a >= small or q >= small:
                out.append(f"{axis}: Mathieu parameters outside a, q^2 << 1")
        if trap is not None:
            for axis, target in (("x", trap.omega_x), ("y", trap.omega_y)):
                try:
                    got = self.secular_frequency(axis)
                except ValueError as exc:
                    out.append(str(exc))
                    continue
                if abs(got - target) > rel_tol * target:
                    out.append(f"{axis}: Mathieu secular frequency {got:.4g} differs from "
                               f"trap value {target:.4g}")
        return out

    @staticmethod
    def amplitude(q_x, k_dot_r):
        """Sideband modulation index of a beam on an off-axis ion."""
        return 0.5 * q_x * k_dot_r


def bessel_order(xi, tol=1e-8, limit=200):
    """Smallest m_max with J_0^2 + 2 sum_{m<=m_max} J_m^2 >= 1 - tol."""
    total = special.jv(0, xi) ** 2
    m = 0
    while total < 1 - tol:
        m += 1
        if m > limit:
            raise TruncationNotConverged(f"Bessel series needs more than {limit} sidebands")
        total += 2 * special.jv(m, xi) ** 2
    return m, total


@dataclass
class MicromotionResult:
    epsilon: float               # against the sideband-free three-level evolution
    epsilon_effective: float     # against the eliminated two-level model
    m_max: int
    bessel_weight: float
    change_at_m_plus_2: float
    times: np.ndarray
    sigma_mic: np.ndarray
    sigma_ref: np.ndarray
    sigma_eff: np.ndarray

    def csv_rows(self):
        return list(zip(self.times, self.sigma_mic, self.sigma_ref, self.sigma_eff))


def micromotion_error(cfg: LambdaConfig, mm: MicromotionConfig, xi, beam=1, rho0="plus",
                      times=None, n_points=600, rel_change=0.01, rtol=1e-10, atol=1e-12):
    """Largest coherence deviation caused by micromotion sidebands on one beam.

    The window is [0, 6 pi / |Omega_L|].  ``m_max`` comes from ``mm`` or from
    the Bessel weight criterion; the run is repeated at m_max + 2 and
    TruncationNotConverged is raised if epsilon moves by more than
    ``rel_change`` (relative, with an absolute floor of 1e-6).
    """
    eff = effective_two_level(cfg)
    if times is None:
        times = np.linspace(0.0, 6 * math.pi / abs(eff.omega_L), max(int(n_points), 600))
    if mm.m_max is not None:
        m_max = mm.m_max
        weight = special.jv(0, xi) ** 2 + 2 * sum(special.jv(m, xi) ** 2
                                                  for m in range(1, m_max + 1))
    else:
        m_max, weight = bessel_order(xi)
    ref = lambda_exact_evolution(cfg, rho0, times, rtol, atol).sigma_x
    eff_sx = eff.evolve(rho0, times, rtol, atol).sigma_x

    def run(order):
        sidebands = {beam: bessel_sidebands(xi, mm.omega_rf, order)}
        return lambda_exact_evolution(cfg, rho0, times, rtol, atol, sidebands).sigma_x

    mic = run(m_max)
    eps = float(np.max(np.abs(mic - ref)))
    eps2 = float(np.max(np.abs(run(m_max + 2) - ref)))
    change = abs(eps2 - eps)
    if change > rel_change * max(eps, 1e-6):
        raise TruncationNotConverged(
            f"epsilon_m changed from {eps:.4g} to {eps2:.4g} at m_max + 2 = {m_max + 2}")
    return MicromotionResult(eps, float(np.max(np.abs(mic - eff_sx))), m_max, float(weight),
                             change, np.asarray(times), mic, ref, eff_sx)


# ---------------------------------------------------- thermal and heating errors

@dataclass
class NormalModeModel:
    """Transverse spin-phonon model sum delta_n a^dag a + sum (F_in s^z_i a^dag + h.c.)
    in the frame rotating at the beatnote."""

    frequencies: np.ndarray      # Omega_n (rad/s)
    detunings: np.ndarray        # delta_n = Omega_n - omega_L
    forces: np.ndarray           # F[i, n] (rad/s, complex)
    j_eff: float

    @property
    def n_ions(self):
        return self.forces.shape[0]

    @property
    def n_modes(self):
        return self.forces.shape[1]

    @property
    def t_final(self):
        """pi / (8 J_eff), the default comparison time."""
        return math.pi / (8 * abs(self.j_eff))

    def couplings(self):
        """Ordered-pair Ising couplings -sum_n Re(F_in F_jn^*) / delta_n."""
        J = -np.einsum("in,jn,n->ij", self.forces, self.forces.conj(), 1 / self.detunings).real
        np.fill_diagonal(J, 0.0)
        return J


def normal_mode_model(crystal: IonCrystal, laser: LaserConfig) -> NormalModeModel:
    trap = crystal.trap
    modes = transverse_modes(crystal)
    eta = laser.eta_y(trap) * np.sqrt(trap.omega_y / modes.frequencies)
    phase = np.exp(1j * laser.phases(crystal))
    forces = 0.5j * laser.Omega_L * phase[:, None] * modes.mode_matrix * eta[None, :]
    return NormalModeModel(modes.frequencies, modes.frequencies - laser.omega_L, forces,
                           laser.j_eff(trap))


def thermal_occupations(frequencies, nbar):
    """Per-mode occupations.  A scalar is the centre-of-mass (highest transverse
    frequency) occupation and fixes a common temperature."""
    frequencies = np.asarray(frequencies, dtype=float)
    if np.ndim(nbar) == 0:
        nbar = float(nbar)
        if nbar < 0:
            raise ValueError("mean phonon number must be non-negative")
        if nbar == 0:
            return np.zeros_like(frequencies)
        beta = math.log1p(1 / nbar) / frequencies.max()
        return 1 / np.expm1(beta * frequencies)
    nbar = np.asarray(nbar, dtype=float)
    if nbar.shape != frequencies.shape or np.any(nbar < 0):
        raise ValueError("need one non-negative occupation per mode")
    return nbar


def thermal_error(model: NormalModeModel, nbar, times):
    """Closed-form relative error of <sigma^x_i>, shape (ions, times)."""
    occ = thermal_occupations(model.frequencies, nbar)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    d = model.detunings
    weight = 8 * np.abs(model.forces) ** 2 * occ[None, :] / d[None, :] ** 2
    exponent = weight @ (1 - np.cos(np.outer(d, t)))
    return -np.expm1(-exponent)


def thermal_error_bound(laser: LaserConfig, trap: TrapConfig, nbar_y, linear=False):
    """1 - exp(-4 |Omega_L|^2 eta_y^2 nbar_y / delta_y^2), or its linearization."""
    x = 4 * abs(laser.Omega_L) ** 2 * laser.eta_y(trap) ** 2 * nbar_y / laser.delta_y(trap) ** 2
    return x if linear else -math.expm1(-x)


def _mode_operators(n_modes, cutoff):
    levels = cutoff + 1
    a = np.diag(np.sqrt(np.arange(1, levels)), 1)
    eye = np.eye(levels)
    ops = []
    for n in range(n_modes):
        mats = [eye] * n_modes
        mats[n] = a
        op = mats[0]
        for m in mats[1:]:
            op = np.kron(op, m)
        ops.append(op)
    return ops


def _sector_hamiltonians(model: NormalModeModel, cutoff):
    ops = _mode_operators(model.n_modes, cutoff)
    number = sum(d * (a.T @ a) for d, a in zip(model.detunings, ops))
    configs = spin_configurations(model.n_ions)
    out = []
    for spins in configs:
        f = spins @ model.forces
        push = sum(fn * a.T for fn, a in zip(f, ops))
        out.append(number + push + push.conj().T)
    return out, ops


def _spin_amplitudes(spin_state, n_ions):
    if isinstance(spin_state, str):
        return product_spin_state([NAMED_SPINS[spin_state]] * n_ions)
    vec = np.asarray(spin_state, dtype=complex)
    return vec / np.linalg.norm(vec)


def _gibbs_populations(nbar, cutoff):
    """Geometric populations of one mode, truncated and renormalized."""
    x = nbar / (1 + nbar)
    p = x ** np.arange(cutoff + 1)
    return p / p.sum()


def _check_phonon_dim(model, cutoff, max_dim):
    dim = (cutoff + 1) ** model.n_modes
    if dim > max_dim:
        raise DimensionOverflow(f"phonon space {dim} exceeds the budget {max_dim}")
    return dim


def _single_mode_hamiltonian(detuning, force, cutoff):
    a = np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1)
    push = force * a.T
    return detuning * (a.T @ a) + push + push.conj().T


def _coherence_generator(Hs, Hsp, ops, gamma_h):
    """Generator of a spin-coherence block X -> -i(Hs X - X Hsp) + D(X), row-major."""
    dim = Hs.shape[0]
    eye = sparse.identity(dim, format="csr")
    gen = -1j * (sparse.kron(sparse.csr_matrix(Hs), eye)
                 - sparse.kron(eye, sparse.csr_matrix(Hsp).T))
    if gamma_h:
        for a in ops:
            ad = sparse.csr_matrix(a.T)     # real ladder matrices: a^dag = a^T
            aad = sparse.csr_matrix(a @ a.T)
            gen = gen + gamma_h * (sparse.kron(ad, ad)
                                   - 0.5 * sparse.kron(aad, eye)
                                   - 0.5 * sparse.kron(eye, aad.T))
    return gen.tocsr()


def _block_trace(Hs, Hsp, ops, gamma_h, t, populations):
    """Tr X(t) for X(0) = diag(populations); unitary shortcut when gamma_h = 0."""
    dim = Hs.shape[0]
    if not gamma_h:
        Us = linalg.expm(-1j * Hs * t)
        Usp = linalg.expm(-1j * Hsp * t)
        return np.einsum("ij,j,ij->", Usp.conj(), populations, Us)
    gen = _coherence_generator(Hs, Hsp, ops, gamma_h).toarray()
    start = np.diag(populations).astype(complex).ravel()
    X = (linalg.expm(gen * t) @ start).reshape(dim, dim)
    return np.trace(X)


def _sigma_x(model, amps, t, cutoff, populations, gamma_h, method, max_dim):
    """<sigma^x_i> for every ion.

    "factorized": each spin sector is a sum of independent oscillators and
    the initial phonon state and dissipator are products over modes, so the
    trace of a coherence block is a product of single-mode traces.
    "dense": the same block propagated in the full truncated phonon space.
    """
    n = model.n_ions
    configs = spin_configurations(n)
    idx = np.arange(2 ** n)
    a1 = np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1)
    cache = {}

    def trace(s, sp):
        key = (min(s, sp), max(s, sp))
        if key not in cache:
            if method == "factorized":
                value = 1.0 + 0j
                for m in range(model.n_modes):
                    f, fp = configs[key[0]] @ model.forces[:, m], configs[key[1]] @ model.forces[:, m]
                    H = _single_mode_hamiltonian(model.detunings[m], f, cutoff)
                    Hp = _single_mode_hamiltonian(model.detunings[m], fp, cutoff)
                    value *= _block_trace(H, Hp, [a1], gamma_h, t, populations[m])
            else:
                _check_phonon_dim(model, cutoff, max_dim)
                sectors, ops = dense[0]
                pop = populations[0]
                for p in populations[1:]:
                    pop = np.kron(pop, p)
                value = _block_trace(sectors[key[0]], sectors[key[1]], ops, gamma_h, t, pop)
            cache[key] = value
        # Tr X_{s', s} is the conjugate of Tr X_{s, s'}
        return cache[key] if s <= sp else np.conj(cache[key])

    dense = [_sector_hamiltonians(model, cutoff)] if method == "dense" else None
    if method not in ("factorized", "dense"):
        raise ValueError(f"unknown method {method!r}")
    out = np.zeros(n)
    for i in range(n):
        flip = idx ^ (1 << (n - 1 - i))
        total = 0j
        for s in idx:
            coeff = amps[s] * np.conj(amps[flip[s]])
            if coeff != 0:
                total += coeff * trace(s, flip[s])
        out[i] = total.real
    return out


def _relative(value, reference, floor=1e-12):
    if abs(reference) < floor:
        raise ValueError("reference <sigma^x> vanishes; pick another ion or spin state")
    return float(abs(value - reference) / abs(reference))


@dataclass
class ThermalSimResult:
    epsilon: float
    sigma_thermal: np.ndarray    # <sigma^x_i>_T per ion
    sigma_zero: np.ndarray       # <sigma^x_i>_{T=0} per ion
    closed_form: float
    ion: int
    time: float
    nbar: float


def thermal_error_exact_sim(model: NormalModeModel, nbar, fock_cutoff, t_final=None,
                            spin_state="plus", ion=0, method="factorized",
                            max_phonon_dim=4096):
    """Relative thermal error of <sigma^x_ion> from exact propagation of the
    truncated spin-phonon model, starting from spin state x Gibbs state.

    ``nbar`` is the centre-of-mass occupation (common temperature) or a list
    of them, in which case a list of results is returned.
    """
    if method == "dense":
        _check_phonon_dim(model, fock_cutoff, max_phonon_dim)
    t = model.t_final if t_final is None else t_final
    amps = _spin_amplitudes(spin_state, model.n_ions)
    vacuum = [_gibbs_populations(0.0, fock_cutoff)] * model.n_modes
    cold = _sigma_x(model, amps, t, fock_cutoff, vacuum, 0.0, method, max_phonon_dim)
    results = []
    for nb in np.atleast_1d(nbar):
        occ = thermal_occupations(model.frequencies, float(nb))
        pops = [_gibbs_populations(o, fock_cutoff) for o in occ]
        hot = _sigma_x(model, amps, t, fock_cutoff, pops, 0.0, method, max_phonon_dim)
        eps = _relative(hot[ion], cold[ion])
        closed = float(thermal_error(model, float(nb), [t])[ion, 0])
        results.append(ThermalSimResult(eps, hot, cold, closed, ion, t, float(nb)))
    return results if np.ndim(nbar) else results[0]


def heating_mean_phonons(gamma_h, times, cutoff=None):
    """Mean occupation under the pure-gain dissipator from the ground state.

    Untruncated: expm1(gamma_h t).  With ``cutoff`` the population rate
    equations of the truncated ladder are integrated instead.
    """
    times = np.asarray(times, dtype=float)
    if cutoff is None:
        return np.expm1(gamma_h * times)
    levels = cutoff + 1
    up = np.arange(1, levels)          # rate n -> n+1 is gamma (n + 1), blocked at the top
    rates = np.zeros((levels, levels))
    rates[np.arange(1, levels), np.arange(levels - 1)] = gamma_h * up
    rates[np.arange(levels - 1), np.arange(levels - 1)] = -gamma_h * up
    p0 = np.zeros(levels)
    p0[0] = 1.0
    return np.array([np.arange(levels) @ (linalg.expm(rates * t) @ p0) for t in times])


@dataclass
class HeatingResult:
    epsilon: float
    sigma_heated: np.ndarray
    sigma_reference: np.ndarray
    ion: int
    time: float
    gamma_h: float
    fock_cutoff: int


def heating_error(model: NormalModeModel, gamma_h, t_final=None, fock_cutoff=8,
                  spin_state="plus", ion=0, method="factorized", max_phonon_dim=64):
    """Relative change of <sigma^x_ion> caused by the heating dissipator
    gamma_h (a^dag rho a - a a^dag rho / 2 - rho a a^dag / 2) on every mode,
    starting from the motional ground state."""
    if gamma_h < 0:
        raise ValueError("heating rate must be non-negative")
    t = model.t_final if t_final is None else t_final
    amps = _spin_amplitudes(spin_state, model.n_ions)
    vacuum = [_gibbs_populations(0.0, fock_cutoff)] * model.n_modes
    heated = _sigma_x(model, amps, t, fock_cutoff, vacuum, gamma_h, method, max_phonon_dim)
    ref = _sigma_x(model, amps, t, fock_cutoff, vacuum, 0.0, method, max_phonon_dim)
    return HeatingResult(_relative(heated[ion], ref[ion]), heated, ref, ion, t, gamma_h,
                         fock_cutoff)


# ------------------------------------------------------------------ regime audit

@dataclass
class AuditItem:
    name: str
    lhs: float
    rhs: float

    @property
    def ratio(self):
        return self.lhs / self.rhs if self.rhs else math.inf

    @property
    def status(self):
        r = self.ratio
        return "pass" if r < PASS_BELOW else "warn" if r < WARN_BELOW else "fail"

    def to_dict(self):
        return {"name": self.name, "lhs": float(self.lhs), "rhs": float(self.rhs),
                "ratio": float(self.ratio), "status": self.status}


@dataclass
class AuditReport:
    items: list
    scattering_rate: float | None = None
    scattering_over_j: float | None = None

    def __getitem__(self, name):
        for item in self.items:
            if item.name == name:
                return item
        raise KeyError(name)

    @property
    def worst(self):
        order = {"pass": 0, "warn": 1, "fail": 2}
        return max((i.status for i in self.items), key=order.get, default="pass")

    def to_dict(self):
        return {"items": [i.to_dict() for i in self.items],
                "scattering_rate": self.scattering_rate,
                "scattering_over_j_eff": self.scattering_over_j,
                "worst": self.worst}


def scattering_rate(gamma, rabi, delta):
    """Gamma (|Omega| / Delta)^2 for a single beam."""
    return gamma * (abs(rabi) / delta) ** 2


def lambda_config_for_laser(laser: LaserConfig, delta, gamma, omega_0):
    """Beams of equal strength |W| giving the differential Rabi frequency of
    ``laser`` at large detuning: |W|^2 = 2 delta |Omega_L|."""
    w = math.sqrt(2 * delta * abs(laser.Omega_L))
    eps_up, eps_down = omega_0, 0.0
    eps_r = delta + eps_up + 1.0
    omega_1 = eps_r - eps_up - delta
    return LambdaConfig(eps_r, eps_up, eps_down, omega_1, omega_1 - laser.omega_L, gamma,
                        {(1, "up"): -w, (2, "up"): w, (1, "down"): w, (2, "down"): w})


def validity_audit(crystal: IonCrystal, laser: LaserConfig, mm: MicromotionConfig,
                   cfg: LambdaConfig, unwanted=(), adiabatic_factor=3.0) -> AuditReport:
    """Margins (LHS / RHS) of the regime inequalities; pass < 0.1 <= warn < 0.3 <= fail.

    ``unwanted`` lists extra ground states as ``(W_1a, W_2s, split_as)``.
    The adiabatic entry compares ``adiabatic_factor * max(|W|, Gamma)`` with the
    smallest detuning, so it fails exactly where the elimination is refused.
    """
    trap = crystal.trap
    items = []
    V = coulomb_hessian(crystal).block("y", "y")
    off = np.abs(V - np.diag(np.diag(V)))
    items.append(AuditItem("rf_heating", math.sqrt(trap.kappa_y) * float(off.max()),
                           mm.omega_rf / trap.omega_z))
    keys = cfg.active() or list(cfg.rabi)
    delta = min(abs(cfg.detuning(*k)) for k in keys)
    rabi_max = max(abs(v) for v in cfg.rabi.values())
    items.append(AuditItem("adiabatic_elimination",
                           adiabatic_factor * max(rabi_max, cfg.gamma), delta))
    items.append(AuditItem("rabi_vs_detuning", rabi_max, delta))
    cross = abs(cfg.rabi[(1, "up")] * np.conj(cfg.rabi[(2, "down")])) / (2 * delta)
    items.append(AuditItem("raman_vs_beatnote", cross, abs(laser.omega_L)))
    items.append(AuditItem("beatnote_vs_rf", abs(laser.omega_L), mm.omega_rf))
    items.append(AuditItem("rf_vs_detuning", mm.omega_rf, delta))
    items.append(AuditItem("dipole_rwa", abs(laser.Omega_L), abs(laser.omega_L)))
    for k, (w1a, w2s, split) in enumerate(unwanted):
        gap = min(abs(split - laser.omega_L + mm.omega_rf), abs(split - laser.omega_L - mm.omega_rf))
        items.append(AuditItem(f"unwanted_transition_{k + 1}", abs(w1a * np.conj(w2s)), gap))
    rate = scattering_rate(cfg.gamma, rabi_max, delta)
    j_eff = abs(laser.j_eff(trap))
    items.append(AuditItem("scattering_vs_coupling", rate, j_eff))
    return AuditReport(items, rate, rate / j_eff)
