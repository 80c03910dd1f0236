"""Phonon-mediated Ising couplings between the spins of a planar crystal.

Energies follow the ordered-pair convention ``H = sum_{i != j} J_ij s_i s_j``:
``J`` is stored once per unordered pair and a bond contributes
``2 J_ij s_i s_j``.  The ladder-model exporter halves nothing; it is the
caller's job to multiply by two when feeding the single-sum ED model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .crystal import IonCrystal, LadderStructure
from .exceptions import EmptyModel, ResonantMode, ZeroBond
from .phonons import PhononModes, planar_modes

ZERO_FLOOR = 1e-12


@dataclass(frozen=True)
class LaserConfig:
    """Spin-dependent dipole force.

    Omega_L: differential Rabi frequency (rad/s); omega_L: beatnote (rad/s);
    k_L: effective wavevector magnitude (1/m); theta: angle between k_L and
    the x axis (rad).  ``eta_y``/``eta_x`` are evaluated for a given trap.
    """

    Omega_L: float
    omega_L: float
    k_L: float
    theta: float = math.pi / 2

    @property
    def lambda_L(self):
        return 2 * math.pi / self.k_L

    def kvec(self):
        """Components along (x, y, z)."""
        return self.k_L * np.array([math.cos(self.theta), math.sin(self.theta), 0.0])

    def eta_y(self, trap):
        return self.k_L * math.sin(self.theta) * math.sqrt(
            constants.hbar / (2 * trap.mass * trap.omega_y))

    def eta_x(self, trap):
        return self.k_L * abs(math.cos(self.theta)) * math.sqrt(
            constants.hbar / (2 * trap.mass * trap.omega_x))

    def delta_y(self, trap):
        return trap.omega_y - self.omega_L

    def j_eff(self, trap):
        eta = self.eta_y(trap)
        return (self.Omega_L ** 2 * eta ** 2 / (8 * self.delta_y(trap) ** 2)
                * trap.kappa_y * trap.omega_y)

    def phases(self, crystal: IonCrystal):
        """Laser phase k_L . r_i at every equilibrium position (rad)."""
        return crystal.trap.l_z * crystal.positions @ self.kvec()

    def with_theta(self, theta):
        return LaserConfig(self.Omega_L, self.omega_L, self.k_L, theta)

    @classmethod
    def from_lamb_dicke(cls, trap, eta_y, omega_L, Omega_L, theta=math.pi / 2):
        """Pick k_L so that the transverse Lamb-Dicke factor equals ``eta_y``."""
        zpf = math.sqrt(constants.hbar / (2 * trap.mass * trap.omega_y))
        return cls(Omega_L, omega_L, eta_y / (zpf * math.sin(theta)), theta)


@dataclass
class SpinCouplings:
    J: np.ndarray
    provenance: str
    h: float = 0.0
    j_scale: float = 1.0   # J_eff of the laser, used for the zero floor
    labels: list | None = None
    warnings: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.J)

    def pair_energy_matrix(self):
        """Coefficient of s_i s_j per unordered pair (twice J_ij)."""
        return 2.0 * self.J

    def csv_rows(self):
        rows = []
        labels = self.labels or list(range(1, self.n + 1))
        for i in range(self.n):
            for j in range(i + 1, self.n):
                value = self.J[i, j]
                sign = 0 if abs(value) < ZERO_FLOOR * abs(self.j_scale) else int(np.sign(value))
                rows.append((labels[i], labels[j], value, sign))
        return rows


@dataclass
class LadderModel:
    legs: dict       # leg -> (ion indices, J block)
    rungs: dict      # (leg a, leg b) -> (ions a, ions b, J block)
    h: float
    structure: LadderStructure
    n: int

    def reassemble(self):
        J = np.zeros((self.n, self.n))
        for ions, block in self.legs.values():
            J[np.ix_(ions, ions)] = block
        for ions_a, ions_b, block in self.rungs.values():
            J[np.ix_(ions_a, ions_b)] = block
            J[np.ix_(ions_b, ions_a)] = block.T
        return J

    def to_dict(self):
        return {
            "h": self.h,
            "legs": {str(k): {"ions": (v[0] + 1).tolist(), "J": v[1].tolist()}
                     for k, v in self.legs.items()},
            "rungs": {f"{a}-{b}": {"ions_a": (v[0] + 1).tolist(),
                                   "ions_b": (v[1] + 1).tolist(), "J": v[2].tolist()}
                      for (a, b), v in self.rungs.items()},
        }


def _symmetrize(J):
    J = 0.5 * (J + J.T)
    np.fill_diagonal(J, 0.0)
    return J


def mode_detunings(modes: PhononModes, laser: LaserConfig):
    return modes.frequencies - laser.omega_L


def effective_couplings_exact(modes: PhononModes, crystal: IonCrystal, laser: LaserConfig,
                              resonance_floor: float = 1e-9) -> SpinCouplings:
    """Sum over transverse modes of the phonon-mediated exchange.

    J_ij = -sum_n Omega_L^2 k^2 sin^2(theta) / (8 m Omega_n delta_n)
           * M_in M_jn cos(k . r_ij)
    """
    if modes.branch != "transverse":
        raise ValueError("exact couplings need the transverse branch")
    trap = crystal.trap
    detuning = mode_detunings(modes, laser)
    if np.any(np.abs(detuning) < resonance_floor * laser.omega_L):
        raise ResonantMode("beatnote resonant with a transverse mode")
    if np.any(detuning > 0) and np.any(detuning < 0):
        raise ResonantMode("beatnote lies inside the transverse branch")
    ky = laser.k_L * math.sin(laser.theta)
    weight = (laser.Omega_L ** 2 * ky ** 2 * constants.hbar
              / (8 * trap.mass * modes.frequencies * detuning))
    M = modes.mode_matrix
    phase = laser.phases(crystal)
    J = -np.einsum("in,jn,n->ij", M, M, weight) * np.cos(phase[:, None] - phase[None, :])
    out = SpinCouplings(_symmetrize(J), "exact", j_scale=laser.j_eff(trap))
    out.warnings.extend(rwa_audit(crystal, laser, modes))
    return out


def dipolar_couplings(crystal: IonCrystal, laser: LaserConfig) -> SpinCouplings:
    """J_ij = J_eff cos(phi_ij) / |r_ij|^3 (dimensionless distances)."""
    pos = crystal.positions
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    phase = laser.phases(crystal)
    cosphi = np.cos(phase[:, None] - phase[None, :])
    # cos(pi/2) is not exactly zero in floating point
    cosphi[np.abs(cosphi) < 1e-14] = 0.0
    j_eff = laser.j_eff(crystal.trap)
    return SpinCouplings(_symmetrize(j_eff * cosphi / dist ** 3), "dipolar", j_scale=j_eff)


def rwa_audit(crystal: IonCrystal, laser: LaserConfig, transverse: PhononModes):
    """Warnings for the rotating-wave conditions behind the spin-phonon coupling."""
    out = []
    if abs(laser.Omega_L) >= 0.3 * laser.omega_L:
        out.append("Omega_L is not much smaller than omega_L")
    eta_t = laser.eta_y(crystal.trap)
    eta_p = laser.eta_x(crystal.trap)
    if eta_p > 0:
        try:
            planar = planar_modes(crystal)
        except Exception:  # soft planar mode: nothing meaningful to compare
            return out
        planar_strength = eta_p * abs(laser.Omega_L) / np.min(
            np.abs(planar.frequencies - laser.omega_L))
        transverse_strength = eta_t * abs(laser.Omega_L) / np.max(
            np.abs(transverse.frequencies - laser.omega_L))
        if planar_strength >= transverse_strength:
            out.append("planar phonons are driven as strongly as transverse ones")
    for msg in out:
        warnings.warn(msg, stacklevel=3)
    return out


def theta_for_phase(crystal: IonCrystal, laser: LaserConfig, pair, phi):
    """Angle theta that gives phase difference ``phi`` on ion pair (i, j).

    Uses phi_ij = k_L l_z (x_i - x_j) cos(theta); raises ValueError when the
    pair has no x separation or the request needs |cos(theta)| > 1.
    """
    i, j = pair
    dx = crystal.trap.l_z * (crystal.positions[i, 0] - crystal.positions[j, 0])
    if abs(dx) < 1e-15:
        raise ValueError("pair has no x separation; its phase cannot be tuned")
    c = phi / (laser.k_L * dx)
    if abs(c) > 1:
        raise ValueError("requested phase needs |cos(theta)| > 1 at this wavelength")
    return math.acos(c)


def laser_with_inhibited_pair(crystal: IonCrystal, base: LaserConfig, pair=(0, 1)):
    """Keep the transverse wavevector of ``base`` and add an x component
    so that ``phi`` on ``pair`` equals pi/2."""
    i, j = pair
    dx = crystal.trap.l_z * (crystal.positions[i, 0] - crystal.positions[j, 0])
    kx = (math.pi / 2) / dx
    ky = base.k_L * math.sin(base.theta)
    return LaserConfig(base.Omega_L, base.omega_L, math.hypot(kx, ky), math.atan2(ky, kx))


def frustration_sign(J: SpinCouplings, plaquette) -> int:
    i, j, k = plaquette
    bonds = [J.J[i, j], J.J[j, k], J.J[i, k]]
    floor = ZERO_FLOOR * abs(J.j_scale) if J.j_scale else ZERO_FLOOR * np.max(np.abs(J.J))
    if any(abs(b) <= floor for b in bonds):
        raise ZeroBond("plaquette contains a vanishing bond")
    return int(np.sign(np.prod([-b for b in bonds])))


def hide_ions(J: SpinCouplings, structure: LadderStructure | None, mask) -> SpinCouplings:
    mask = set(int(m) for m in mask)
    keep = [i for i in range(J.n) if i not in mask]
    if not keep:
        raise EmptyModel("every ion is hidden")
    labels = J.labels or list(range(1, J.n + 1))
    return SpinCouplings(J.J[np.ix_(keep, keep)].copy(), J.provenance, J.h, J.j_scale,
                         [labels[i] for i in keep], list(J.warnings))


def ladder_form(J: SpinCouplings, structure: LadderStructure) -> LadderModel:
    if len(structure.leg_of) != J.n:
        raise ValueError("structure and coupling matrix sizes differ")
    legs, rungs = {}, {}
    members = {g: np.nonzero(structure.leg_of == g)[0]
               for g in range(1, structure.n_legs + 1)}
    for g, ions in members.items():
        legs[g] = (ions, J.J[np.ix_(ions, ions)].copy())
    for a in members:
        for b in members:
            if a < b:
                rungs[(a, b)] = (members[a], members[b],
                                 J.J[np.ix_(members[a], members[b])].copy())
    return LadderModel(legs, rungs, J.h, structure, J.n)


def zigzag_j1_j2(J: SpinCouplings):
    """Nearest-neighbour couplings along the zigzag path i -> i+1 and i -> i+2.

    With ions ordered along z, the zigzag path alternates legs, so J1 is the
    rung bond and J2 the leg bond.  Returns the central values.
    """
    n = J.n
    mid = n // 2 - 1 if n > 3 else 0
    return J.J[mid, mid + 1], J.J[mid, mid + 2]
