"""Equilibrium geometry of ions in an anisotropic harmonic trap.

Coordinates are dimensionless, measured in units of the axial length
``l_z = (e^2 / (4 pi eps0 m omega_z^2))^(1/3)``.  In these units the potential
energy is

    V = sum_i sum_a r_ia^2 / (2 kappa_a) + sum_{i<j} 1 / |r_i - r_j|

with ``kappa_a = (omega_z / omega_a)^2``; the force balance returned as the
residual is ``kappa_a * dV/dr_ia``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, optimize

from .exceptions import (AmbiguousStructure, BracketFailure, NonConvergence,
                         UnstableTrap)

AMU = constants.physical_constants["atomic mass constant"][0]
CA40_MASS = 39.962590863 * AMU

GRADIENT_TOL = 1e-10
PLANARITY_TOL = 1e-6


@dataclass(frozen=True)
class TrapConfig:
    """Angular trap frequencies (rad/s), ion mass (kg) and charge (C)."""

    omega_x: float
    omega_y: float
    omega_z: float
    mass: float = CA40_MASS
    charge: float = constants.e

    def __post_init__(self):
        for name in ("omega_x", "omega_y", "omega_z", "mass", "charge"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_kappas(cls, kappa_x, kappa_y, omega_z=2 * math.pi * 1e6, **kw):
        return cls(omega_z / math.sqrt(kappa_x), omega_z / math.sqrt(kappa_y),
                   omega_z, **kw)

    @property
    def kappa_x(self):
        return (self.omega_z / self.omega_x) ** 2

    @property
    def kappa_y(self):
        return (self.omega_z / self.omega_y) ** 2

    @property
    def kappas(self):
        return np.array([self.kappa_x, self.kappa_y, 1.0])

    @property
    def l_z(self):
        coulomb = self.charge ** 2 / (4 * math.pi * constants.epsilon_0)
        return (coulomb / (self.mass * self.omega_z ** 2)) ** (1.0 / 3.0)

    def check_ladder(self):
        if self.kappa_x > 1 or self.kappa_y > 1:
            raise UnstableTrap("ladder mode needs omega_z <= omega_x, omega_y")
        if not self.omega_y > self.omega_x:
            raise UnstableTrap("ladder mode needs omega_y > omega_x")
        if self.kappa_y > 0.1 * self.kappa_x:
            warnings.warn("kappa_y is not much smaller than kappa_x; "
                          "the crystal may leave the xz-plane", stacklevel=3)

    def scaled(self, factor):
        return TrapConfig(self.omega_x * factor, self.omega_y * factor,
                          self.omega_z * factor, self.mass, self.charge)


@dataclass
class IonCrystal:
    positions: np.ndarray
    trap: TrapConfig
    residual: float
    energy: float
    seed_energies: list = field(default_factory=list)

    @property
    def n_ions(self):
        return len(self.positions)

    def to_dict(self):
        return {"n_ions": self.n_ions, "positions": self.positions.tolist(),
                "residual": self.residual, "energy": self.energy,
                "kappa_x": self.trap.kappa_x, "kappa_y": self.trap.kappa_y}


@dataclass
class LadderStructure:
    n_legs: int
    leg_of: np.ndarray
    planar: bool
    leg_positions: np.ndarray
    leg_spacings: np.ndarray

    def to_dict(self):
        return {"n_legs": self.n_legs, "leg_of": self.leg_of.tolist(),
                "planar": self.planar,
                "leg_positions": self.leg_positions.tolist(),
                "leg_spacings": self.leg_spacings.tolist()}


# -- potential ---------------------------------------------------------------

def _pair_geometry(pos):
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    return diff, dist


def potential_energy(pos, kappas):
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    _, dist = _pair_geometry(pos)
    harmonic = 0.5 * np.sum(pos ** 2 / kappas)
    return harmonic + 0.5 * np.sum(1.0 / dist)


def potential_gradient(pos, kappas):
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    diff, dist = _pair_geometry(pos)
    coulomb = np.einsum("ijk,ij->ik", diff, dist ** -3)
    return pos / kappas - coulomb


def force_residual(pos, kappas):
    """Left-hand side of the dimensionless force balance, one row per ion."""
    return kappas * potential_gradient(pos, kappas)


def coulomb_pair_tensor(pos):
    """Second derivatives of the Coulomb energy as an (N, N, 3, 3) array.

    Off-diagonal blocks are ``-(3 r_a r_b - delta_ab r^2) / r^5`` for the pair
    separation ``r``; diagonal blocks make every row sum vanish.
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    n = len(pos)
    diff, dist = _pair_geometry(pos)
    inv3 = dist ** -3
    inv5 = dist ** -5
    eye = np.eye(3)
    tensor = -(3 * diff[:, :, :, None] * diff[:, :, None, :] * inv5[:, :, None, None]
               - eye * inv3[:, :, None, None])
    idx = np.arange(n)
    tensor[idx, idx] = 0.0
    tensor[idx, idx] = -tensor.sum(axis=1)
    return tensor


def potential_hessian(pos, kappas):
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    n = len(pos)
    tensor = coulomb_pair_tensor(pos)
    hess = tensor.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    hess[np.diag_indices(3 * n)] += np.tile(1.0 / kappas, n)
    return hess


# -- minimization ------------------------------------------------------------

def _chain_half_length(n):
    if n < 2:
        return 0.0
    return max(0.63, (0.75 * n * math.log(n)) ** (1.0 / 3.0) * 1.3)


def _seed_configurations(n, kappas, n_random, rng):
    half = _chain_half_length(n)
    z = np.linspace(-half, half, n)
    jitter = 1e-3
    seeds = []

    chain = np.zeros((n, 3))
    chain[:, 2] = z
    chain += jitter * rng.standard_normal((n, 3)) * np.sqrt(kappas)
    seeds.append(chain)

    zig = np.zeros((n, 3))
    zig[:, 2] = z
    spacing = 2 * half / max(n - 1, 1)
    zig[:, 0] = 0.5 * spacing * (-1.0) ** np.arange(n)
    zig += jitter * rng.standard_normal((n, 3)) * np.sqrt(kappas)
    seeds.append(zig)

    width = np.array([max(half, 0.5) * math.sqrt(kappas[0]) + 0.3,
                      1e-2 * math.sqrt(kappas[1]), max(half, 0.5)])
    for _ in range(n_random):
        seeds.append(rng.standard_normal((n, 3)) * width)
    return seeds


def _relax(start, kappas, max_iter):
    """Quasi-Newton descent in trap-scaled coordinates, then Newton polish."""
    scale = np.sqrt(kappas)
    n = len(start)

    def fun(u):
        pos = u.reshape(n, 3) * scale
        return potential_energy(pos, kappas), (potential_gradient(pos, kappas) * scale).ravel()

    res = optimize.minimize(fun, (start / scale).ravel(), jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 0.0,
                                     "maxcor": 30})
    pos = res.x.reshape(n, 3) * scale
    return _newton_polish(pos, kappas)


def _newton_polish(pos, kappas, max_steps=50):
    pos = pos.copy()
    for _ in range(max_steps):
        resid = np.max(np.abs(force_residual(pos, kappas)))
        if resid < GRADIENT_TOL:
            break
        grad = potential_gradient(pos, kappas).ravel()
        hess = potential_hessian(pos, kappas)
        evals, evecs = np.linalg.eigh(hess)
        if evals[0] <= 0:
            # saddle or flat direction; a damped step along |H| keeps descending
            evals = np.maximum(np.abs(evals), 1e-8)
        step = -evecs @ ((evecs.T @ grad) / evals)
        energy = potential_energy(pos, kappas)
        alpha = 1.0
        while alpha > 1e-6:
            trial = pos + alpha * step.reshape(-1, 3)
            if potential_energy(trial, kappas) <= energy + 1e-14 * abs(energy):
                break
            alpha *= 0.5
        pos = trial
    return pos


def canonicalize(pos, z_tol=1e-7):
    """Order ions by (z, x) and pick the mirror image with x of ion 1 <= 0."""
    pos = np.array(pos, dtype=float)

    def order(p):
        keys = np.round(p[:, 2] / z_tol) * z_tol
        return p[np.lexsort((p[:, 0], keys))]

    pos = order(pos)
    offaxis = np.nonzero(np.abs(pos[:, 0]) > 1e-9)[0]
    if len(offaxis) and pos[offaxis[0], 0] > 0:
        pos[:, 0] *= -1
        pos = order(pos)
    return pos


def equilibrium_positions(trap: TrapConfig, n_ions: int, n_random: int = 8,
                          seed: int = 0, ladder_mode: bool = True,
                          max_iter: int = 20000) -> IonCrystal:
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    if ladder_mode:
        trap.check_ladder()
    kappas = trap.kappas
    if n_ions == 1:
        return IonCrystal(np.zeros((1, 3)), trap, 0.0, 0.0, [0.0])

    rng = np.random.default_rng(seed)
    candidates = []
    for start in _seed_configurations(n_ions, kappas, n_random, rng):
        pos = _relax(start, kappas, max_iter)
        resid = float(np.max(np.abs(force_residual(pos, kappas))))
        candidates.append((potential_energy(pos, kappas), resid, canonicalize(pos)))

    energies = [c[0] for c in candidates]
    converged = [c for c in candidates if c[1] < GRADIENT_TOL]
    if not converged:
        raise NonConvergence(f"no seed reached |force| < {GRADIENT_TOL:g} "
                             f"(best {min(c[1] for c in candidates):.3g})")
    e_min = min(c[0] for c in converged)
    ties = [c for c in converged if c[0] - e_min <= 1e-10 * max(1.0, abs(e_min))]
    ties.sort(key=lambda c: tuple(np.round(c[2].ravel(), 8)))
    energy, resid, pos = ties[0]
    return IonCrystal(pos, trap, resid, float(energy), energies)


def is_local_minimum(crystal: IonCrystal, tol=-1e-9):
    evals = np.linalg.eigvalsh(potential_hessian(crystal.positions, crystal.trap.kappas))
    return bool(evals[0] > tol)


# -- structure ---------------------------------------------------------------

def _core_ions(pos, n_core_min=8):
    """Indices of the central ions, where the ladder is most regular."""
    n = len(pos)
    n_core = min(n, max(n_core_min, n // 3))
    center = 0.5 * (pos[:, 2].max() + pos[:, 2].min())
    return np.argsort(np.abs(pos[:, 2] - center), kind="stable")[:n_core]


def classify_structure(crystal: IonCrystal, x_cluster_tol: float = 0.05,
                       planarity_tol: float = PLANARITY_TOL,
                       strict: bool = True) -> LadderStructure:
    """Group ions into legs by gaps in their x coordinates.

    The legs are read off the central third of the crystal (at least eight
    ions), where the ladder is regular: a gap in the sorted x values wider
    than ``x_cluster_tol`` starts a new leg.  Ions near the ends, where legs
    bend towards the axis, join the leg with the nearest x.  In strict mode a
    gap within a factor of two of the threshold is rejected because the
    answer would hinge on the tolerance.
    """
    pos = crystal.positions
    core = _core_ions(pos)
    xc = np.sort(pos[core, 0])
    gaps = np.diff(xc)
    near = (gaps > x_cluster_tol / 2) & (gaps < 2 * x_cluster_tol)
    if strict and np.any(near):
        raise AmbiguousStructure(
            f"x gaps {gaps[near]} are within a factor 2 of tolerance {x_cluster_tol}")
    groups = np.split(xc, np.nonzero(gaps > x_cluster_tol)[0] + 1)
    centers = np.array([g.mean() for g in groups])
    leg_of = np.argmin(np.abs(pos[:, 0][:, None] - centers[None, :]), axis=1) + 1
    planar = bool(np.max(np.abs(pos[:, 1])) < planarity_tol)
    return LadderStructure(len(centers), leg_of, planar, centers, np.diff(centers))


def count_legs(trap, n_ions, x_cluster_tol=0.05, seed=0, strict=True):
    crystal = equilibrium_positions(trap, n_ions, seed=seed)
    return classify_structure(crystal, x_cluster_tol, strict=strict).n_legs


def critical_anisotropy(trap_template: TrapConfig, n_ions: int, target_legs: int,
                        bracket=None, resolution=1e-5, x_cluster_tol=0.05,
                        seed=0) -> float:
    """Bisect kappa_x for the onset of ``target_legs`` legs.

    The ratio kappa_y / kappa_x of the template is held fixed while kappa_x
    moves.  Near a continuous transition the leg separation grows from zero,
    so the flip is located where it first exceeds ``x_cluster_tol``.
    Returns the midpoint of the final bracket.
    """
    if target_legs < 2:
        raise ValueError("target_legs must be >= 2")
    ratio = trap_template.kappa_y / trap_template.kappa_x

    def legs(kx):
        trap = TrapConfig.from_kappas(kx, kx * ratio, trap_template.omega_z,
                                      mass=trap_template.mass, charge=trap_template.charge)
        return count_legs(trap, n_ions, x_cluster_tol, seed, strict=False)

    lo, hi = bracket if bracket is not None else (1e-4, 0.5)
    n_lo, n_hi = legs(lo), legs(hi)
    for _ in range(20):
        if n_lo < target_legs <= n_hi:
            break
        if n_lo >= target_legs:
            lo /= 4
            n_lo = legs(lo)
        elif hi < 1.0:
            hi = min(1.0, hi * 2)
            n_hi = legs(hi)
        else:
            break
    if not n_lo < target_legs <= n_hi:
        raise BracketFailure(f"no bracket for {target_legs} legs: "
                             f"legs({lo:g})={n_lo}, legs({hi:g})={n_hi}")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if legs(mid) >= target_legs:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def crystal_csv_rows(crystal: IonCrystal, structure: LadderStructure | None = None):
    rows = []
    for i, (x, y, z) in enumerate(crystal.positions):
        leg = int(structure.leg_of[i]) if structure is not None else 1
        rows.append((i + 1, leg, x, y, z))
    return rows
