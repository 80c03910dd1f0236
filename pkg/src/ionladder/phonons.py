"""Normal modes of a planar ion crystal: transverse (y) and planar (xz) branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crystal import IonCrystal, coulomb_pair_tensor
from .exceptions import ImaginaryFrequency

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass
class CouplingTensor:
    """Dimensionless Coulomb couplings V[i, j, a, b] (units of e^2/l_z^3)."""

    V: np.ndarray

    def block(self, a, b):
        return self.V[:, :, AXES[a], AXES[b]]

    @property
    def n_ions(self):
        return self.V.shape[0]


@dataclass
class PhononModes:
    branch: str
    frequencies: np.ndarray      # rad/s, ascending
    mode_matrix: np.ndarray      # columns are modes
    eigenvalues: np.ndarray      # (Omega_n / omega_ref)^2
    omega_ref: float
    crystal: IonCrystal

    def to_rows(self):
        rows = []
        for n, (w, vec) in enumerate(zip(self.frequencies, self.mode_matrix.T)):
            rows.append((n + 1, self.branch, w, *vec))
        return rows


def coulomb_hessian(crystal: IonCrystal) -> CouplingTensor:
    return CouplingTensor(coulomb_pair_tensor(crystal.positions))


def _fix_signs(vecs):
    rows = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[rows, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _orthonormalize_degenerate(evals, vecs, rel_tol=1e-9):
    """Replace each degenerate block by Gram-Schmidt on projected unit vectors."""
    n = len(evals)
    scale = max(1.0, np.max(np.abs(evals)))
    start = 0
    out = vecs.copy()
    while start < n:
        stop = start + 1
        while stop < n and evals[stop] - evals[start] < rel_tol * scale:
            stop += 1
        if stop - start > 1:
            sub = vecs[:, start:stop]
            proj = sub @ sub.T
            basis = []
            for k in range(n):
                v = proj[:, k].copy()
                for b in basis:
                    v -= (b @ v) * b
                norm = np.linalg.norm(v)
                if norm > 1e-8:
                    basis.append(v / norm)
                if len(basis) == stop - start:
                    break
            out[:, start:stop] = np.array(basis).T
        start = stop
    return out


def symmetric_modes(matrix):
    """Eigenpairs of a real symmetric matrix with deterministic vectors."""
    matrix = 0.5 * (matrix + matrix.T)
    evals, vecs = np.linalg.eigh(matrix)
    vecs = _orthonormalize_degenerate(evals, vecs)
    return evals, _fix_signs(vecs)


def transverse_matrix(crystal: IonCrystal, tensor: CouplingTensor | None = None):
    tensor = tensor or coulomb_hessian(crystal)
    n = crystal.n_ions
    return np.eye(n) + crystal.trap.kappa_y * tensor.block("y", "y")


def planar_matrix(crystal: IonCrystal, tensor: CouplingTensor | None = None):
    """2N x 2N block matrix for the coupled x and z vibrations.

    Eigenvalues are (Omega / omega_x)^2.  The lower-right block carries
    kappa_x * (1 + V_zz) because the axial restoring force is omega_z^2.
    """
    tensor = tensor or coulomb_hessian(crystal)
    n = crystal.n_ions
    kx = crystal.trap.kappa_x
    eye = np.eye(n)
    return np.block([
        [eye + kx * tensor.block("x", "x"), kx * tensor.block("x", "z")],
        [kx * tensor.block("z", "x"), kx * eye + kx * tensor.block("z", "z")],
    ])


def _modes(branch, matrix, omega_ref, crystal):
    evals, vecs = symmetric_modes(matrix)
    if evals[0] <= 0:
        raise ImaginaryFrequency(
            f"{branch} branch has eigenvalue {evals[0]:.3e} <= 0 (structural instability)")
    return PhononModes(branch, omega_ref * np.sqrt(evals), vecs, evals, omega_ref, crystal)


def transverse_modes(crystal: IonCrystal) -> PhononModes:
    return _modes("transverse", transverse_matrix(crystal), crystal.trap.omega_y, crystal)


def planar_modes(crystal: IonCrystal) -> PhononModes:
    return _modes("planar", planar_matrix(crystal), crystal.trap.omega_x, crystal)


def branch_gap(tm: PhononModes, pm: PhononModes) -> dict:
    lo = float(tm.frequencies[0])
    hi = float(pm.frequencies[-1])
    return {"min_transverse": lo, "max_planar": hi, "gap": lo - hi,
            "overlap": bool(lo - hi <= 0)}


def branch_plot_rows(tm: PhononModes, pm: PhononModes):
    """(mode index, frequency, branch) rows, planar branch first."""
    rows = [(n + 1, w, "planar") for n, w in enumerate(pm.frequencies)]
    rows += [(n + 1, w, "transverse") for n, w in enumerate(tm.frequencies)]
    return rows
