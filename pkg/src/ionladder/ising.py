"""Exact diagonalization of frustrated Ising chains with a transverse field.

Units of |J1|.  A model is a list of bonds ``(i, j, K)`` contributing
``K s_i s_j`` (each unordered pair once) plus ``-g sum_i sigma^x_i``.  For the
dipolar zigzag chain odd-distance bonds are ferromagnetic (``K = -f``) and
even-distance bonds antiferromagnetic (``K = +f``).

Site ``i`` is bit ``i`` of the basis index.  The Hamiltonian is real, so all
vectors are float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, optimize, sparse

from .exceptions import FitDegenerate, InvalidRange, NoConvergence, SizeLimit

MAX_BRUTE_FORCE_L = 24
DEFAULT_MEMORY_BUDGET = 1.5e9


def dipolar_ratios(d, a, delta_max=4):
    """f_delta = (r_1 / r_delta)^3 on the zigzag x = (d/2)(-1)^i, z = i a."""
    def dist(delta):
        return math.hypot(d if delta % 2 else 0.0, delta * a)

    r1 = dist(1)
    return {delta: (r1 / dist(delta)) ** 3 for delta in range(1, delta_max + 1)}


def rung_for_f2(f2, a=1.0):
    """Rung width d that gives the requested f_2 with purely dipolar ratios."""
    if f2 <= 0.125:
        raise InvalidRange("purely geometric ratios need f_2 > 1/8")
    return a * math.sqrt(4 * f2 ** (2 / 3) - 1)


@dataclass
class DipolarIsingModel:
    L: int
    bonds: np.ndarray            # (n_bonds, 3): i, j, K
    g: float
    boundary: str = "periodic"
    f: dict = field(default_factory=dict)
    geometry: dict | None = None
    delta_max: int = 0

    @property
    def dim(self):
        return 2 ** self.L

    def with_field(self, g):
        return DipolarIsingModel(self.L, self.bonds, g, self.boundary, dict(self.f),
                                 self.geometry, self.delta_max)

    def norm_bound(self):
        return float(np.abs(self.bonds[:, 2]).sum() + abs(self.g) * self.L)

    def to_dict(self):
        return {"L": self.L, "g": self.g, "boundary": self.boundary,
                "f": {str(k): v for k, v in self.f.items()}, "geometry": self.geometry,
                "delta_max": self.delta_max,
                "bonds": [[int(i), int(j), float(k)] for i, j, k in self.bonds]}


def chain_bonds(L, f, boundary="periodic"):
    rows = []
    for delta, value in sorted(f.items()):
        sign = -1.0 if delta % 2 else 1.0
        stop = L if boundary == "periodic" else L - delta
        for i in range(stop):
            rows.append((i, (i + delta) % L, sign * value))
    return np.array(rows, dtype=float).reshape(-1, 3)


def sawtooth_bonds(L, j1=1.0, j2=1.0, boundary="periodic"):
    """Corner-sharing triangles: j1 on every neighbour pair, j2 from odd sites
    to their second neighbour (the base of each triangle)."""
    rows = []
    stop1 = L if boundary == "periodic" else L - 1
    rows += [(i, (i + 1) % L, j1) for i in range(stop1)]
    stop2 = L if boundary == "periodic" else L - 2
    rows += [(i, (i + 2) % L, j2) for i in range(1, stop2, 2)]
    return np.array(rows, dtype=float)


def build_model(L, f=None, g=0.0, boundary="periodic", geometry=None, delta_max=4,
                f2=None, mode="scan", bonds=None) -> DipolarIsingModel:
    """Assemble a chain model.

    ``f`` gives the ratios directly (f_1 is forced to 1).  ``geometry`` =
    {"d": ..., "a": ...} derives them from the dipolar law; ``f2`` then
    overrides f_2 alone (``mode="scan"``) or re-shapes the rung width so all
    ratios follow (``mode="tied"``).  ``bonds`` bypasses both.
    """
    if L < 2:
        raise InvalidRange("need at least two spins")
    if boundary not in ("periodic", "open"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if bonds is not None:
        return DipolarIsingModel(L, np.asarray(bonds, dtype=float).reshape(-1, 3), g, boundary)
    if geometry is not None:
        d, a = geometry["d"], geometry.get("a", 1.0)
        if f2 is not None and mode == "tied":
            d = rung_for_f2(f2, a)
        elif mode not in ("scan", "tied"):
            raise ValueError(f"unknown mode {mode!r}")
        ratios = dipolar_ratios(d, a, delta_max)
        if f2 is not None and mode == "scan":
            ratios[2] = float(f2)
        geometry = {"d": d, "a": a}
    elif f is not None:
        ratios = {int(k): float(v) for k, v in f.items()}
        if f2 is not None:
            ratios[2] = float(f2)
    else:
        raise ValueError("give f, geometry or bonds")
    ratios[1] = 1.0
    if any(v < 0 for v in ratios.values()):
        raise InvalidRange("ratios must be non-negative")
    dmax = max(ratios)
    if boundary == "periodic" and 2 * dmax >= L:
        raise InvalidRange(f"delta_max={dmax} double counts bonds on a ring of {L}")
    return DipolarIsingModel(L, chain_bonds(L, ratios, boundary), g, boundary,
                             dict(sorted(ratios.items())), geometry, dmax)


# -- Hamiltonian action ------------------------------------------------------

def _basis(L):
    return np.arange(2 ** L, dtype=np.int64 if L > 30 else np.uint32)


def diagonal_energies(model: DipolarIsingModel, idx=None):
    idx = _basis(model.L) if idx is None else idx
    diag = np.zeros(len(idx))
    for i, j, k in model.bonds:
        anti = ((idx >> int(i)) ^ (idx >> int(j))) & 1
        diag += k * (1.0 - 2.0 * anti)
    return diag


class HamiltonianOperator:
    """Matrix-free action with the diagonal cached once."""

    def __init__(self, model: DipolarIsingModel):
        self.model = model
        self.diag = diagonal_energies(model)

    def __call__(self, psi):
        out = self.diag * psi
        g = self.model.g
        if g:
            L = self.model.L
            src = -g * psi
            for site in range(L):
                shape = (2 ** (L - 1 - site), 2, 2 ** site)
                o, s = out.reshape(shape), src.reshape(shape)
                o[:, 0, :] += s[:, 1, :]
                o[:, 1, :] += s[:, 0, :]
        return out


def apply_hamiltonian(model: DipolarIsingModel, psi):
    psi = np.asarray(psi)
    if psi.shape != (model.dim,):
        raise ValueError("state dimension must be 2^L")
    return HamiltonianOperator(model)(psi)


def dense_hamiltonian(model: DipolarIsingModel):
    if model.L > 12:
        raise SizeLimit("dense assembly limited to L <= 12")
    H = np.diag(diagonal_energies(model))
    idx = _basis(model.L)
    for site in range(model.L):
        H[idx ^ (1 << site), idx] -= model.g
    return H


# -- Lanczos -----------------------------------------------------------------

class GroundStateResult:
    """Lowest eigenpair.  ``state`` is over all 2^L configurations; results
    from the symmetric sector expand it on first access."""

    def __init__(self, energy, vector, iterations, residual, restarts, sector=None):
        self.energy = float(energy)
        self.vector = vector
        self.iterations = iterations
        self.residual = residual
        self.restarts = restarts
        self.sector = sector
        self._state = None if sector is not None else vector

    @property
    def state(self):
        if self._state is None:
            self._state = self.sector.expand(self.vector)
        return self._state

    def zz_correlations(self, L):
        if self.sector is not None:
            return self.sector.correlations(self.vector)
        return zz_correlations(self.state, L)

    def diagnostics(self):
        return {"iterations": self.iterations, "residual": self.residual,
                "restarts": self.restarts,
                "sector": "symmetric" if self.sector is not None else "full"}


@lru_cache(maxsize=2)
def _orbit_basis(L):
    idx = _basis(L)
    kind = idx.dtype.type
    mask = kind(2 ** L - 1)
    rep = idx.copy()
    rolled = idx.copy()
    for _ in range(L):
        rolled = ((rolled << kind(1)) | (rolled >> kind(L - 1))) & mask
        np.minimum(rep, rolled, out=rep)
        np.minimum(rep, rolled ^ mask, out=rep)
    reps, orbit = np.unique(rep, return_counts=True)
    index_of = np.searchsorted(reps, rep).astype(np.int64)
    del rep, rolled, idx
    targets = np.array([index_of[reps ^ kind(1 << site)] for site in range(L)])
    return reps, orbit, index_of, targets


class SymmetricSector:
    """States invariant under translations and the global spin flip (rings only).

    Basis vectors are normalized orbit sums.  For g > 0 every off-diagonal
    element of H is non-positive and the flip graph is connected, so the
    ground state is unique, positive and therefore lives in this sector.
    """

    def __init__(self, model: DipolarIsingModel):
        if model.boundary != "periodic":
            raise ValueError("the symmetric sector needs periodic boundaries")
        L = model.L
        self.model = model
        self.reps, self.orbit, self.index_of, targets = _orbit_basis(L)
        self.diag = diagonal_energies(model, self.reps)
        n = len(self.reps)
        if model.g:
            cols = np.tile(np.arange(n), L)
            rows = targets.reshape(-1)
            vals = -model.g * np.sqrt(self.orbit[cols] / self.orbit[rows])
            self.off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        else:
            self.off = sparse.csr_matrix((n, n))

    @property
    def dim(self):
        return len(self.reps)

    def __call__(self, psi):
        return self.diag * psi + self.off @ psi

    def start_vector(self):
        v = np.sqrt(self.orbit.astype(float))
        return v / np.linalg.norm(v)

    def expand(self, vec):
        return vec[self.index_of] / np.sqrt(self.orbit[self.index_of])

    def correlations(self, vec):
        """C_ij from sector amplitudes; C depends only on (j - i) mod L."""
        L = self.model.L
        prob = vec ** 2
        c = np.zeros(L)
        spins = 1.0 - 2.0 * ((self.reps[:, None] >> np.arange(L, dtype=self.reps.dtype)) & 1)
        for r in range(L):
            c[r] = prob @ np.mean(spins * np.roll(spins, -r, axis=1), axis=1)
        sites = np.arange(L)
        return c[(sites[None, :] - sites[:, None]) % L]


def krylov_size(dim, memory_budget=DEFAULT_MEMORY_BUDGET, cap=40):
    return int(max(4, min(cap, memory_budget // (8 * dim) - 3, dim)))


def _restarted_lanczos(apply, x, scale, m, tol, max_restarts):
    dim = len(x)
    basis = np.empty((m, dim))
    iterations = 0
    residual = math.inf
    for restart in range(max_restarts + 1):
        basis[0] = x
        alpha, beta = [], []
        for k in range(m):
            w = apply(basis[k])
            iterations += 1
            alpha.append(float(basis[k] @ w))
            for _ in range(2):
                w -= basis[:k + 1].T @ (basis[:k + 1] @ w)
            b = float(np.linalg.norm(w))
            beta.append(b)
            if k + 1 == m or b < 1e-14 * scale:
                break
            basis[k + 1] = w / b
        n = len(alpha)
        evals, evecs = linalg.eigh_tridiagonal(np.array(alpha), np.array(beta[:n - 1]),
                                               select="i", select_range=(0, 0))
        theta = float(evals[0])
        x = evecs[:, 0] @ basis[:n]
        x /= np.linalg.norm(x)
        residual = float(np.linalg.norm(apply(x) - theta * x))
        iterations += 1
        if residual <= tol * scale:
            return theta, x, iterations, residual, restart
    raise NoConvergence(f"Lanczos residual {residual:.3e} after {max_restarts} restarts")


def lanczos_ground(model: DipolarIsingModel, tol=1e-10, max_restarts=200, krylov=None,
                   seed=None, memory_budget=DEFAULT_MEMORY_BUDGET,
                   sector="auto") -> GroundStateResult:
    """Lowest eigenpair by explicitly restarted Lanczos with full reorthogonalization.

    ``sector="symmetric"`` works in the translation and flip invariant
    subspace (default on rings when no random start is requested);
    ``"full"`` uses all 2^L states.  Without ``seed`` the start vector is
    the uniform state, which already lies in the symmetric sector.
    Convergence requires ``||H x - E x|| <= tol * ||H||``.
    """
    if sector == "auto":
        sector = "symmetric" if model.boundary == "periodic" and seed is None else "full"
    scale = max(model.norm_bound(), 1e-300)
    if sector == "symmetric":
        op = SymmetricSector(model)
        x = op.start_vector()
    elif sector == "full":
        op = HamiltonianOperator(model)
        if seed is None:
            x = np.full(model.dim, 1.0 / math.sqrt(model.dim))
        else:
            x = np.random.default_rng(seed).standard_normal(model.dim)
            x /= np.linalg.norm(x)
    else:
        raise ValueError(f"unknown sector {sector!r}")
    dim = len(x)
    if dim == 1:
        e = float(op(x)[0])
        return GroundStateResult(e, x, 1, 0.0, 0, op if sector == "symmetric" else None)
    m = min(krylov or krylov_size(dim, memory_budget), dim)
    theta, x, its, res, restarts = _restarted_lanczos(op, x, scale, m, tol, max_restarts)
    return GroundStateResult(theta, x, its, res, restarts,
                             op if sector == "symmetric" else None)


# -- observables -------------------------------------------------------------

def zz_correlations(state, L, chunk=2 ** 16):
    """C_ij = <sigma^z_i sigma^z_j> from a real or complex amplitude vector."""
    prob = np.abs(np.asarray(state)) ** 2
    C = np.zeros((L, L))
    shifts = np.arange(L, dtype=np.uint32)
    for start in range(0, len(prob), chunk):
        idx = np.arange(start, min(start + chunk, len(prob)), dtype=np.uint32)
        spins = 1.0 - 2.0 * ((idx[:, None] >> shifts[None, :]) & 1)
        C += spins.T @ (prob[start:start + len(idx), None] * spins)
    return C


@dataclass
class StructureFactor:
    q: np.ndarray
    values: np.ndarray
    normalization: str = "sum_ij C_ij exp(iq(i-j)) / L^2"

    def at(self, q):
        k = int(np.argmin(np.abs(np.angle(np.exp(1j * (self.q - q))))))
        return float(self.values[k])

    def peaks(self, count=2):
        """Largest local maxima on 0 <= q <= pi, each with its mirror 2 pi - q."""
        L = len(self.q)
        half = [k for k in range(L // 2 + 1)]
        found = []
        for k in half:
            left, right = self.values[(k - 1) % L], self.values[(k + 1) % L]
            if self.values[k] >= left and self.values[k] >= right:
                found.append((float(self.values[k]), k))
        found.sort(key=lambda t: (-t[0], t[1]))
        out = []
        for amp, k in found[:count]:
            out.append({"q": float(self.q[k]), "mirror_q": float((2 * np.pi - self.q[k]) % (2 * np.pi)),
                        "amplitude": amp})
        return out


def structure_from_correlations(C) -> StructureFactor:
    L = len(C)
    sites = np.arange(L)
    q = 2 * np.pi * np.arange(L) / L
    phase = np.exp(1j * q[:, None, None] * (sites[None, :, None] - sites[None, None, :]))
    S = np.einsum("qij,ij->q", phase, C) / L ** 2
    return StructureFactor(q, S.real)


def correlations_of(state, L):
    if isinstance(state, GroundStateResult):
        return state.zz_correlations(L)
    return zz_correlations(state, L)


def structure_factor(state, model: DipolarIsingModel | int) -> StructureFactor:
    """S_zz(q) on the ring momenta.  ``state`` is an amplitude vector or a
    GroundStateResult.  sigma^z sigma^z is even under the global flip, so
    the two partners of a degenerate pair give the same S_zz."""
    L = model if isinstance(model, int) else model.L
    return structure_from_correlations(correlations_of(state, L))


def translation_averaged(C):
    L = len(C)
    return np.array([np.mean([C[i, (i + r) % L] for i in range(L)]) for r in range(L)])


# -- classical limit ---------------------------------------------------------

@dataclass
class ClassicalGroundSet:
    energy: float
    degeneracy: int
    configurations: list


def classical_ground_set(model: DipolarIsingModel, rel_tol=1e-9, max_examples=8):
    if model.g != 0:
        raise ValueError("classical ground set needs g = 0")
    if model.L > MAX_BRUTE_FORCE_L:
        raise SizeLimit(f"brute force limited to L <= {MAX_BRUTE_FORCE_L}")
    diag = diagonal_energies(model)
    e0 = float(diag.min())
    hits = np.nonzero(diag <= e0 + rel_tol * max(1.0, abs(e0)))[0]
    configs = ["".join("d" if (int(b) >> s) & 1 else "u" for s in range(model.L))
               for b in hits[:max_examples]]
    return ClassicalGroundSet(e0, int(len(hits)), configs)


def degeneracy_growth(counts: dict):
    """Least-squares slope of ln(count) against L."""
    Ls = np.array(sorted(counts), dtype=float)
    logs = np.log([counts[int(L)] for L in Ls])
    slope, _ = np.polyfit(Ls, logs, 1)
    return float(slope)


# -- scans -------------------------------------------------------------------

@dataclass
class ScanPoint:
    f2: float
    g: float
    energy: float
    S0: float
    S_half: float
    peaks: list
    converged: bool = True
    structure: StructureFactor | None = None

    def row(self):
        p = self.peaks + [{"q": math.nan, "amplitude": math.nan}] * (2 - len(self.peaks))
        return (self.f2, self.g, self.S0, self.S_half, p[0]["q"], p[0]["amplitude"],
                p[1]["q"], p[1]["amplitude"], int(self.converged))


SCAN_HEADER = ("f2", "g", "S_0", "S_pi_over_2", "q_peak1", "amp1", "q_peak2", "amp2", "converged")


def phase_scan(L, f2_values, g_values, geometry=None, f=None, mode="scan",
               boundary="periodic", delta_max=4, tol=1e-10, progress=None):
    geometry = geometry if geometry is not None or f is not None else {"d": 1.0, "a": 1.0}
    out = []
    for f2 in f2_values:
        for g in g_values:
            model = build_model(L, f=f, g=g, boundary=boundary, geometry=geometry,
                                delta_max=delta_max, f2=f2, mode=mode)
            try:
                gs = lanczos_ground(model, tol=tol)
            except NoConvergence:
                out.append(ScanPoint(f2, g, math.nan, math.nan, math.nan, [], False))
                continue
            sf = structure_factor(gs, model)
            out.append(ScanPoint(f2, g, gs.energy, sf.at(0.0), sf.at(math.pi / 2),
                                 sf.peaks(), True, sf))
            if progress:
                progress(out[-1])
    return out


def count_drops(g_values, values, min_fraction=0.1):
    """Separate falls in a curve: maximal runs of decrease, each keeping the
    runs that carry at least ``min_fraction`` of the total range."""
    v = np.asarray(values, dtype=float)
    span = float(np.ptp(v))
    if span == 0:
        return []
    steps = np.diff(v)
    runs, current = [], None
    for k, s in enumerate(steps):
        if s < -1e-3 * span:
            if current is None:
                current = [k, k, 0.0]
            current[1] = k
            current[2] += -s
        elif current is not None:
            runs.append(current)
            current = None
    if current is not None:
        runs.append(current)
    return [{"g_start": float(g_values[a]), "g_end": float(g_values[b + 1]), "size": size}
            for a, b, size in runs if size >= min_fraction * span]


# -- correlation templates ---------------------------------------------------

def _templates():
    return {
        "LRO": (lambda r, m2, q: m2 * np.cos(q * r), ()),
        "exponential": (lambda r, m2, q, xi: m2 * np.cos(q * r) * np.exp(-r / xi), (2.0,)),
        "algebraic": (lambda r, m2, q, eta: m2 * np.cos(q * r) * r ** (-eta), (0.5,)),
    }


def correlation_classify(state, model: DipolarIsingModel, floor=1e-10, degenerate_ratio=0.1):
    """Fit the long-distance correlations against three decay templates.

    Returns the winning template with its parameters.  A template whose
    residual is below ``floor`` is an exact fit; long-range order wins ties
    because the decaying forms contain it as a limit.
    """
    L = model.L
    C = correlations_of(state, L)
    c = translation_averaged(C)
    r = np.arange(2, L // 2 + 1, dtype=float)
    y = c[2:L // 2 + 1]
    sf = structure_from_correlations(C)
    half = slice(0, L // 2 + 1)
    q0 = float(sf.q[half][np.argmax(sf.values[half])])
    fits = {}
    for name, (func, extra) in _templates().items():
        p0 = (max(abs(y[0]), 1e-3), q0) + extra
        bounds = ([0.0, 0.0] + [1e-3] * len(extra), [1.5, math.pi] + [1e3] * len(extra))
        try:
            popt, pcov = optimize.curve_fit(func, r, y, p0=p0, bounds=bounds, maxfev=20000)
        except (RuntimeError, ValueError):
            continue
        resid = float(np.sum((func(r, *popt) - y) ** 2))
        err = np.sqrt(np.clip(np.diag(pcov), 0, None)) if np.all(np.isfinite(pcov)) else None
        params = {"m0": math.sqrt(popt[0]), "q": float(popt[1])}
        if name == "exponential":
            params["xi"] = float(popt[2])
        if name == "algebraic":
            params["eta"] = float(popt[2])
        fits[name] = {"residual": resid, "params": params,
                      "errors": None if err is None else err.tolist()}
    if not fits:
        raise FitDegenerate("no template could be fitted", fits)
    exact = [k for k in ("LRO", "exponential", "algebraic") if k in fits
             and fits[k]["residual"] <= floor]
    if exact:
        return {"decay": exact[0], **fits[exact[0]], "fits": fits}
    ranked = sorted(fits, key=lambda k: fits[k]["residual"])
    if len(ranked) > 1:
        best, second = fits[ranked[0]]["residual"], fits[ranked[1]]["residual"]
        if second - best <= degenerate_ratio * second:
            raise FitDegenerate(f"{ranked[0]} and {ranked[1]} fit equally well", fits)
    return {"decay": ranked[0], **fits[ranked[0]], "fits": fits}
