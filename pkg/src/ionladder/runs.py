"""Command bodies: build objects from a resolved config, compute, stage files.

Each ``cmd_*`` function takes a resolved config (frequencies in rad/s), a
:class:`RunWriter` and command options, stages its artifacts on the writer
and returns a summary mapping.  Nothing here touches the file system.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import couplings as cp
from . import dynamics as dyn
from . import error_budget as eb
from . import ising
from .config import parse_grid
from .crystal import (AMU, TrapConfig, classify_structure, crystal_csv_rows,
                      equilibrium_positions, is_local_minimum)
from .exceptions import ConfigError, ZeroBond
from .output import summary_text
from .phonons import branch_gap, branch_plot_rows, planar_modes, transverse_modes

NAMED_SPINS = {"plus": dyn.SPIN_PLUS, "minus": dyn.SPIN_MINUS,
               "up": dyn.SPIN_UP, "down": dyn.SPIN_DOWN}


# ------------------------------------------------------------------ builders

def build_trap(cfg) -> TrapConfig:
    t = cfg["trap"]
    return TrapConfig(t["omega_x"], t["omega_y"], t["omega_z"], mass=t["mass_amu"] * AMU)


def build_crystal(cfg, seed=None, n_ions=None):
    trap = build_trap(cfg)
    t = cfg["trap"]
    return equilibrium_positions(trap, n_ions or t["n_ions"], n_random=t["n_random_seeds"],
                                 seed=cfg["rng_seed"] if seed is None else seed)


def build_laser(cfg, crystal) -> cp.LaserConfig:
    las = cfg["laser"]
    trap = crystal.trap
    if all(las[k] is not None for k in ("Omega_L", "omega_L", "k_L")):
        laser = cp.LaserConfig(las["Omega_L"], las["omega_L"], las["k_L"], las["theta"])
    else:
        omega_L = las["beatnote_over_omega_y"] * trap.omega_y
        rabi = las["rabi_over_detuning"] * abs(trap.omega_y - omega_L) / las["eta_y"]
        laser = cp.LaserConfig.from_lamb_dicke(trap, las["eta_y"], omega_L, rabi, las["theta"])
    if las["inhibit_pair"] is not None:
        pair = tuple(int(i) - 1 for i in las["inhibit_pair"])
        if len(pair) != 2 or min(pair) < 0 or max(pair) >= crystal.n_ions:
            raise ConfigError("laser.inhibit_pair must name two ions (1-based)")
        laser = cp.laser_with_inhibited_pair(crystal, laser, pair)
    return laser


def build_noise(cfg, seed):
    n = cfg["noise"]
    return dyn.NoiseConfig.from_T2(n["T2"], n["tau_over_T2"] * n["T2"], int(n["n_traj"]),
                                   rng_seed=seed)


def parse_phi(text):
    """``i-j=value`` (ions 1-based, value in rad) -> ((i, j), value)."""
    try:
        pair, value = text.split("=")
        i, j = (int(x) - 1 for x in pair.split("-"))
        return (i, j), float(value)
    except ValueError as exc:
        raise ConfigError(f"--phi expects i-j=value, got {text!r}") from exc


def parallel_map(func, items, threads=1):
    """Ordered map; results do not depend on the worker count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _coupling_rows(J):
    return J.csv_rows()


# ------------------------------------------------------------------ commands

def cmd_equilibrium(cfg, writer, **_):
    crystal = build_crystal(cfg)
    structure = classify_structure(crystal, cfg["trap"]["x_cluster_tol"], strict=False)
    writer.csv("crystal.csv", ("index", "leg", "x", "y", "z"),
               crystal_csv_rows(crystal, structure))
    doc = {"crystal": crystal.to_dict(), "structure": structure.to_dict(),
           "local_minimum": is_local_minimum(crystal), "l_z_m": crystal.trap.l_z}
    writer.json("crystal.json", doc)
    summary = {"n_ions": crystal.n_ions, "n_legs": structure.n_legs,
               "planar": structure.planar, "residual": crystal.residual}
    writer.text("summary.txt", summary_text("equilibrium", summary.items()))
    return summary


def cmd_modes(cfg, writer, **_):
    crystal = build_crystal(cfg)
    tm = transverse_modes(crystal)
    pm = planar_modes(crystal)
    n = crystal.n_ions
    writer.csv("modes_transverse.csv",
               ("mode", "branch", "frequency") + tuple(f"y_{i + 1}" for i in range(n)),
               tm.to_rows())
    writer.csv("modes_planar.csv",
               ("mode", "branch", "frequency") + tuple(f"x_{i + 1}" for i in range(n))
               + tuple(f"z_{i + 1}" for i in range(n)), pm.to_rows())
    writer.csv("branch_plot.csv", ("mode", "frequency", "branch"), branch_plot_rows(tm, pm))
    gap = branch_gap(tm, pm)
    writer.json("modes.json", {"branch_gap": gap, "omega_x": crystal.trap.omega_x,
                               "omega_y": crystal.trap.omega_y})
    summary = {"n_modes_transverse": len(tm.frequencies), "gap": gap["gap"],
               "overlap": gap["overlap"]}
    writer.text("summary.txt", summary_text("modes", summary.items()))
    return summary


def _plaquette_signs(J):
    out = []
    for i in range(J.n - 2):
        try:
            out.append({"ions": [i + 1, i + 2, i + 3],
                        "sign": cp.frustration_sign(J, (i, i + 1, i + 2))})
        except ZeroBond:
            out.append({"ions": [i + 1, i + 2, i + 3], "sign": None})
    return out


def cmd_couplings(cfg, writer, phi=None, **_):
    crystal = build_crystal(cfg)
    laser = build_laser(cfg, crystal)
    if phi:
        pair, value = parse_phi(phi)
        laser = laser.with_theta(cp.theta_for_phase(crystal, laser, pair, value))
    modes = transverse_modes(crystal)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        exact = cp.effective_couplings_exact(modes, crystal, laser)
    dipolar = cp.dipolar_couplings(crystal, laser)
    header = ("i", "j", "J_ij", "sign")
    writer.csv("couplings_exact.csv", header, _coupling_rows(exact))
    writer.csv("couplings_dipolar.csv", header, _coupling_rows(dipolar))
    structure = classify_structure(crystal, cfg["trap"]["x_cluster_tol"], strict=False)
    writer.json("ladder.json", cp.ladder_form(exact, structure).to_dict())
    doc = {"theta": laser.theta, "k_L": laser.k_L, "Omega_L": laser.Omega_L,
           "omega_L": laser.omega_L, "j_eff": laser.j_eff(crystal.trap),
           "eta_y": laser.eta_y(crystal.trap), "eta_x": laser.eta_x(crystal.trap),
           "plaquettes_exact": _plaquette_signs(exact),
           "warnings": [str(w.message) for w in caught]}
    writer.json("couplings.json", doc)
    summary = {"theta": laser.theta, "j_eff": doc["j_eff"],
               "max_abs_J_exact": float(np.max(np.abs(exact.J)))}
    writer.text("summary.txt", summary_text("couplings", summary.items()))
    return summary


def run_dynamics(cfg, seed):
    crystal = build_crystal(cfg)
    laser = build_laser(cfg, crystal)
    d = cfg["dynamics"]
    las = cfg["laser"]
    names = d["initial"]
    if len(names) != crystal.n_ions or any(n not in NAMED_SPINS for n in names):
        raise ConfigError("dynamics.initial needs one of plus/minus/up/down per ion")
    spin = dyn.product_spin_state([NAMED_SPINS[n] for n in names])
    j_eff = laser.j_eff(crystal.trap)
    times = np.linspace(0.0, d["t_max_over_j"] / j_eff, int(d["n_times"]))
    noise = build_noise(cfg, seed)
    H = dyn.build_rwa_hamiltonian(crystal, laser, int(d["fock_cutoff"]),
                                  eta_x=las["eta_y"] / las["eta_ratio"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        full = dyn.evolve_full(H, dyn.spin_phonon_product(H, spin), times, noise)
        sources = {
            "rwa": dyn.rwa_couplings(H, j_eff),
            "exact": cp.effective_couplings_exact(transverse_modes(crystal), crystal, laser),
            "dipolar": cp.dipolar_couplings(crystal, laser),
        }
    effective = {name: dyn.evolve_effective(J, 0.0, spin, times, noise)
                 for name, J in sources.items()}
    by_source = {name: dyn.dynamics_deviation(full, eff) for name, eff in effective.items()}
    chosen = d["couplings"]
    return {"crystal": crystal, "laser": laser, "full": full, "effective": effective[chosen],
            "couplings": chosen, "deviation": by_source[chosen], "deviation_by_source": by_source,
            "J_over_j_eff": {k: J.J / j_eff for k, J in sources.items()},
            "j_eff": j_eff, "truncation_error": full.truncation_error,
            "warnings": [str(w.message) for w in caught] + H.warnings}


def cmd_dynamics(cfg, writer, seed=0, **_):
    res = run_dynamics(cfg, seed)
    header = ("t", "ion", "mean", "stderr")
    writer.csv("dynamics_full.csv", header, res["full"].csv_rows())
    writer.csv("dynamics_effective.csv", header, res["effective"].csv_rows())
    doc = {"couplings": res["couplings"], "deviation": res["deviation"],
           "deviation_by_source": res["deviation_by_source"],
           "J_over_j_eff": res["J_over_j_eff"], "j_eff": res["j_eff"],
           "truncation_error": res["truncation_error"],
           "norm_drift": res["full"].norm_drift, "energy_drift": res["full"].energy_drift,
           "warnings": res["warnings"]}
    writer.json("dynamics.json", doc)
    summary = {"max_deviation": res["deviation"]["max"], "j_eff": res["j_eff"],
               "truncation_error": res["truncation_error"]}
    writer.text("summary.txt", summary_text("dynamics", summary.items()))
    return summary


# ------------------------------------------------------------------ ED scans

def _scan_point(args):
    L, f2, g, kw = args
    return ising.phase_scan(L, [f2], [g], **kw)[0]


def run_scan(ed, threads=1, f2_values=None, g_values=None, L=None, mode=None):
    L = int(L or ed["L"])
    f2_values = f2_values if f2_values is not None else parse_grid(ed["f2"])
    g_values = g_values if g_values is not None else parse_grid(ed["g"])
    kw = {"geometry": dict(ed["geometry"]), "mode": mode or ed["mode"],
          "boundary": ed["boundary"], "delta_max": int(ed["delta_max"]), "tol": ed["tol"]}
    jobs = [(L, f2, g, kw) for f2 in f2_values for g in g_values]
    return parallel_map(_scan_point, jobs, threads), L, kw


def _structure_rows(points):
    rows = []
    for p in points:
        if p.structure is None:
            continue
        for q, s in zip(p.structure.q, p.structure.values):
            rows.append((p.f2, p.g, q, s))
    return rows


def _drops_by_f2(points, attr):
    out = {}
    for f2 in sorted({p.f2 for p in points}):
        sel = [p for p in points if p.f2 == f2 and p.converged]
        if len(sel) < 2:
            continue
        out[f2] = ising.count_drops([p.g for p in sel], [getattr(p, attr) for p in sel])
    return out


def stage_scan(writer, points, L, kw, prefix=""):
    writer.csv(prefix + "phase_map.csv", ising.SCAN_HEADER, [p.row() for p in points])
    writer.csv(prefix + "structure_factor.csv", ("f2", "g", "q", "S_zz"),
               _structure_rows(points))
    first = ising.build_model(L, g=points[0].g, f2=points[0].f2, geometry=kw["geometry"],
                              mode=kw["mode"], boundary=kw["boundary"],
                              delta_max=kw["delta_max"]) if points else None
    doc = {"L": L, **kw, "model_first_point": None if first is None else
           {k: v for k, v in first.to_dict().items() if k != "bonds"},
           "drops_S_pi_over_2": _drops_by_f2(points, "S_half"),
           "drops_S_0": _drops_by_f2(points, "S0"),
           "unconverged": [[p.f2, p.g] for p in points if not p.converged]}
    writer.json(prefix + "ed_scan.json", doc)
    return doc


def cmd_ed_scan(cfg, writer, threads=1, L=None, f2=None, g=None, mode=None, **_):
    ed = cfg["ed"]
    points, L, kw = run_scan(ed, threads, parse_grid(f2) if f2 else None,
                             parse_grid(g) if g else None, L, mode)
    doc = stage_scan(writer, points, L, kw)
    summary = {"L": L, "points": len(points),
               "drops_S_pi_over_2": {str(k): len(v) for k, v in doc["drops_S_pi_over_2"].items()},
               "drops_S_0": {str(k): len(v) for k, v in doc["drops_S_0"].items()}}
    writer.text("summary.txt", summary_text("ed-scan", summary.items()))
    return summary


# ------------------------------------------------------------------ error budget

ERROR_PARTS = ("lambda", "micromotion", "thermal", "heating", "audit")


def run_lambda(n_points=2000):
    raman = eb.raman_config()
    t_r = np.linspace(0.0, 4 * 2 * math.pi / 2.5e-3, n_points)
    ra = eb.lambda_comparison(raman, "down", t_r)
    dip = eb.dipole_config()
    eff_d = eb.effective_two_level(dip)
    t_d = np.linspace(0.0, 6 * math.pi / abs(eff_d.omega_L), max(600, n_points // 2))
    di = eb.lambda_comparison(dip, "plus", t_d)
    return {
        "raman": ra, "raman_times": t_r, "dipole": di, "dipole_times": t_d,
        "raman_frequency_exact": eb.oscillation_frequency(t_r, ra["exact"].p_down),
        "raman_frequency_effective": eb.oscillation_frequency(t_r, ra["effective"].p_down),
        "dipole_omega_L": float(abs(eff_d.omega_L)),
        "dipole_omega_L_far_detuned": float(abs(eb.far_detuned_dipole_rabi(dip))),
    }


def _lambda_rows(comp):
    ex, ef = comp["exact"], comp["effective"]
    return list(zip(ex.times, ex.p_down, ef.p_down, ex.sigma_x, ef.sigma_x))


LAMBDA_HEADER = ("t", "p_down_exact", "p_down_effective", "sigma_x_exact", "sigma_x_effective")


def stage_lambda(writer, res):
    writer.csv("lambda_raman.csv", LAMBDA_HEADER, _lambda_rows(res["raman"]))
    writer.csv("lambda_dipole.csv", LAMBDA_HEADER, _lambda_rows(res["dipole"]))
    doc = {
        "raman": {"p_down_deviation": res["raman"]["p_down_deviation"],
                  "sigma_x_deviation": res["raman"]["sigma_x_deviation"],
                  "frequency_exact": res["raman_frequency_exact"],
                  "frequency_effective": res["raman_frequency_effective"],
                  "trace_error": res["raman"]["exact"].trace_error},
        "dipole": {"p_down_deviation": res["dipole"]["p_down_deviation"],
                   "sigma_x_deviation": res["dipole"]["sigma_x_deviation"],
                   "omega_L": res["dipole_omega_L"],
                   "omega_L_far_detuned": res["dipole_omega_L_far_detuned"],
                   "trace_error": res["dipole"]["exact"].trace_error},
    }
    writer.json("lambda.json", doc)
    return doc


def run_micromotion(cfg):
    e = cfg["errors"]
    mmc = cfg["micromotion"]
    mm = eb.MicromotionConfig(e["micromotion_omega_rf"], q=dict(mmc["q"]), a=dict(mmc["a"]),
                              kappa_g=mmc["kappa_g"])
    dip = eb.dipole_config()
    out = []
    for q in e["micromotion_q"]:
        xi = math.pi / 4 * q
        out.append((q, xi, eb.micromotion_error(dip, mm, xi, n_points=int(e["n_points"]))))
    return out


def stage_micromotion(writer, res):
    rows = [(q, xi, r.epsilon, r.epsilon_effective, r.m_max, r.bessel_weight,
             r.change_at_m_plus_2) for q, xi, r in res]
    writer.csv("micromotion.csv", ("q_x", "xi", "epsilon_m", "epsilon_m_vs_effective",
                                   "m_max", "bessel_weight", "change_at_m_plus_2"), rows)
    if res:
        q, xi, last = res[-1]
        writer.csv("micromotion_trace.csv", ("t", "sigma_x_micromotion", "sigma_x_reference",
                                             "sigma_x_effective"), last.csv_rows())
    return {"epsilon_m": {str(q): r.epsilon for q, _, r in res}}


def benchmark_model(cfg):
    crystal = build_crystal(cfg)
    laser = build_laser(cfg, crystal)
    return crystal, laser, eb.normal_mode_model(crystal, laser)


def run_thermal(cfg):
    e = cfg["errors"]
    crystal, laser, model = benchmark_model(cfg)
    nbar = [float(x) for x in e["nbar"]]
    rows = []
    for nb in nbar:
        closed_all = eb.thermal_error(model, nb, [model.t_final])[:, 0]
        sims = {nt: eb.thermal_error_exact_sim(model, nb, int(nt))
                for nt in e["thermal_cutoffs"]}
        rows.append((nb, eb.thermal_error_bound(laser, crystal.trap, nb), closed_all,
                     {nt: s.epsilon for nt, s in sims.items()}))
    return {"rows": rows, "cutoffs": [int(x) for x in e["thermal_cutoffs"]],
            "t_final": model.t_final,
            "bound_0p1": eb.thermal_error_bound(laser, crystal.trap, 0.1)}


def stage_thermal(writer, res):
    cut = res["cutoffs"]
    header = ("nbar_y", "epsilon_bound", "epsilon_closed_ion1") + tuple(
        f"epsilon_sim_nt{n}" for n in cut)
    rows = [(nb, bound, closed[0]) + tuple(sims[n] for n in cut)
            for nb, bound, closed, sims in res["rows"]]
    writer.csv("thermal.csv", header, rows)
    return {"bound_at_0.1": res["bound_0p1"], "t_final": res["t_final"]}


def run_heating(cfg):
    e = cfg["errors"]
    _, _, model = benchmark_model(cfg)
    rows = []
    for ms in e["heating_ms_per_phonon"]:
        gamma = 1.0 / (ms * 1e-3)
        r = eb.heating_error(model, gamma, fock_cutoff=int(e["heating_cutoff"]))
        rows.append((ms, gamma, r.epsilon, float(eb.heating_mean_phonons(gamma, [r.time])[0])))
    return {"rows": rows, "t_final": model.t_final, "cutoff": int(e["heating_cutoff"])}


def stage_heating(writer, res):
    writer.csv("heating.csv", ("ms_per_phonon", "gamma_h", "epsilon_h", "nbar_at_t_final"),
               res["rows"])
    return {"epsilon_h": {str(ms): eps for ms, _, eps, _ in res["rows"]}}


def run_audit(cfg):
    crystal = build_crystal(cfg)
    laser = build_laser(cfg, crystal)
    a = cfg["audit"]
    mmc = cfg["micromotion"]
    mm = eb.MicromotionConfig(a["omega_rf"], q=dict(mmc["q"]), a=dict(mmc["a"]),
                              kappa_g=mmc["kappa_g"])
    lam = eb.lambda_config_for_laser(laser, a["delta"], a["gamma"], a["omega_0"])
    unwanted = [tuple(u) for u in a["unwanted"]]
    report = eb.validity_audit(crystal, laser, mm, lam, unwanted)
    doc = report.to_dict()
    doc["micromotion_warnings"] = mm.check(crystal.trap)
    return doc


def cmd_errors(cfg, writer, parts=None, **_):
    parts = [p.strip() for p in (parts or ",".join(ERROR_PARTS)).split(",") if p.strip()]
    bad = [p for p in parts if p not in ERROR_PARTS]
    if bad:
        raise ConfigError(f"unknown error parts {bad}; choose from {ERROR_PARTS}")
    summary = {}
    if "lambda" in parts:
        summary["lambda"] = stage_lambda(writer, run_lambda())
    if "micromotion" in parts:
        summary["micromotion"] = stage_micromotion(writer, run_micromotion(cfg))
    if "thermal" in parts:
        summary["thermal"] = stage_thermal(writer, run_thermal(cfg))
    if "heating" in parts:
        summary["heating"] = stage_heating(writer, run_heating(cfg))
    if "audit" in parts:
        doc = run_audit(cfg)
        writer.json("audit.json", doc)
        summary["audit"] = {"worst": doc["worst"],
                            "scattering_over_j_eff": doc["scattering_over_j_eff"]}
    writer.text("summary.txt", summary_text("errors", _flatten(summary)))
    return summary


def _flatten(d, prefix=""):
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out
