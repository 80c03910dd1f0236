"""Canned runs behind ``ionladder reproduce <id>``.

Every bundle stages plot-ready CSV data, a ``verdict.json`` with the numeric
checks for that figure, and returns ``(summary, series)`` where ``series``
feeds the optional plots.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from . import couplings as cp
from . import ising
from .crystal import (TrapConfig, classify_structure, crystal_csv_rows,
                      equilibrium_positions)
from .output import summary_text
from .phonons import branch_gap, branch_plot_rows, planar_modes, transverse_modes
from .runs import (build_laser, run_dynamics, run_heating, run_lambda, run_micromotion,
                   run_scan, run_thermal, stage_heating, stage_lambda, stage_micromotion,
                   stage_scan, stage_thermal)

CENSUS = ((50, 4e-4, 1), (51, 1e-2, 2), (52, 4e-2, 3), (53, 8e-2, 4))
THREE_LEG_TRAP_HZ = (434e3, 2011e3, 229e3)


def _check(name, value, passed, target):
    return {"check": name, "value": value, "target": target, "passed": bool(passed)}


def _finish(writer, title, checks, extra=None):
    doc = {"checks": checks, "passed": all(c["passed"] for c in checks)}
    if extra:
        doc.update(extra)
    writer.json("verdict.json", doc)
    lines = [(c["check"], ("PASS " if c["passed"] else "FAIL ") + str(c["value"]))
             for c in checks]
    writer.text("summary.txt", summary_text(title, lines))
    return doc


def _series(panel, name, x, y, xlabel, ylabel, style="line"):
    return {"panel": panel, "name": name, "x": list(map(float, x)), "y": list(map(float, y)),
            "xlabel": xlabel, "ylabel": ylabel, "style": style}


# ------------------------------------------------------------------ geometry

def fig1(cfg, writer, seed=0, **_):
    checks, series, rows = [], [], []
    for n, kx, legs in CENSUS:
        trap = TrapConfig.from_kappas(kx, kx / 400)
        crystal = equilibrium_positions(trap, n, seed=seed)
        structure = classify_structure(crystal)
        writer.csv(f"crystal_N{n}.csv", ("index", "leg", "x", "y", "z"),
                   crystal_csv_rows(crystal, structure))
        rows.append((n, kx, structure.n_legs, int(structure.planar)))
        checks.append(_check(f"N={n} kappa_x={kx:g} legs", structure.n_legs,
                             structure.n_legs == legs, legs))
        series.append(_series(f"N={n}", "ions", crystal.positions[:, 2],
                              crystal.positions[:, 0], "z", "x", "scatter"))
    writer.csv("census.csv", ("n_ions", "kappa_x", "n_legs", "planar"), rows)
    return _finish(writer, "fig1", checks), series


def fig3(cfg, writer, seed=0, **_):
    """Couplings from the central ion of a 30-ion zigzag, without and with a
    pi/2 phase on its nearest-neighbour bond."""
    oz = 2 * math.pi * 1e6
    trap = TrapConfig(6.1 * oz, 61 * oz, oz)
    crystal = equilibrium_positions(trap, 30, seed=seed)
    c = copy.deepcopy(cfg)
    c["laser"]["inhibit_pair"] = None
    c["laser"]["theta"] = math.pi / 2
    base = build_laser(c, crystal)
    j0 = crystal.n_ions // 2 - 1
    z = crystal.positions[:, 2]
    modes = transverse_modes(crystal)
    series, out = [], {}
    lasers = {"in_phase": base, "quarter_phase": cp.laser_with_inhibited_pair(crystal, base,
                                                                              (j0, j0 + 1))}
    for label, laser in lasers.items():
        exact = cp.effective_couplings_exact(modes, crystal, laser)
        dip = cp.dipolar_couplings(crystal, laser)
        scale = laser.j_eff(trap)
        dist = np.linalg.norm(crystal.positions - crystal.positions[j0], axis=1)
        others = [j for j in np.argsort(dist, kind="stable") if j != j0]
        rows = [(j + 1, z[j] - z[j0], exact.J[j0, j] / scale, dip.J[j0, j] / scale)
                for j in others]
        writer.csv(f"central_couplings_{label}.csv",
                   ("ion", "dz", "J_exact_over_J_eff", "J_dipolar_over_J_eff"), rows)
        out[label] = rows
        series.append(_series(label, "exact", [r[1] for r in rows], [r[2] for r in rows],
                              "z_j - z_j0", "J / J_eff", "scatter"))
    near = out["in_phase"][:8]
    values = [r[2] for r in near]
    checks = [
        _check("in-phase couplings all antiferromagnetic",
               min(r[2] for r in out["in_phase"]), all(r[2] > 0 for r in out["in_phase"]),
               "> 0"),
        _check("in-phase couplings fall with distance (eight nearest)",
               values, all(a >= b for a, b in zip(values, values[1:])), "non-increasing"),
    ]
    return _finish(writer, "fig3", checks), series


# ------------------------------------------------------------------ dynamics

def fig4(cfg, writer, seed=0, **_):
    checks, series, extra = [], [], {}
    for case, pair in (("frustrated", None), ("inhibited", [1, 2])):
        c = copy.deepcopy(cfg)
        c["laser"]["inhibit_pair"] = pair
        res = run_dynamics(c, seed)
        header = ("t", "ion", "mean", "stderr")
        writer.csv(f"{case}_full.csv", header, res["full"].csv_rows())
        writer.csv(f"{case}_effective.csv", header, res["effective"].csv_rows())
        extra[case] = {"couplings": res["couplings"], "truncation_error": res["truncation_error"],
                       "deviation_by_source": {k: v["max"] for k, v in
                                               res["deviation_by_source"].items()}}
        t = res["full"].times * res["j_eff"]
        for ion in range(res["full"].mean.shape[0]):
            series.append(_series(case, f"full ion {ion + 1}", t, res["full"].mean[ion],
                                  "J_eff t", "<sigma^x>"))
            series.append(_series(case, f"effective ion {ion + 1}", t,
                                  res["effective"].mean[ion], "J_eff t", "<sigma^x>"))
        if case == "frustrated":
            dev = res["deviation"]["max"]
            checks.append(_check(f"frustrated: max |full - effective| ({res['couplings']} J)",
                                 dev, dev <= 0.1, "<= 0.1"))
        else:
            s2 = res["full"].mean[1]
            drift = float(np.max(np.abs(s2 - s2[0])))
            checks.append(_check("inhibited: max |<sigma_2^x(t)> - <sigma_2^x(0)>|", drift,
                                 drift <= 0.1, "<= 0.1"))
    return _finish(writer, "fig4", checks, extra), series


# ------------------------------------------------------------------ ED

def _scan_series(points, attr, label):
    f2s = sorted({p.f2 for p in points})
    out = []
    for f2 in f2s:
        sel = [p for p in points if p.f2 == f2]
        out.append(_series(label, f"f2={f2:g}", [p.g for p in sel],
                           [getattr(p, attr) for p in sel], "g", label))
    return out


def _sq_series(points, panel, every=5):
    out = []
    for p in points[::every]:
        if p.structure is not None:
            out.append(_series(panel, f"g={p.g:g}", p.structure.q / math.pi,
                               p.structure.values, "q / pi", "S_zz(q)"))
    return out


def fig6(cfg, writer, threads=1, **_):
    ed = dict(cfg["ed"], f2="0.69", mode="scan")
    points, L, kw = run_scan(ed, threads)
    doc = stage_scan(writer, points, L, kw)
    drops = doc["drops_S_pi_over_2"].get(0.69, [])
    checks = [_check(f"L={L} f2=0.69: drops in S_zz(pi/2)", len(drops), len(drops) == 2, 2)]
    series = _scan_series(points, "S_half", "S_zz(pi/2)") + _sq_series(points, "S_zz(q)")
    return _finish(writer, "fig6", checks, {"drops": drops}), series


def fig7(cfg, writer, threads=1, seed=0, **_):
    ed = dict(cfg["ed"], f2="0.45", mode="scan")
    points, L, kw = run_scan(ed, threads)
    doc = stage_scan(writer, points, L, kw)
    drops = doc["drops_S_0"].get(0.45, [])
    checks = [_check(f"L={L} f2=0.45: transitions in S_zz(0)", len(drops), len(drops) == 1, 1)]
    # the 19-ion three-leg crystal and its two phonon branches
    wx, wy, wz = (2 * math.pi * f for f in THREE_LEG_TRAP_HZ)
    crystal = equilibrium_positions(TrapConfig(wx, wy, wz), 19, seed=seed)
    tm, pm = transverse_modes(crystal), planar_modes(crystal)
    writer.csv("branch_plot_N19.csv", ("mode", "frequency", "branch"), branch_plot_rows(tm, pm))
    writer.csv("crystal_N19.csv", ("index", "leg", "x", "y", "z"),
               crystal_csv_rows(crystal, classify_structure(crystal, strict=False)))
    gap = branch_gap(tm, pm)
    checks.append(_check("N=19 transverse-planar branch gap (rad/s)", gap["gap"],
                         gap["gap"] > 0, "> 0"))
    series = (_scan_series(points, "S0", "S_zz(0)") + _sq_series(points, "S_zz(q)")
              + [_series("branches", "planar", range(1, len(pm.frequencies) + 1),
                         pm.frequencies / wz, "mode", "Omega / omega_z", "scatter"),
                 _series("branches", "transverse", range(1, len(tm.frequencies) + 1),
                         tm.frequencies / wz, "mode", "Omega / omega_z", "scatter")])
    return _finish(writer, "fig7", checks, {"drops": drops, "branch_gap": gap}), series


def _is_peak(sf, q):
    return any(abs(p["q"] - q) < 1e-9 for p in sf.peaks())


def fig8(cfg, writer, threads=1, **_):
    ed = dict(cfg["ed"], L=16, f2="0.57", g="0.02:0.6:0.02", mode="tied")
    points, L, kw = run_scan(ed, threads)
    stage_scan(writer, points, L, kw)
    q1, q2 = math.pi / 4, 3 * math.pi / 4
    rows = [(p.g, p.structure.at(q1), p.structure.at(q2),
             int(_is_peak(p.structure, q1) and _is_peak(p.structure, q2))) for p in points]
    writer.csv("peak_amplitudes.csv", ("g", "S_pi_over_4", "S_3pi_over_4", "both_peaks"), rows)
    coexist = [r[0] for r in rows if r[3]]
    checks = [_check(f"L={L} f2=0.57 (tied geometry): peaks at pi/4 and 3pi/4 at the "
                     "smallest g", rows[0][1:3], bool(rows[0][3]), "both local maxima")]
    series = [_series("amplitudes", "q=pi/4", [r[0] for r in rows], [r[1] for r in rows],
                      "g", "S_zz"),
              _series("amplitudes", "q=3pi/4", [r[0] for r in rows], [r[2] for r in rows],
                      "g", "S_zz")] + _sq_series(points, "S_zz(q)")
    return _finish(writer, "fig8", checks, {"coexistence_g": coexist}), series


TABLE_STATES = (
    ("F", 0.3, 0.05, 0.0),
    ("dAF", 0.8, 0.05, math.pi / 2),
    ("P", 0.3, 3.0, 0.0),
    ("mP", 0.69, 1.0, None),
    ("FP", 0.69, 0.5, None),
)


def table1(cfg, writer, **_):
    ed = cfg["ed"]
    L = int(ed["L"])
    rows, checks = [], []
    for phase, f2, g, expected in TABLE_STATES:
        model = ising.build_model(L, g=g, geometry=dict(ed["geometry"]), f2=f2,
                                  mode=ed["mode"], delta_max=int(ed["delta_max"]))
        sf = ising.structure_factor(ising.lanczos_ground(model), model)
        peak = sf.peaks(1)[0]
        rows.append((phase, f2, g, peak["q"], peak["mirror_q"], peak["amplitude"]))
        if expected is not None:
            checks.append(_check(f"{phase} (f2={f2}, g={g}) peak q", peak["q"],
                                 abs(peak["q"] - expected) < 1e-9, expected))
    writer.csv("modulation.csv", ("phase", "f2", "g", "q_peak", "mirror_q", "amplitude"), rows)
    return _finish(writer, "tableI", checks), []


# ------------------------------------------------------------------ error budget

def fig9(cfg, writer, **_):
    res = run_lambda()
    doc = stage_lambda(writer, res)
    f = res["raman_frequency_exact"]
    checks = [
        _check("Raman oscillation frequency / eps_r", f, abs(f / 2.5e-3 - 1) <= 0.05,
               "2.5e-3 within 5%"),
        _check("Raman: sup |P_down exact - effective|", doc["raman"]["p_down_deviation"],
               doc["raman"]["p_down_deviation"] <= 0.05, "<= 0.05"),
        _check("dipole: sup |P_down exact - effective|", doc["dipole"]["p_down_deviation"],
               doc["dipole"]["p_down_deviation"] <= 0.05, "<= 0.05"),
    ]
    series = []
    for key, panel in (("raman", "Raman"), ("dipole", "dipole force")):
        ex, ef = res[key]["exact"], res[key]["effective"]
        series += [_series(panel, "P_down exact", ex.times, ex.p_down, "eps_r t", "P"),
                   _series(panel, "P_down effective", ef.times, ef.p_down, "eps_r t", "P"),
                   _series(panel, "sigma_x exact", ex.times, ex.sigma_x, "eps_r t", "P"),
                   _series(panel, "sigma_x effective", ef.times, ef.sigma_x, "eps_r t", "P")]
    return _finish(writer, "fig9", checks), series


def fig10(cfg, writer, **_):
    c = copy.deepcopy(cfg)
    if 0.0 not in c["errors"]["micromotion_q"]:
        c["errors"]["micromotion_q"] = [0.0] + list(c["errors"]["micromotion_q"])
    if 0.2 not in c["errors"]["micromotion_q"]:
        c["errors"]["micromotion_q"] = list(c["errors"]["micromotion_q"]) + [0.2]
    res = run_micromotion(c)
    stage_micromotion(writer, res)
    by_q = {q: r for q, _, r in res}
    checks = [
        _check("epsilon_m at xi = 0", by_q[0.0].epsilon, by_q[0.0].epsilon <= 1e-6, "<= 1e-6"),
        _check("epsilon_m at q_x = 0.2", by_q[0.2].epsilon,
               0.02 <= by_q[0.2].epsilon <= 0.08, "[0.02, 0.08]"),
        _check("Bessel weight at m_max", min(r.bessel_weight for _, _, r in res),
               all(r.bessel_weight >= 1 - 1e-8 for _, _, r in res), ">= 1 - 1e-8"),
    ]
    series = [_series("epsilon_m", "three-level reference", [xi for _, xi, _ in res],
                      [r.epsilon for _, _, r in res], "xi", "epsilon_m"),
              _series("epsilon_m", "effective reference", [xi for _, xi, _ in res],
                      [r.epsilon_effective for _, _, r in res], "xi", "epsilon_m")]
    return _finish(writer, "fig10", checks), series


def fig11(cfg, writer, **_):
    c = copy.deepcopy(cfg)
    c["errors"]["thermal_cutoffs"] = [6, 7, 8]
    res = run_thermal(c)
    stage_thermal(writer, res)
    worst = 0.0
    for nb, _, closed, sims in res["rows"]:
        if closed[0] > 0:
            worst = max(worst, abs(sims[8] / closed[0] - 1))
        else:
            worst = max(worst, abs(sims[8]))
    bound = res["bound_0p1"]
    checks = [
        _check("closed-form bound at nbar_y = 0.1", bound, abs(bound - 0.009) <= 0.0005,
               "0.009 +- 0.0005"),
        _check("n_t = 8 simulation vs closed form (relative)", worst, worst <= 0.1, "<= 0.1"),
    ]
    nb = [r[0] for r in res["rows"]]
    series = [_series("epsilon_T", "bound", nb, [r[1] for r in res["rows"]], "nbar_y", "eps"),
              _series("epsilon_T", "closed form", nb, [r[2][0] for r in res["rows"]],
                      "nbar_y", "eps")]
    series += [_series("epsilon_T", f"n_t={n}", nb, [r[3][n] for r in res["rows"]],
                       "nbar_y", "eps") for n in res["cutoffs"]]
    return _finish(writer, "fig11", checks), series


def fig12(cfg, writer, **_):
    c = copy.deepcopy(cfg)
    if 5.0 not in c["errors"]["heating_ms_per_phonon"]:
        c["errors"]["heating_ms_per_phonon"] = sorted(c["errors"]["heating_ms_per_phonon"]
                                                      + [5.0])
    res = run_heating(c)
    stage_heating(writer, res)
    eps5 = next(r[2] for r in res["rows"] if r[0] == 5.0)
    checks = [_check("epsilon_h at 5 ms per phonon", eps5, 0.005 <= eps5 <= 0.02,
                     "0.01 within a factor 2")]
    series = [_series("epsilon_h", f"n_t={res['cutoff']}", [r[0] for r in res["rows"]],
                      [r[2] for r in res["rows"]], "1/Gamma_h (ms)", "eps_h")]
    return _finish(writer, "fig12", checks), series


FIGURES = {
    "fig1": fig1, "fig3": fig3, "fig4": fig4, "fig6": fig6, "fig7": fig7, "fig8": fig8,
    "fig9": fig9, "fig10": fig10, "fig11": fig11, "fig12": fig12, "tableI": table1,
}
