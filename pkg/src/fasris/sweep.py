"""Experiment runner: sweeps, figure recipes, CSV/SVG output, validation.

CSV schema is fixed: scenario_id, axis_name, axis_value, precoder, method,
esr, stderr, runtime_ms. All randomness flows from the configured seed; the
runtime column stays empty unless timing is explicitly requested, so output
files are byte-identical for a fixed seed regardless of thread count.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import (phases_from_config, scenario_from_config,
                     selection_from_config)
from .fixed_point import SolverSettings, backsubstitution_residual
from .gradients import (esr_gradient_phases_common,
                        esr_gradient_ports_zf_common, fd_gradient)
from .montecarlo import empirical_esr, resolvent_probe
from .optimize import (alternating_optimization, deterministic_esr,
                       joint_optimize, z_search_profile)
from .rates import sinr_rzf_uncommon
from . import scenarios as sc_mod
from .svgplot import line_plot

CSV_HEADER = "scenario_id,axis_name,axis_value,precoder,method,esr,stderr,runtime_ms"


class UsageError(ValueError):
    pass


def format_row(scenario_id, axis_name, axis_value, precoder, method, esr,
               stderr=None, runtime_ms=None) -> str:
    se = "" if stderr is None else f"{stderr:.12g}"
    rt = "" if runtime_ms is None else f"{runtime_ms:.0f}"
    return (f"{scenario_id},{axis_name},{axis_value:.12g},{precoder},"
            f"{method},{esr:.12g},{se},{rt}")


def write_csv(path: Path, rows: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def _eval_point(scenario, s, phi, precoder, method, z, trials, seed, threads,
                timing):
    t0 = time.perf_counter()
    if precoder == "rzf" and z is None:
        M = int(np.sum(s)) if s is not None else scenario.dims.M
        z = scenario.dims.K * scenario.sigma2 / M
    if method == "de":
        rep = deterministic_esr(scenario, s, phi, precoder, z)
        esr, stderr = rep.esr, None
    else:
        est = empirical_esr(scenario, s, phi, precoder, trials, seed, z,
                            threads)
        esr, stderr = est.mean, est.stderr
    rt = (time.perf_counter() - t0) * 1e3 if timing else None
    return esr, stderr, rt


def run_experiment(cfg: dict, out_dir: str | Path, seed: int | None = None,
                   threads: int = 1, timing: bool = False) -> dict:
    """Config-driven sweep. Writes one CSV and one SVG; returns their paths."""
    out_dir = Path(out_dir)
    sweep = cfg.get("sweep")
    if not sweep or not sweep.get("values"):
        raise UsageError("config has no sweep values")
    values = list(sweep["values"])
    if sorted(values) != values:
        raise UsageError("sweep values must be sorted ascending")
    axis = sweep.get("axis", "snr_db")
    if axis != "snr_db":
        raise UsageError("config-driven sweeps support axis 'snr_db'; "
                         "named figures cover the other axes")
    precoders = cfg.get("precoders", ["rzf"])
    methods = cfg.get("methods", ["de", "mc"])
    trials = int(cfg.get("trials", 2000))
    seed = int(cfg.get("seed", 0)) if seed is None else seed

    rows = []
    series = {}
    name = None
    for snr_db in values:
        cfg_point = dict(cfg)
        cfg_point["scenario"] = dict(cfg["scenario"])
        if "preset" in cfg_point["scenario"] and cfg_point["scenario"]["preset"]:
            pa = dict(cfg_point["scenario"].get("preset_args", {}))
            pa["sigma2_inv_db"] = snr_db
            cfg_point["scenario"]["preset_args"] = pa
        else:
            cfg_point["scenario"]["sigma2_inv_db"] = snr_db
        scenario = scenario_from_config(cfg_point)
        name = scenario.name
        s = selection_from_config(cfg, scenario)
        if s is None and scenario.correlations.R_tot.shape[0] > scenario.dims.M:
            s = sc_mod.uniform_selection(scenario.dims.M,
                                         scenario.correlations.R_tot.shape[0])
        phi = phases_from_config(cfg, scenario.dims.L)
        for precoder in precoders:
            for method in methods:
                if precoder == "mrt" and method == "de":
                    continue          # correlated MRT has no DE; MC only
                esr, stderr, rt = _eval_point(scenario, s, phi, precoder,
                                              method, None, trials, seed,
                                              threads, timing)
                rows.append(format_row(scenario.name, axis, snr_db, precoder,
                                       method, esr, stderr, rt))
                series.setdefault((precoder, method), ([], []))
                series[(precoder, method)][0].append(snr_db)
                series[(precoder, method)][1].append(esr)

    csv_path = out_dir / f"{name}_sweep.csv"
    write_csv(csv_path, rows)
    svg = line_plot([{"x": x, "y": y, "label": f"{p} ({m})",
                      "dashed": m == "mc"}
                     for (p, m), (x, y) in sorted(series.items())],
                    "1/sigma^2 [dB]", "ESR [bit/s/Hz]", name)
    svg_path = out_dir / f"{name}_sweep.svg"
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(svg)
    return {"csv": csv_path, "svg": svg_path, "rows": len(rows)}


# ---------------------------------------------------------------------------
# figure recipes
# ---------------------------------------------------------------------------

def figure_fig1(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, snrs=(60, 70, 80, 90, 100),
                Ms=(16, 20, 24)) -> dict:
    """ESR accuracy vs SNR for M in {16, 20, 24} (RZF, z = K sigma^2/M)."""
    rows, series = [], []
    for M in Ms:
        xs, de_y, mc_y = [], [], []
        for snr in snrs:
            sc = sc_mod.fig1_scenario(M, snr)
            for method, store in (("de", de_y), ("mc", mc_y)):
                esr, stderr, rt = _eval_point(sc, None, None, "rzf", method,
                                              None, trials, seed, threads,
                                              timing)
                rows.append(format_row(sc.name, "snr_db", snr, "rzf", method,
                                       esr, stderr, rt))
                store.append(esr)
            xs.append(snr)
        series.append({"x": xs, "y": de_y, "label": f"M={M} analysis"})
        series.append({"x": xs, "y": mc_y, "label": f"M={M} simulation",
                       "dashed": True})
    return _finish(out_dir, "fig1", rows, series, "1/sigma^2 [dB]",
                   "ESR [bit/s/Hz]", "ESR vs SNR, per-user correlation")


def figure_fig2(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, scales=(1, 2, 3, 4)) -> dict:
    """DE accuracy vs proportional system size, cases (8,6,16)/(12,6,16)."""
    rows, series = [], []
    for case in (1, 2):
        xs, de_y, mc_y = [], [], []
        for scale in scales:
            sc = sc_mod.fig2_scenario(case, scale)
            for method, store in (("de", de_y), ("mc", mc_y)):
                esr, stderr, rt = _eval_point(sc, None, None, "rzf", method,
                                              None, trials, seed, threads,
                                              timing)
                rows.append(format_row(f"fig2_case{case}", "scale", scale,
                                       "rzf", method, esr, stderr, rt))
                store.append(esr)
            xs.append(scale)
        series.append({"x": xs, "y": de_y, "label": f"case {case} analysis"})
        series.append({"x": xs, "y": mc_y, "label": f"case {case} simulation",
                       "dashed": True})
    return _finish(out_dir, "fig2", rows, series, "size multiple",
                   "ESR [bit/s/Hz]", "DE accuracy vs system size")


def figure_fig3(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, snrs=(60, 70, 80, 90, 100)) -> dict:
    """Optimized port selection vs uniform baseline (RZF)."""
    rows, series = [], []
    opt_y, uni_y = [], []
    for snr in snrs:
        sc, M = sc_mod.fig3_scenario(snr)
        L = sc.dims.L
        s_opt, z_opt, phases, rep, _ = joint_optimize(sc, M, T_iter=1)
        rows.append(format_row(sc.name, "snr_db", snr, "rzf", "de_joint",
                               rep.esr))
        s_uni = sc_mod.uniform_selection(M, sc.correlations.R_tot.shape[0])
        z_u, ph_u, esr_u, _ = alternating_optimization(sc, s_uni, np.zeros(L))
        rows.append(format_row(sc.name, "snr_db", snr, "rzf", "de_uniform",
                               esr_u))
        opt_y.append(rep.esr)
        uni_y.append(esr_u)
    series = [{"x": list(snrs), "y": opt_y, "label": "proposed selection"},
              {"x": list(snrs), "y": uni_y, "label": "uniform selection",
               "dashed": True}]
    return _finish(out_dir, "fig3", rows, series, "1/sigma^2 [dB]",
                   "ESR [bit/s/Hz]", "Optimization vs uniform selection")


def figure_fig4(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, snrs=(60, 70, 80, 90, 100)) -> dict:
    """RZF vs ZF vs MRT on the optimization scenario (uniform ports)."""
    rows = []
    series_map = {}
    for snr in snrs:
        sc, M = sc_mod.fig3_scenario(snr)
        s = sc_mod.uniform_selection(M, sc.correlations.R_tot.shape[0])
        phi = np.zeros(sc.dims.L)
        for precoder in ("rzf", "zf", "mrt"):
            methods = ("mc",) if precoder == "mrt" else ("de", "mc")
            for method in methods:
                esr, stderr, rt = _eval_point(sc, s, phi, precoder, method,
                                              None, trials, seed, threads,
                                              timing)
                rows.append(format_row(sc.name, "snr_db", snr, precoder,
                                       method, esr, stderr, rt))
                key = (precoder, method)
                series_map.setdefault(key, ([], []))
                series_map[key][0].append(snr)
                series_map[key][1].append(esr)
    series = [{"x": x, "y": y, "label": f"{p} ({m})", "dashed": m == "mc"}
              for (p, m), (x, y) in sorted(series_map.items())]
    return _finish(out_dir, "fig4", rows, series, "1/sigma^2 [dB]",
                   "ESR [bit/s/Hz]", "Precoder comparison")


def figure_fig5(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, Ws=(1.0, 1.5, 2.0, 2.5, 3.0)) -> dict:
    """Aperture sweep at fixed M_tot (80 dB, optimized selection)."""
    rows, xs, ys = [], [], []
    for Wap in Ws:
        sc, M = sc_mod.fig3_scenario(80.0, W=Wap)
        s_opt, z_opt, phases, rep, _ = joint_optimize(sc, M, T_iter=1)
        rows.append(format_row(f"fig5_W{Wap:g}", "W", Wap, "rzf", "de_joint",
                               rep.esr))
        xs.append(Wap)
        ys.append(rep.esr)
    series = [{"x": xs, "y": ys, "label": "optimized selection"}]
    return _finish(out_dir, "fig5", rows, series, "aperture W [wavelengths]",
                   "ESR [bit/s/Hz]", "Impact of array aperture")


def figure_fig6(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, Ks=(4, 8, 12, 16)) -> dict:
    """User-count sweep: joint optimization vs uniform+AO (80 dB)."""
    rows, opt_y, uni_y = [], [], []
    for K in Ks:
        sc, M = sc_mod.fig6_scenario(K, 80.0)
        L = sc.dims.L
        s_opt, z_opt, phases, rep, _ = joint_optimize(sc, M, T_iter=1)
        s_uni = sc_mod.uniform_selection(M, sc.correlations.R_tot.shape[0])
        z_u, ph_u, esr_u, _ = alternating_optimization(sc, s_uni, np.zeros(L))
        rows.append(format_row(sc.name, "K", K, "rzf", "de_joint", rep.esr))
        rows.append(format_row(sc.name, "K", K, "rzf", "de_uniform", esr_u))
        opt_y.append(rep.esr)
        uni_y.append(esr_u)
    series = [{"x": list(Ks), "y": opt_y, "label": "proposed selection"},
              {"x": list(Ks), "y": uni_y, "label": "uniform selection",
               "dashed": True}]
    return _finish(out_dir, "fig6", rows, series, "number of users K",
                   "ESR [bit/s/Hz]", "Impact of user count")


def figure_fig7(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool, Ms=(12, 16, 20, 24, 28)) -> dict:
    """Selected-port sweep at 90 dB: joint optimization vs uniform+AO."""
    rows, opt_y, uni_y = [], [], []
    for M in Ms:
        sc, _ = sc_mod.fig3_scenario(90.0)
        sc.dims = type(sc.dims)(M=M, K=sc.dims.K, L=sc.dims.L,
                                M_tot=sc.dims.M_tot)
        L = sc.dims.L
        s_opt, z_opt, phases, rep, _ = joint_optimize(sc, M, T_iter=1)
        s_uni = sc_mod.uniform_selection(M, sc.correlations.R_tot.shape[0])
        z_u, ph_u, esr_u, _ = alternating_optimization(sc, s_uni, np.zeros(L))
        rows.append(format_row(f"fig7_M{M}", "M", M, "rzf", "de_joint", rep.esr))
        rows.append(format_row(f"fig7_M{M}", "M", M, "rzf", "de_uniform", esr_u))
        opt_y.append(rep.esr)
        uni_y.append(esr_u)
    series = [{"x": list(Ms), "y": opt_y, "label": "proposed selection"},
              {"x": list(Ms), "y": uni_y, "label": "uniform selection",
               "dashed": True}]
    return _finish(out_dir, "fig7", rows, series, "selected ports M",
                   "ESR [bit/s/Hz]", "Impact of selected-port count")


def figure_fig8(out_dir: Path, trials: int, seed: int, threads: int,
                timing: bool) -> dict:
    """ESR vs z on a homogeneous scenario with the closed-form optimum marked."""
    sc, M = sc_mod.fig8_scenario(80.0)
    s = sc_mod.uniform_selection(M, sc.correlations.R_tot.shape[0])
    phi = np.zeros(sc.dims.L)
    z_star, grid, vals, width = z_search_profile(sc, s, phi)
    z_prop = sc.dims.K * sc.sigma2 / M
    rows = [format_row(sc.name, "z", z, "rzf", "de", v)
            for z, v in zip(grid, vals)]
    series = [{"x": grid, "y": vals, "label": "ESR(z)", "markers": False}]
    out = _finish(out_dir, "fig8", rows, series, "regularization z",
                  "ESR [bit/s/Hz]", "Regularizer search, homogeneous users",
                  logx=True, vlines=[(z_prop, "closed form"),
                                     (z_star, "search")])
    out["z_star"] = z_star
    out["z_prop"] = z_prop
    return out


FIGURES = {"fig1": figure_fig1, "fig2": figure_fig2, "fig3": figure_fig3,
           "fig4": figure_fig4, "fig5": figure_fig5, "fig6": figure_fig6,
           "fig7": figure_fig7, "fig8": figure_fig8}


def _finish(out_dir: Path, name: str, rows, series, xlabel, ylabel, title,
            logx=False, vlines=()) -> dict:
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{name}.csv"
    write_csv(csv_path, rows)
    svg_path = out_dir / f"{name}.svg"
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(line_plot(series, xlabel, ylabel, title, logx=logx,
                                  vlines=list(vlines)))
    return {"csv": csv_path, "svg": svg_path, "rows": len(rows)}


def run_figure(name: str, out_dir: str | Path, trials: int = 2000,
               seed: int = 0, threads: int = 1, timing: bool = False) -> dict:
    if name not in FIGURES:
        raise UsageError(f"unknown figure {name!r}; choose from "
                         f"{sorted(FIGURES)}")
    return FIGURES[name](Path(out_dir), trials, seed, threads, timing)


# ---------------------------------------------------------------------------
# validation battery
# ---------------------------------------------------------------------------

def validate(cfg: dict | None = None, trials: int = 800, seed: int = 7,
             _tamper=None) -> list[dict]:
    """Run the invariant suite; returns one record per check.

    Each record: {name, passed, measured, tolerance, detail}. Failures are
    report content, not exceptions. `_tamper(name, so)` is a fault-injection
    hook used by tests to verify the probes catch corrupted blocks.
    """
    checks: list[dict] = []

    def record(name, measured, tol, detail=""):
        checks.append({"name": name, "passed": bool(measured <= tol),
                       "measured": float(measured), "tolerance": tol,
                       "detail": detail})

    if cfg is not None and cfg.get("scenario"):
        scenario = scenario_from_config(cfg)
    else:
        scenario = sc_mod.fig1_scenario(16, 80.0, K=6, L=16)

    # 1. correlation matrices PSD
    corr = scenario.correlations
    mats = [corr.R_tot, corr.C_L] + corr.f_tot_list(scenario.dims.K) \
        + corr.c_r_list(scenario.dims.K)
    min_eig = min(float(np.linalg.eigvalsh(A).min()) for A in mats)
    record("correlation_psd", max(-min_eig, 0.0), 1e-10,
           f"min eigenvalue {min_eig:.3e}")

    # 2. solver consistency on the scenario
    F_list, R, C_list, p = scenario.stats_uncommon()
    z = scenario.dims.K * scenario.sigma2 / scenario.dims.M
    from .fixed_point import solve_rzf_uncommon, solve_zf_uncommon
    sol = solve_rzf_uncommon(F_list, R, C_list, z)
    res = backsubstitution_residual(sol, F_list=F_list, R=R, C_list=C_list)
    record("backsubstitution", res, 10 * 1e-10, "one extra sweep")

    sol_b = solve_rzf_uncommon(F_list, R, C_list, z,
                               SolverSettings(init=10.0))
    dev = abs(sol.delta - sol_b.delta) / sol.delta
    dev = max(dev, float(np.max(np.abs(sol.mu - sol_b.mu) / sol.mu)))
    record("init_independence", dev, 1e-8, "init 1 vs 10")

    # 3. ZF as the z->0 limit; z is scaled to the channel-gain magnitude so
    # the limit is equally deep regardless of the scenario's absolute scale
    if scenario.dims.M >= scenario.dims.K:
        zf = solve_zf_uncommon(F_list, R, C_list)
        z_small = 1e-8 * float(np.mean(scenario.u) + np.mean(scenario.t))
        small = solve_rzf_uncommon(F_list, R, C_list, z_small,
                                   SolverSettings(tol=1e-12, max_iter=20000))
        dev = float(np.max(np.abs(z_small * small.mu - zf.mu_u) / zf.mu_u))
        record("zf_small_z_limit", dev, 1e-3,
               f"z mu(z) vs mu_u at z={z_small:.1e}")

    # 4. iid closed form
    from .fixed_point import solve_iid_zf
    beta = solve_iid_zf(1.0, 0.5, 0.5, 0.6).beta_val
    mu_fp = _iid_fixed_point(1.0, 0.5, 0.5, 0.6)
    record("iid_closed_form", abs((1 - 0.5) * beta - mu_fp) / mu_fp, 1e-8,
           "closed form vs fixed-point iteration")

    # 5. FD gradient spot checks on a small random scenario
    rng = np.random.default_rng(seed)
    sc_small = sc_mod.random_scenario(rng, "common", M=10, K=3, L=6)
    phi0 = rng.uniform(0, 2 * np.pi, 6)
    dev = _phase_gradient_deviation(sc_small, phi0, _tamper)
    record("fd_phase_gradient", dev, 1e-3, "analytic vs central differences")

    sc_ports = sc_mod.random_scenario(rng, "common", M=6, K=3, L=6, M_tot=12)
    dev = _port_gradient_deviation(sc_ports, rng)
    record("fd_port_gradient", dev, 1e-3, "analytic vs central differences")

    # 6. resolvent probes (first and second order)
    pr = resolvent_probe(scenario, None, None, z, trials, seed)
    rep, so = sinr_rzf_uncommon(sol, F_list, R, C_list, p, scenario.sigma2)
    if _tamper is not None:
        _tamper("pi_block", so)
    d1 = abs(pr.delta_hat - sol.delta) / sol.delta
    no_cascade = bool(np.all(scenario.t == 0.0))
    if no_cascade:
        record("probe_first_order", d1, 0.03,
               f"delta {d1:.3%}; cascaded omega probe skipped (t = 0)")
    else:
        d2 = float(np.max(np.abs(pr.omega_hat - sol.omega)
                          / np.maximum(sol.omega, 1e-6)))
        record("probe_first_order", max(d1, d2), 0.03,
               f"delta {d1:.3%}, omega {d2:.3%}")
    upsI = so.upsilon(np.eye(R.shape[0]))[:scenario.dims.K]
    dU = float(np.max(np.abs(pr.ups_I_hat - upsI) / np.abs(upsI)))
    record("probe_quadratic_traces", dU, 0.05, "trace of Q K Q functionals")
    if no_cascade:
        record("probe_bilinear_traces", 0.0, 0.05,
               "skipped: no cascaded link (t = 0), bilinear traces vanish")
    else:
        dL = float(np.max(np.abs(pr.lambda_hat - so.Lambda_kl)
                          / np.maximum(np.abs(so.Lambda_kl), 1e-9)))
        record("probe_bilinear_traces", dL, 0.05, "bilinear cascaded traces")

    # 7. DE vs MC smoke test
    est = empirical_esr(scenario, None, None, "rzf", trials, seed, z)
    record("de_vs_mc", abs(rep.esr - est.mean) / est.mean, 0.05,
           f"DE {rep.esr:.3f} vs MC {est.mean:.3f}")

    # 8. MC determinism across thread counts
    e1 = empirical_esr(scenario, None, None, "rzf", 64, seed, z, threads=1)
    e2 = empirical_esr(scenario, None, None, "rzf", 64, seed, z, threads=4)
    record("mc_thread_determinism", abs(e1.mean - e2.mean), 0.0,
           "bit-identical across 1 and 4 threads")
    return checks


def _iid_fixed_point(u, t, c1, c2, iters=20000):
    """Independent oracle: damped iteration of the scaled i.i.d. ZF system."""
    delta = omega = mu = 1.0
    for _ in range(iters):
        delta_n = 1.0 / (1.0 + c1 * t * omega / (mu * delta) + c1 * u / mu)
        omega_n = 1.0 / (1.0 / delta_n + c2 * t / mu)
        mu_n = t * omega_n + u * delta_n
        if max(abs(delta_n - delta), abs(omega_n - omega), abs(mu_n - mu)) < 1e-14:
            delta, omega, mu = delta_n, omega_n, mu_n
            break
        delta = delta + 0.5 * (delta_n - delta)
        omega = omega + 0.5 * (omega_n - omega)
        mu = mu + 0.5 * (mu_n - mu)
    return mu


def _phase_gradient_deviation(scenario, phi0, _tamper=None) -> float:
    from .channel import herm, phase_matrix, psd_sqrt
    from .fixed_point import solve_rzf_common
    from .rates import sinr_rzf_common
    corr = scenario.correlations
    F, R = corr.F_tot, corr.R_tot
    u, t, p = scenario.u, scenario.t, scenario.p
    z = scenario.dims.K * scenario.sigma2 / scenario.dims.M
    st = SolverSettings(tol=1e-13, max_iter=30000)
    CLroot = psd_sqrt(corr.C_L)

    def esr(phi):
        Phi = phase_matrix(phi, scenario.dims.L)
        C = herm(CLroot @ Phi @ corr.C_R @ Phi.conj().T @ CLroot)
        sol = solve_rzf_common(F, R, C, u, t, z, st)
        return sinr_rzf_common(sol, F, R, C, u, t, p, scenario.sigma2)[0].esr

    Phi0 = phase_matrix(phi0, scenario.dims.L)
    C0 = herm(CLroot @ Phi0 @ corr.C_R @ Phi0.conj().T @ CLroot)
    sol = solve_rzf_common(F, R, C0, u, t, z, st)
    _, so = sinr_rzf_common(sol, F, R, C0, u, t, p, scenario.sigma2)
    g = esr_gradient_phases_common(so, corr.C_L, corr.C_R, phi0,
                                   scenario.sigma2)
    g_fd = fd_gradient(esr, phi0, 1e-5)
    floor = 1e-3 * max(np.abs(g_fd).max(), 1e-12)
    return float(np.max(np.abs(g - g_fd) / np.maximum(np.abs(g_fd), floor)))


def _port_gradient_deviation(scenario, rng) -> float:
    from .channel import herm, psd_sqrt
    from .fixed_point import solve_zf_common
    from .rates import sinr_zf_common
    corr = scenario.correlations
    M = scenario.dims.M
    u, t, p = scenario.u, scenario.t, scenario.p
    Rh = psd_sqrt(corr.R_tot)
    Fh = psd_sqrt(corr.F_tot)
    C = corr.C_L.copy()
    st = SolverSettings(tol=1e-13, max_iter=30000)
    M_tot = corr.R_tot.shape[0]
    s0 = rng.uniform(0.3, 0.9, M_tot)

    def emb(root, s):
        return herm((root * s[None, :]) @ root)

    def esr(s):
        sol = solve_zf_common(emb(Fh, s), emb(Rh, s), C, u, t, st, m_norm=M)
        return sinr_zf_common(sol, u, t, p, scenario.sigma2).esr

    sol = solve_zf_common(emb(Fh, s0), emb(Rh, s0), C, u, t, st, m_norm=M)
    g = esr_gradient_ports_zf_common(sol, Rh, Fh, emb(Rh, s0), emb(Fh, s0),
                                     C, u, t, p, scenario.sigma2)
    g_fd = fd_gradient(esr, s0, 1e-5)
    floor = 1e-3 * max(np.abs(g_fd).max(), 1e-12)
    return float(np.max(np.abs(g - g_fd) / np.maximum(np.abs(g_fd), floor)))
