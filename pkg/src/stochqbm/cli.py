"""Command-line runner: configure, run an experiment, emit outputs and a report.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import coefficients as coef
from . import ctp as ctpmod
from . import io
from . import langevin as lmc
from . import phase_space as ps
from . import rng as rngmod
from . import volterra as vg
from .config import KINDS, ExperimentConfig, parse_config
from .errors import ConfigurationError, DegenerateBoundaryError, InvalidArgumentError, QBMError
from .grid_kernels import (
    InfluenceKernels,
    KernelMatrix,
    SystemParams,
    make_time_grid,
    preset_kernels,
    stationarity_defect,
)

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

FP_FRAME_EVERY = 10
# undershoot level of the upwind transport scheme, relative to the initial
# negative mass; rises below it are not resolved
NEGATIVITY_FLOOR = 1e-4


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: Optional[bool]  # None marks an informational row
    detail: str = ""


@dataclass
class RunReport:
    kind: str
    input_digest: str
    timings: Dict[str, float] = field(default_factory=dict)
    manifest: List[Tuple[str, str]] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    error: Optional[Tuple[str, str]] = None
    tolerance_scale: float = 1.0

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed is not False for c in self.checks)

    def check(self, name, value, tolerance, ok, detail=""):
        self.checks.append(Check(name, float(value), float(tolerance), bool(ok), detail))

    def info(self, name, value, detail=""):
        self.checks.append(Check(name, float(value), float("nan"), None, detail))


Artifact = Tuple[str, Callable[[Path], None]]


class _Run:
    """State shared by the stages of one experiment."""

    def __init__(self, cfg: ExperimentConfig, threads: int, tol_scale: float):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.tol = float(tol_scale)
        self.report = RunReport(cfg.kind, cfg.digest, tolerance_scale=self.tol)
        self.artifacts: List[Artifact] = []
        self.grid = make_time_grid(cfg.t_start, cfg.t_end, cfg.n_points)
        self.cache: Dict[str, object] = {}

    # helpers -------------------------------------------------------------

    def timed(self, stage, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except QBMError as exc:
            self.report.error = (stage, f"{type(exc).__name__}: {exc}")
            raise
        finally:
            self.report.timings[stage] = time.perf_counter() - t0

    def emit(self, suffix, writer):
        self.artifacts.append((suffix, writer))

    def out_indices(self) -> List[int]:
        if self.cfg.output_times:
            return sorted({self.grid.index_of(t) for t in self.cfg.output_times})
        n = self.grid.n_points - 1
        return sorted({int(round(n * f)) for f in (0.2, 0.4, 0.6, 0.8, 1.0)})

    # problem definition --------------------------------------------------

    @property
    def kernels(self) -> InfluenceKernels:
        if "kernels" not in self.cache:
            self.cache["kernels"] = self.timed("kernels", self._build_kernels)
        return self.cache["kernels"]

    def _build_kernels(self):
        cfg = self.cfg
        if cfg.preset is not None:
            params = dict(cfg.kernel_params, mass=cfg.mass, omega_ren=cfg.omega_ren)
            return preset_kernels(cfg.preset, params, self.grid)
        h = KernelMatrix.load(cfg.h_file)
        nk = KernelMatrix.load(cfg.n_file)
        if h.grid != self.grid or nk.grid != self.grid:
            raise ConfigurationError("kernel files do not match the [grid] section")
        return InfluenceKernels(SystemParams(cfg.mass, cfg.omega_ren), self.grid, h, nk,
                                cfg.h_locality, cfg.n_locality, cfg.friction, "files")

    @property
    def state0(self) -> coef.GaussianState:
        cfg = self.cfg
        ini = cfg.initial
        w = cfg.omega_ren if cfg.omega_ren > 0 else 1.0
        cxx = ini["cov_xx"] if ini["cov_xx"] is not None else 1.0 / (2 * cfg.mass * w)
        cpp = ini["cov_pp"] if ini["cov_pp"] is not None else cfg.mass * w / 2.0
        return coef.GaussianState(ini["mean_x"], ini["mean_p"], cxx, ini["cov_xp"], cpp)

    @property
    def is_gaussian(self) -> bool:
        return self.cfg.initial["kind"] == "gaussian"

    @property
    def phase_grid(self) -> ps.PhaseGrid:
        pg = self.cfg.phase_grid
        return ps.PhaseGrid.symmetric(pg["x_half"], pg["p_half"], pg["nx"], pg["np"])

    @property
    def hist_grid(self) -> ps.PhaseGrid:
        pg = self.cfg.phase_grid
        return ps.PhaseGrid.symmetric(pg["x_half"], pg["p_half"], pg["hist_bins"], pg["hist_bins"])

    @property
    def initial_field(self) -> ps.WignerField:
        if self.is_gaussian:
            return ps.gaussian_wigner(self.state0, self.phase_grid)
        ini = self.cfg.initial
        sx = ini["sigma_x"] if ini["sigma_x"] is not None else np.sqrt(0.5)
        return ps.cat_wigner(ini["separation"], self.phase_grid, sx)

    @property
    def dist(self) -> lmc.InitialDistribution:
        if self.is_gaussian:
            return lmc.InitialDistribution.from_gaussian(self.state0)
        return lmc.InitialDistribution.from_field(self.initial_field)

    @property
    def g_ret(self) -> vg.GreenTable:
        if "g_ret" not in self.cache:
            self.cache["g_ret"] = self.timed(
                "green_functions", lambda: vg.build_retarded_green(self.kernels, self.threads))
        return self.cache["g_ret"]

    @property
    def table(self) -> coef.CoefficientTable:
        if "table" not in self.cache:
            self.cache["table"] = self.timed(
                "coefficients", lambda: coef.coefficient_table(self.kernels, self.g_ret, self.threads))
        return self.cache["table"]

    @property
    def states(self):
        if "states" not in self.cache:
            if not self.is_gaussian:
                # moments of the tabulated field seed the moment equations
                s0, _ = ps.field_moments(self.initial_field)
            else:
                s0 = self.state0
            self.cache["states"] = self.timed(
                "moment_equations", lambda: coef.evolve_gaussian(s0, self.table, self.kernels.system))
        return self.cache["states"]

    def ensemble(self, store_noise=False) -> lmc.TrajectoryEnsemble:
        # the full cross-check needs the noise histories, so it keeps them
        # from the first run instead of simulating twice
        store = store_noise or self.cfg.kind == "full_crosscheck"
        ens = self.cache.get("ensemble")
        if ens is None or (store and ens.noise is None):
            ens = self.timed("monte_carlo", lambda: lmc.run_ensemble(
                self.kernels, self.dist, self.cfg.count, self.cfg.seed, self.threads, store))
            self.cache["ensemble"] = ens
        return ens


# stages -------------------------------------------------------------------

def _stage_kernels(run: _Run):
    k = run.kernels
    rep = run.report
    run.emit("kernel_H.txt", k.H.save)
    run.emit("kernel_N.txt", k.N.save)
    n = k.N.values
    rep.check("noise_kernel_symmetric", np.max(np.abs(n - n.T)), 0.0, np.array_equal(n, n.T))
    rep.check("noise_kernel_psd", float(k.N.is_psd()), 1.0, k.N.is_psd(), "jitter 1e-10 max|N|")
    upper = np.max(np.abs(np.triu(k.H.values, 1))) if k.grid.n_points > 1 else 0.0
    rep.check("dissipation_kernel_causal", upper, 0.0, upper == 0.0)
    if k.n_locality == "nonlocal":
        d = stationarity_defect(k.N)
        rep.check("noise_kernel_stationary", d, 1e-10 * run.tol, d <= 1e-10 * run.tol)


def _stage_greens(run: _Run):
    k, g = run.kernels, run.g_ret
    rep = run.report
    run.emit("green_retarded.txt", g.save)
    dt = k.grid.dt
    rep.check("green_equal_time_value", np.max(np.abs(np.diag(g.g))), 0.0, not np.any(np.diag(g.g)))
    slope = np.max(np.abs(np.diag(g.g_dot) - 1.0 / k.mass))
    rep.check("green_equal_time_slope", slope, 1e-12 * run.tol, slope <= 1e-12 * run.tol)
    gap = vg.representation_gap(k, g)
    if k.h_locality == "local":
        rep.check("green_forward_vs_two_solution", gap, 10 * dt ** 2 * run.tol, gap <= 10 * dt ** 2 * run.tol)
    else:
        rep.info("green_forward_vs_two_solution", gap, "memory kernel: two-solution form not exact")
    e = k.grid.n_points - 1
    try:
        adv = vg.build_advanced_green(k, e, "volterra", g_ret=g)
        run.emit("green_advanced_final.txt", adv.save)
    except DegenerateBoundaryError as exc:
        rep.notes.append(f"advanced Green function at the final time skipped: {exc}")


def _stage_coefficients(run: _Run):
    k, tab = run.kernels, run.table
    rep = run.report
    run.emit("coefficients.csv", tab.to_csv)
    if tab.skipped:
        rep.notes.append(f"caustic grid indices interpolated: {tab.skipped}")
    inner = np.setdiff1d(np.arange(1, k.grid.n_points), tab.skipped)
    cfg = run.cfg
    if cfg.preset == "free":
        worst = max(np.max(np.abs(arr)) for arr in (tab.delta_omega_sq, tab.a, tab.b, tab.c))
        rep.check("coefficients_free_vanish", worst, 1e-10 * run.tol, worst <= 1e-10 * run.tol)
    elif cfg.preset == "caldeira_leggett_highT":
        gam, temp = cfg.kernel_params["gamma"], cfg.kernel_params["temperature"]
        tol = 1e-8 * run.tol
        for name, arr, ref in (("delta_omega_sq", tab.delta_omega_sq, 0.0), ("a", tab.a, gam),
                               ("b", tab.b, 0.0), ("c", tab.c, 2 * gam * temp)):
            dev = np.max(np.abs(arr[inner] - ref))
            rep.check(f"coefficients_local_limit_{name}", dev, tol, dev <= tol)
    # dissipation and frequency shift must not depend on the noise kernel
    zero_n = KernelMatrix(k.grid, np.zeros_like(k.N.values), "noise", "symmetric")
    other = coef.coefficient_table(k.with_noise(zero_n), run.g_ret, run.threads)
    same = np.array_equal(other.a, tab.a) and np.array_equal(other.delta_omega_sq, tab.delta_omega_sq)
    diff = max(np.max(np.abs(other.a - tab.a)), np.max(np.abs(other.delta_omega_sq - tab.delta_omega_sq)))
    rep.check("coefficients_noise_independent_a_shift", diff, 0.0, same)


def _moments_csv(times, states, errs=None):
    cols = {"t": times}
    names = ("mean_x", "mean_p", "cov_xx", "cov_xp", "cov_pp")
    arr = np.array([s.as_array() for s in states])
    for j, nm in enumerate(names):
        cols[nm] = arr[:, j]
    if errs is not None:
        earr = np.array([s.as_array() for s in errs])
        for j, nm in enumerate(names):
            cols[nm + "_err"] = earr[:, j]
    return lambda path: io.write_csv(path, cols)


def _stage_moments(run: _Run):
    states = run.states
    times = run.grid.times
    run.emit("moments_ode.csv", _moments_csv(times, states))
    worst = min(s.determinant for s in states)
    run.report.info("moment_ode_min_determinant", worst,
                    "uncertainty bound det >= 1/4 " + ("holds" if worst >= 0.25 - 1e-9 else "violated"))


def _stage_simulate(run: _Run, save_ensemble=False):
    ens = run.ensemble()
    idx = run.out_indices()
    est = [lmc.estimate_moments(ens, k) for k in idx]
    run.emit("moments_mc.csv", _moments_csv(run.grid.times[idx], [e[0] for e in est], [e[1] for e in est]))
    if save_ensemble:
        run.emit("ensemble.bin", ens.save)
    if run.is_gaussian:
        states = run.states
        worst = 0.0
        for k, (m, e) in zip(idx, est):
            z = np.abs(m.as_array() - states[k].as_array()) / np.maximum(e.as_array(), 1e-300)
            worst = max(worst, float(np.max(z)))
        tol = 3.0 * run.tol
        run.report.check("langevin_ensemble->moment_equations", worst, tol, worst <= tol,
                         "max |MC - ODE| / standard error over output times and moments")


def _stage_wigner(run: _Run):
    ens = run.ensemble()
    hg = run.hist_grid
    for k in run.out_indices():
        est = lmc.estimate_wigner(ens, k, hg)
        run.emit(f"wigner_mc_t{k:06d}.csv", est.to_csv)
        run.report.info(f"wigner_mc_window_mass_t{k}", est.normalization,
                        f"standard error {io.fmt(est.normalization_err)}")


def _fp_frames(run: _Run):
    if "fp" in run.cache:
        return run.cache["fp"]

    def go():
        fields = []
        cur = run.initial_field
        negs = [ps.negative_mass(cur)]
        t_prev = run.grid.t_start
        for k in run.out_indices():
            t = run.grid.times[k]
            frames = []
            cur = ps.evolve_fp(cur, run.table, run.kernels.system, (t_prev, t), frames, FP_FRAME_EVERY)
            negs += [ps.negative_mass(f) for f in frames]
            fields.append((k, cur))
            t_prev = t
        run.cache["fp_negativity"] = np.array(negs)
        return fields

    run.cache["fp"] = run.timed("fokker_planck", go)
    return run.cache["fp"]


def _stage_fp(run: _Run):
    fields = _fp_frames(run)
    f0 = run.initial_field
    rows = []
    for k, f in fields:
        run.emit(f"wigner_fp_t{k:06d}.bin", f.save_raster)
        m, nrm = ps.field_moments(f)
        rows.append((run.grid.times[k], *m.as_array(), nrm, ps.negative_mass(f)))
    arr = np.array(rows)
    names = ("t", "mean_x", "mean_p", "cov_xx", "cov_xp", "cov_pp", "normalization", "negative_mass")
    run.emit("fp_summary.csv", lambda p: io.write_csv(p, {nm: arr[:, j] for j, nm in enumerate(names)}))
    rep = run.report
    if run.is_gaussian:
        worst = 0.0
        for k, f in fields:
            m, _ = ps.field_moments(f)
            worst = max(worst, moment_relative_error(m, run.states[k]))
        tol = 0.01 * run.tol
        rep.check("transport_grid->moment_equations", worst, tol, worst <= tol,
                  "relative, floors sqrt(cov_xx) for X, sqrt(cov_pp) for p, sqrt(cov_xx cov_pp) for cov_xp")
    else:
        neg0 = ps.negative_mass(f0)
        negs = [ps.negative_mass(f) for _, f in fields]
        k = run.kernels
        if not np.any(k.N.values) and not np.any(k.H.values) and k.friction == 0:
            loss = max(abs(1 - v / neg0) for v in negs)
            tol = 0.02 * run.tol
            rep.check("transport_grid_free_negativity_retained", loss, tol, loss <= tol)
        elif run.cfg.preset == "caldeira_leggett_highT":
            seq = run.cache["fp_negativity"]
            rises = float(max(0.0, np.max(np.diff(seq))))
            tol = NEGATIVITY_FLOOR * neg0 * run.tol
            rep.check("transport_grid_negativity_decreasing", rises, tol, rises <= tol,
                      f"largest rise over {len(seq)} frames")


def moment_relative_error(m: coef.GaussianState, ref: coef.GaussianState) -> float:
    """Relative deviation of five moments with scale floors from the reference widths."""
    sx = np.sqrt(max(ref.cov_xx, 0.0))
    sp = np.sqrt(max(ref.cov_pp, 0.0))
    scales = (max(abs(ref.mean_x), sx), max(abs(ref.mean_p), sp), ref.cov_xx,
              max(abs(ref.cov_xp), sx * sp), ref.cov_pp)
    d = np.abs(m.as_array() - ref.as_array())
    return float(np.max(d / np.maximum(scales, 1e-300)))


def _stage_correlators(run: _Run):
    if not run.is_gaussian:
        run.report.notes.append("correlators: closed-form route needs Gaussian initial data; skipped")
        return
    k, g, dist = run.kernels, run.g_ret, run.dist
    ens = run.ensemble()
    idx = run.out_indices()
    rows = []
    worst = 0.0
    for a in idx:
        for b in idx:
            ex = ctpmod.symmetrized_two_point(k, dist, g, a, b).value
            mc, err = lmc.stochastic_correlator(ens, a, b)
            z = abs(mc - ex) / max(err, 1e-300)
            worst = max(worst, z)
            rows.append((run.grid.times[a], run.grid.times[b], ex, mc, err, z))
    arr = np.array(rows)
    names = ("t1", "t2", "deterministic", "monte_carlo", "std_err", "z")
    run.emit("two_point.csv", lambda p: io.write_csv(p, {nm: arr[:, j] for j, nm in enumerate(names)}))
    tol = 3.0 * run.tol
    run.report.check("symmetrized_two_point->stochastic_correlator", worst, tol, worst <= tol,
                     f"{len(rows)} time pairs")
    cfg = run.cfg
    st = run.state0
    w = cfg.omega_ren
    if cfg.preset == "free" and w > 0 and st == coef.GaussianState(0, 0, 1 / (2 * cfg.mass * w), 0, cfg.mass * w / 2):
        dev = max(abs(r[2] - np.cos(w * (r[0] - r[1])) / (2 * cfg.mass * w)) for r in rows)
        run.report.check("two_point_free_vacuum_closed_form", dev, 1e-3 * run.tol, dev <= 1e-3 * run.tol)
    # four-point Wick structure of the ensemble
    a, b = idx[0], idx[-1]
    four = (a, a, b, b)
    det4 = ctpmod.n_point_symmetrized(k, dist, g, four).value
    mc4, err4 = lmc.stochastic_npoint(ens, four)
    z4 = abs(mc4 - det4) / max(err4, 1e-300)
    run.report.check("four_point_wick->stochastic_correlator", z4, tol, z4 <= tol)


def _stage_ctp(run: _Run):
    if not run.is_gaussian:
        run.report.notes.append("ctp: closed-form route needs Gaussian initial data; skipped")
        return
    k, g, dist = run.kernels, run.g_ret, run.dist
    n = k.grid.n_points
    rep = run.report
    z00 = ctpmod.eval_ctp(k, dist, ctpmod.CTPSources.zeros(n), g)
    rep.check("ctp_normalization", abs(z00 - 1), 1e-12 * run.tol, abs(z00 - 1) <= 1e-12 * run.tol)
    gen = rngmod.stream(run.cfg.seed, 0, rngmod.CORRELATOR)
    ts = (k.grid.times - k.grid.t_start) / (k.grid.t_end - k.grid.t_start)
    modes = np.array([np.sin((m + 1) * np.pi * ts) for m in range(3)])
    scale = run.cfg.ctp["source_scale"]
    ens = run.ensemble()
    rows = []
    worst_z, worst_abs = 0.0, 0.0
    for j in range(int(run.cfg.ctp["n_sources"])):
        kd = scale * gen.standard_normal(3) @ modes
        js = scale * gen.standard_normal(3) @ modes
        z = ctpmod.eval_ctp(k, dist, ctpmod.CTPSources(np.zeros(n), kd), g)
        zs = ctpmod.eval_ctp(k, dist, ctpmod.CTPSources(js, kd), g)
        worst_abs = max(worst_abs, abs(abs(zs) - abs(z)))
        mc, err = ctpmod.mc_characteristic(ens, kd)
        zz = abs(mc - z) / max(err, 1e-300)
        worst_z = max(worst_z, zz)
        rows.append((j, z.real, z.imag, mc.real, mc.imag, err, zz))
    arr = np.array(rows)
    names = ("source", "z_real", "z_imag", "mc_real", "mc_imag", "std_err", "z_score")
    run.emit("ctp_characteristic.csv", lambda p: io.write_csv(p, {nm: arr[:, i] for i, nm in enumerate(names)}))
    rep.check("ctp_modulus_independent_of_j_sigma", worst_abs, 1e-12 * run.tol, worst_abs <= 1e-12 * run.tol)
    rep.check("generating_functional->characteristic_functional", worst_z, 3.0 * run.tol,
              worst_z <= 3.0 * run.tol)
    idx = run.out_indices()
    a, b = idx[len(idx) // 2], idx[-1]
    d2 = ctpmod.ctp_derivative_correlator(k, dist, g, (a, b)).value
    ref = ctpmod.symmetrized_two_point(k, dist, g, a, b).value
    rel = abs(d2 - ref) / max(abs(ref), 1e-300)
    rep.check("functional_derivative->two_point", rel, 1e-6 * run.tol, rel <= 1e-6 * run.tol)


def _stage_markov(run: _Run):
    if not run.is_gaussian:
        run.report.notes.append("markov_gap: needs Gaussian initial data; skipped")
        return
    k, g, dist, tab = run.kernels, run.g_ret, run.dist, run.table
    idx = run.out_indices()
    pairs = [(a, b) for i, a in enumerate(idx) for b in idx[i + 1:]]
    scan = ctpmod.correlator_scan(k, dist, tab, pairs, g)
    run.emit("markov_gap.csv", scan.to_csv)
    dt = k.grid.dt
    ratios = []
    for (a, b), gap in zip(pairs, scan.gap):
        s1 = ctpmod.symmetrized_two_point(k, dist, g, a, a).value
        s2 = ctpmod.symmetrized_two_point(k, dist, g, b, b).value
        ratios.append(gap / (10 * dt ** 2 * np.sqrt(max(s1 * s2, 1e-300))))
    worst = max(ratios) if ratios else 0.0
    local = k.h_locality == "local" and k.n_locality == "local"
    if local:
        run.report.check("markov_gap_local_vanishes", worst, run.tol, worst <= run.tol,
                         "gap / (10 dt^2 sqrt(<X1^2><X2^2>))")
    else:
        run.report.info("markov_gap_nonlocal_ratio", worst, "gap / (10 dt^2 sqrt(<X1^2><X2^2>))")


def _stage_novikov(run: _Run):
    k = run.kernels
    ens = run.ensemble(store_noise=True)
    idx = run.out_indices()
    worst = 0.0
    for a, b in ((idx[0], idx[-1]), (idx[len(idx) // 2], idx[-1]), (idx[-1], idx[0])):
        lhs, rhs, err = lmc.novikov_check(k, ens, a, b, run.g_ret)
        if err == 0.0:
            z = 0.0 if lhs == rhs else np.inf
        else:
            z = abs(lhs - rhs) / err
        worst = max(worst, z)
    run.report.check("noise_source->response_novikov", worst, 3.0 * run.tol, worst <= 3.0 * run.tol)


def _stage_wigner_crosscheck(run: _Run):
    fields = dict(_fp_frames(run))
    ens = run.ensemble()
    hg = run.hist_grid
    worst = 0.0
    negative_bin = None
    for k, f in fields.items():
        est = lmc.estimate_wigner(ens, k, hg)
        rep = ps.compare_wigner(f, est)
        worst = max(worst, rep.frac_over_3)
        if not run.is_gaussian:
            j = np.unravel_index(np.argmin(est.values), est.values.shape)
            sig = est.values[j] / max(est.std_err[j], 1e-300)
            negative_bin = sig if negative_bin is None else min(negative_bin, sig)
    tol = 0.01 * run.tol
    run.report.check("langevin_histogram->transport_grid", worst, tol, worst <= tol,
                     "fraction of bins with |z| > 3")
    if negative_bin is not None:
        run.report.check("langevin_histogram_negative_bin", negative_bin, -3.0, negative_bin <= -3.0,
                         "most negative bin in units of its standard error")


STAGES = {
    "kernels": [_stage_kernels],
    "greens": [_stage_greens],
    "coefficients": [_stage_coefficients],
    "simulate": [lambda r: _stage_simulate(r, save_ensemble=True)],
    "wigner": [_stage_wigner],
    "correlators": [_stage_correlators],
    "ctp": [_stage_ctp],
    "fokker_planck": [_stage_moments, _stage_fp],
    "markov_gap": [_stage_markov],
    "full_crosscheck": [_stage_kernels, _stage_greens, _stage_coefficients, _stage_moments,
                        _stage_simulate, _stage_fp, _stage_wigner_crosscheck, _stage_correlators,
                        _stage_ctp, _stage_markov, _stage_novikov],
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1, tolerance_scale: float = 1.0):
    """Run every stage of ``cfg.kind``; returns (report, artifacts).

    Numerical failures are recorded in the report with the stage name and
    re-raised so the caller can map them to an exit status.
    """
    run = _Run(cfg, threads, tolerance_scale)
    for stage in STAGES[cfg.kind]:
        name = stage.__name__.lstrip("_").replace("stage_", "") if hasattr(stage, "__name__") else cfg.kind
        try:
            stage(run)
        except QBMError as exc:
            if run.report.error is None:
                run.report.error = (name, f"{type(exc).__name__}: {exc}")
            raise RunFailed(run.report, run.artifacts) from exc
    return run.report, run.artifacts


class RunFailed(Exception):
    def __init__(self, report, artifacts):
        super().__init__(report.error[1] if report.error else "run failed")
        self.report = report
        self.artifacts = artifacts


def preflight(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out_dir, prefix=".probe"):
            pass
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from None


def _summary_lines(report: RunReport, cfg: ExperimentConfig) -> List[str]:
    lines = [f"experiment: {report.kind}", f"input digest: {report.input_digest}",
             f"tolerance scale: {io.fmt(report.tolerance_scale)}", "", "configuration:"]
    lines += ["  " + s for s in cfg.describe()]
    lines += ["", "checks (name | value | tolerance | result):"]
    for c in report.checks:
        res = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        tol = "-" if c.passed is None else io.fmt(c.tolerance)
        extra = f"  [{c.detail}]" if c.detail else ""
        lines.append(f"  {c.name} | {io.fmt(c.value)} | {tol} | {res}{extra}")
    if report.notes:
        lines += ["", "notes:"] + ["  " + s for s in report.notes]
    if report.error:
        lines += ["", f"error in stage {report.error[0]}: {report.error[1]}"]
    lines += ["", "files (sha256):"] + [f"  {name} {digest}" for name, digest in report.manifest]
    lines += ["", "overall: " + ("PASS" if report.passed else "FAIL")]
    return lines


def emit_outputs(report: RunReport, artifacts: List[Artifact], out_dir, cfg: ExperimentConfig) -> List[Tuple[str, str]]:
    """Write artifacts, the summary and a timing file; returns the manifest.

    Names derive from the experiment kind and the input digest, so repeated
    runs of one configuration overwrite rather than accumulate.  Timings
    live only in the ``*_timings.json`` file.
    """
    out = Path(out_dir)
    prefix = f"{report.kind}_{report.input_digest[:12]}"
    report.manifest = []
    for suffix, writer in artifacts:
        name = f"{prefix}_{suffix}"
        writer(out / name)
        report.manifest.append((name, io.file_digest(out / name)))
    summary = out / f"{prefix}_summary.txt"
    summary.write_text("\n".join(_summary_lines(report, cfg)) + "\n", encoding="utf-8", newline="\n")
    timings = {k: round(v, 6) for k, v in report.timings.items()}
    (out / f"{prefix}_timings.json").write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n",
                                                 encoding="utf-8", newline="\n")
    return report.manifest + [(summary.name, io.file_digest(summary))]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochqbm", description=(
        "Stochastic and master-equation routes for quantum Brownian motion with a Gaussian bath."))
    p.add_argument("verb", choices=("run",) + KINDS,
                   help="experiment to run; 'run' uses [experiment] kind from the config")
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--output-dir", help="overrides [experiment] output_dir")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="overrides [experiment] seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
    p.add_argument("--tolerance-scale", type=float, default=1.0,
                   help="multiplier for every check tolerance (default 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.verb != "run":
            cfg = dataclasses.replace(cfg, kind=args.verb)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        if not args.tolerance_scale > 0:
            raise ConfigurationError("--tolerance-scale must be > 0")
        out_dir = Path(args.output_dir or cfg.output_dir)
        preflight(out_dir)
    except (ConfigurationError, InvalidArgumentError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    code = EXIT_OK
    try:
        report, artifacts = run_experiment(cfg, args.threads, args.tolerance_scale)
    except RunFailed as exc:
        report, artifacts = exc.report, exc.artifacts
        cause = exc.__cause__
        code = EXIT_CONFIG if isinstance(cause, (ConfigurationError, InvalidArgumentError)) else EXIT_NUMERIC
    emit_outputs(report, artifacts, out_dir, cfg)
    for c in report.checks:
        res = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        print(f"{res:4s} {c.name}: {io.fmt(c.value)}")
    if report.error:
        print(f"error in stage {report.error[0]}: {report.error[1]}", file=sys.stderr)
    if code == EXIT_OK and not report.passed:
        code = EXIT_ASSERT
    return code


if __name__ == "__main__":
    sys.exit(main())
