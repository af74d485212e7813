"""Wigner functions on a phase-space grid and a finite-volume transport solver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import io
from ._kernels import fp_rhs
from .errors import BoundaryLeakError, ConfigurationError, InvalidArgumentError, InvalidComparisonError

FP_SAFETY = 0.8
MAX_FP_STEPS = 2_000_000
LEAK_TOL = 1e-3


@dataclass(frozen=True)
class PhaseGrid:
    """Cell-centered grid; cell (i, j) covers [x_min + i dx, x_min + (i+1) dx) x ..."""

    x_min: float
    x_max: float
    p_min: float
    p_max: float
    nx: int
    np: int

    def __post_init__(self):
        if self.nx < 16 or self.np < 16:
            raise InvalidArgumentError("phase grids need at least 16 bins per axis")
        bounds = (self.x_min, self.x_max, self.p_min, self.p_max)
        if not all(math.isfinite(b) for b in bounds):
            raise InvalidArgumentError("phase-grid bounds must be finite")
        if self.x_max <= self.x_min or self.p_max <= self.p_min:
            raise InvalidArgumentError("phase-grid bounds must be increasing")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.np

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.dx
        ps = self.p_min + (np.arange(self.np) + 0.5) * self.dp
        return xs, ps

    def mesh(self):
        xs, ps = self.centers()
        return np.meshgrid(xs, ps, indexing="ij")

    @classmethod
    def symmetric(cls, x_half: float, p_half: float, nx: int, np_: int) -> "PhaseGrid":
        return cls(-x_half, x_half, -p_half, p_half, nx, np_)


@dataclass(frozen=True)
class WignerField:
    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0
    truncation_mass: float = 0.0

    @property
    def truncated(self) -> bool:
        return self.truncation_mass > 1e-3

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx * self.grid.dp)

    def to_csv(self, path) -> None:
        X, P = self.grid.mesh()
        io.write_csv(path, {"X": X.ravel(), "p": P.ravel(), "value": self.values.ravel()})

    def save_raster(self, path) -> None:
        g = self.grid
        meta = {"x_min": g.x_min, "x_max": g.x_max, "p_min": g.p_min, "p_max": g.p_max,
                "nx": g.nx, "np": g.np, "time": self.time}
        io.write_binary(path, {"values": self.values}, meta)

    @classmethod
    def load_raster(cls, path) -> "WignerField":
        meta, arrays = io.read_binary(path)
        g = PhaseGrid(meta["x_min"], meta["x_max"], meta["p_min"], meta["p_max"], meta["nx"], meta["np"])
        return cls(g, arrays["values"], meta["time"])


def _normalized(grid: PhaseGrid, raw: np.ndarray, time: float = 0.0) -> WignerField:
    mass = raw.sum() * grid.dx * grid.dp
    return WignerField(grid, raw / mass, time, float(max(0.0, 1.0 - mass)))


def _gauss2(X, P, mx, mp, cxx, cxp, cpp):
    det = cxx * cpp - cxp * cxp
    dx, dp = X - mx, P - mp
    q = (cpp * dx * dx - 2 * cxp * dx * dp + cxx * dp * dp) / det
    return np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(det))


def gaussian_wigner(state, grid: PhaseGrid) -> WignerField:
    """Closed-form Gaussian Wigner function, renormalized on the grid."""
    if state.determinant <= 0 or state.cov_xx <= 0:
        raise InvalidArgumentError("gaussian_wigner needs a positive-definite covariance")
    X, P = grid.mesh()
    raw = _gauss2(X, P, state.mean_x, state.mean_p, state.cov_xx, state.cov_xp, state.cov_pp)
    return _normalized(grid, raw)


def cat_wigner(separation: float, grid: PhaseGrid, sigma_x: float = math.sqrt(0.5),
               sigma_p: Optional[float] = None) -> WignerField:
    """Even superposition of two Gaussians a distance ``separation`` apart along X.

    Each component is a minimum-uncertainty packet unless ``sigma_p`` is
    given; the interference term oscillates as cos(separation * p).
    """
    if separation <= 0:
        raise InvalidArgumentError("separation must be positive")
    sp = 0.5 / sigma_x if sigma_p is None else float(sigma_p)
    x0 = 0.5 * separation
    X, P = grid.mesh()
    vx, vp = sigma_x ** 2, sp ** 2
    lobes = _gauss2(X, P, x0, 0.0, vx, 0.0, vp) + _gauss2(X, P, -x0, 0.0, vx, 0.0, vp)
    overlap = math.exp(-2.0 * x0 * x0 * vp)
    cross = 2.0 * _gauss2(X, P, 0.0, 0.0, vx, 0.0, vp) * np.cos(2.0 * x0 * P)
    raw = (lobes + cross) / (2.0 * (1.0 + overlap))
    return _normalized(grid, raw)


def field_moments(field: WignerField):
    """Quadrature moments; returns (GaussianState, normalization)."""
    from .coefficients import GaussianState

    X, P = field.grid.mesh()
    da = field.grid.dx * field.grid.dp
    w = field.values
    norm = float(w.sum() * da)
    mx = float((w * X).sum() * da) / norm
    mp = float((w * P).sum() * da) / norm
    cxx = float((w * (X - mx) ** 2).sum() * da) / norm
    cxp = float((w * (X - mx) * (P - mp)).sum() * da) / norm
    cpp = float((w * (P - mp) ** 2).sum() * da) / norm
    return GaussianState(mx, mp, cxx, cxp, cpp), norm


def negative_mass(field: WignerField) -> float:
    """Integral of the negative part, reported as a positive number."""
    return float(-np.minimum(field.values, 0.0).sum() * field.grid.dx * field.grid.dp)


def fp_time_step(grid: PhaseGrid, mass: float, omega_r_sq: float, a: float, b: float, c: float) -> float:
    """Largest stable explicit step, with the advective and diffusive limits summed."""
    xs, ps = grid.centers()
    vmax = np.max(np.abs(ps)) / mass
    fmax = abs(mass * omega_r_sq) * np.max(np.abs(xs)) + 2.0 * abs(a) * np.max(np.abs(ps))
    rate = (vmax / grid.dx + fmax / grid.dp + 2.0 * mass * abs(c) / grid.dp ** 2
            + 2.0 * abs(b) / (grid.dx * grid.dp))
    return FP_SAFETY / rate if rate > 0 else math.inf


def boundary_mass(field: WignerField, width: int = 2) -> float:
    v = np.abs(field.values)
    inner = v[width:-width, width:-width].sum()
    return float((v.sum() - inner) * field.grid.dx * field.grid.dp)


def evolve_fp(field: WignerField, table, system, t_span: Tuple[float, float],
              frames: Optional[list] = None, frame_every: int = 0) -> WignerField:
    """Explicit SSP-RK3 integration of the transport equation over ``t_span``.

    Coefficients are interpolated linearly from ``table`` at each stage time.
    ``frames``, if given, collects intermediate fields every ``frame_every``
    steps (plus the final one).
    """
    t0, t1 = map(float, t_span)
    ts = table.grid.times
    if t1 < t0 or t0 < ts[0] - 1e-12 or t1 > ts[-1] + 1e-12:
        raise InvalidArgumentError(f"t_span {t_span} outside the coefficient grid [{ts[0]}, {ts[-1]}]")
    g = field.grid
    M = system.mass
    w0 = system.omega_ren ** 2
    if t1 == t0:
        return field
    k0 = max(int(np.searchsorted(ts, t0, side="right")) - 1, 0)
    k1 = int(np.searchsorted(ts, t1, side="left"))
    worst = min(
        fp_time_step(g, M, w0 + table.delta_omega_sq[k], table.a[k], table.b[k], table.c[k])
        for k in range(k0, min(k1, len(ts) - 1) + 1)
    )
    steps = max(1, int(math.ceil((t1 - t0) / worst)))
    if steps > MAX_FP_STEPS:
        raise ConfigurationError(
            f"stable explicit step {worst:.3g} needs {steps} steps; coarsen the grid or shorten t_span"
        )
    h = (t1 - t0) / steps
    xs, ps = g.centers()
    xs = np.ascontiguousarray(xs)
    ps = np.ascontiguousarray(ps)
    w = np.ascontiguousarray(field.values, dtype=float).copy()
    k = np.empty_like(w)
    mass0 = w.sum()

    def rhs(state, t, out):
        dom, a, b, c = table.at(t)
        fp_rhs(state, xs, ps, g.dx, g.dp, M, w0 + dom, a, b, c, out)
        return out

    t = t0
    for step in range(steps):
        rhs(w, t, k)
        w1 = w + h * k
        rhs(w1, t + h, k)
        w2 = 0.75 * w + 0.25 * (w1 + h * k)
        rhs(w2, t + 0.5 * h, k)
        w = (w + 2.0 * (w2 + h * k)) / 3.0
        t = t0 + (step + 1) * h
        if not np.all(np.isfinite(w)):
            raise ConfigurationError(f"transport solver diverged at t = {t:.6g}; refine the time step")
        if frames is not None and frame_every and (step + 1) % frame_every == 0 and step + 1 < steps:
            frames.append(WignerField(g, w.copy(), t))
    out = WignerField(g, w, t1, field.truncation_mass)
    if frames is not None:
        frames.append(out)
    drift = abs(w.sum() - mass0) * g.dx * g.dp
    leak = boundary_mass(out)
    if leak > LEAK_TOL or drift > LEAK_TOL:
        raise BoundaryLeakError(
            f"phase-space mass reached the grid edge ({leak:.3g}) or drifted ({drift:.3g}); enlarge the domain"
        )
    return out


@dataclass(frozen=True)
class ComparisonReport:
    l1_distance: float
    z_scores: np.ndarray
    frac_over_3: float
    max_abs_z: float = field(default=0.0)


def compare_wigner(fld: WignerField, mc) -> ComparisonReport:
    """Weighted L1 distance and per-bin z-scores of an MC histogram against a field.

    When the field grid refines the histogram grid by integer factors over the
    same window, the field is averaged over each histogram bin; otherwise it
    is resampled at the bin centers by bilinear interpolation.  The z-score
    denominator is the MC
    standard error, floored by the Poisson error implied by the field value
    so that empty bins do not produce infinite scores.
    """
    pg = mc.phase_grid
    if (pg.x_max <= fld.grid.x_min or pg.x_min >= fld.grid.x_max
            or pg.p_max <= fld.grid.p_min or pg.p_min >= fld.grid.p_max):
        raise InvalidComparisonError("field and estimate have disjoint phase-space supports")
    fg = fld.grid
    same_window = np.allclose([pg.x_min, pg.x_max, pg.p_min, pg.p_max],
                              [fg.x_min, fg.x_max, fg.p_min, fg.p_max], rtol=0, atol=1e-12)
    if pg == fg:
        ref = fld.values
    elif same_window and fg.nx % pg.nx == 0 and fg.np % pg.np == 0:
        fx, fp = fg.nx // pg.nx, fg.np // pg.np
        ref = fld.values.reshape(pg.nx, fx, pg.np, fp).mean(axis=(1, 3))
    else:
        xs, ps = fld.grid.centers()
        interp = RegularGridInterpolator((xs, ps), fld.values, bounds_error=False, fill_value=0.0)
        X, P = pg.mesh()
        ref = interp(np.stack([X, P], axis=-1))
    area = pg.dx * pg.dp
    diff = mc.values - ref
    l1 = float(np.abs(diff).sum() * area)
    count = max(int(getattr(mc, "count", 0)), 1)
    sd = np.sqrt(np.maximum(mc.std_err ** 2, np.abs(ref) / (count * area)))
    z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), 0.0)
    return ComparisonReport(l1, z, float(np.mean(np.abs(z) > 3.0)), float(np.max(np.abs(z))))
