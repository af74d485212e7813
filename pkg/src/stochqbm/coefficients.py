"""Time-dependent master-equation coefficients and Gaussian moment evolution.

The reduced Wigner function obeys

    dW/dt = {H_R, W} + 2A d(pW)/dp + B d2W/dXdp + M C d2W/dp2,

with H_R = p^2/2M + M Omega_R^2 X^2 / 2 and Omega_R^2 = Omega_ren^2 + dOmega^2.
For Gaussian states this closes on five moments.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, astuple
from typing import List, Optional, Sequence

import numpy as np

from . import io
from .errors import DegenerateBoundaryError, IntegrationFailureError, InvalidArgumentError
from .grid_kernels import InfluenceKernels, SystemParams, TimeGrid, trapezoid_weights
from .volterra import (
    BoundaryPair,
    GreenTable,
    boundary_from_basis,
    build_retarded_green,
    caustic_tolerance,
    homogeneous_basis,
)


@dataclass(frozen=True)
class CoefficientTable:
    grid: TimeGrid
    delta_omega_sq: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    skipped: List[int] = field(default_factory=list)

    def at(self, t: float):
        """Coefficients linearly interpolated at time ``t``."""
        ts = self.grid.times
        return tuple(float(np.interp(t, ts, arr)) for arr in
                     (self.delta_omega_sq, self.a, self.b, self.c))

    def to_csv(self, path) -> None:
        flag = np.zeros(self.grid.n_points, dtype=int)
        flag[list(self.skipped)] = 1
        io.write_csv(path, {
            "t": self.grid.times, "delta_omega_sq": self.delta_omega_sq,
            "a": self.a, "b": self.b, "c": self.c, "skipped_flag": flag,
        })


@dataclass(frozen=True)
class GaussianState:
    mean_x: float
    mean_p: float
    cov_xx: float
    cov_xp: float
    cov_pp: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, arr) -> "GaussianState":
        return cls(*(float(v) for v in arr))

    @property
    def determinant(self) -> float:
        return self.cov_xx * self.cov_pp - self.cov_xp ** 2

    @property
    def is_psd(self) -> bool:
        return self.cov_xx >= 0 and self.cov_pp >= 0 and self.determinant >= 0

    @property
    def uncertainty_ok(self) -> bool:
        """Robertson-Schroedinger bound det >= 1/4 (hbar = 1)."""
        return self.determinant >= 0.25 - 1e-12


def _end_weights(grid: TimeGrid, e: int) -> np.ndarray:
    return trapezoid_weights(e + 1, grid.dt)


def _check_index(kernels: InfluenceKernels, end_index: int) -> int:
    e = int(end_index)
    if not 0 < e < kernels.grid.n_points:
        raise InvalidArgumentError(f"end_index must be in [1, {kernels.grid.n_points - 1}]")
    return e


def frequency_shift(kernels: InfluenceKernels, end_index: int, pair: BoundaryPair) -> float:
    """dOmega^2(t) = (1/M) int H(t,t') [u2(t') - (du2(t)/du1(t)) u1(t')] dt'."""
    e = _check_index(kernels, end_index)
    hx, hxd, _, _ = pair.final_value_basis()
    return float(kernels.apply_h(e, hx, hxd)) / kernels.mass


def dissipation_a(kernels: InfluenceKernels, end_index: int, pair: BoundaryPair) -> float:
    """A(t) = (2 M du1(t))^-1 int H(t,t') u1(t') dt'."""
    e = _check_index(kernels, end_index)
    u1d = pair.u1.v[e]
    if u1d == 0.0 or not np.isfinite(u1d):
        raise DegenerateBoundaryError("du1/dt vanishes at the end time", kernels.grid.times[e], e)
    return 0.5 * float(kernels.apply_h(e, pair.u1.x, pair.u1.v)) / (kernels.mass * u1d)


def _nested(kernels: InfluenceKernels, e: int, response: np.ndarray, g_adv: GreenTable) -> float:
    """int N(t,s) R(s) ds - int H(t,t') int G_adv(t',t'') int N(t'',s) R(s) ds dt'' dt'."""
    s = slice(0, e + 1)
    w = _end_weights(kernels.grid, e)
    q = kernels.N.values[s, s] @ (w * response[s])
    r = g_adv.g[s, s] @ (w * q)
    rd = g_adv.g_dot[s, s] @ (w * q)
    return float(q[e] - kernels.apply_h(e, r, rd))


def diffusion_b(kernels: InfluenceKernels, end_index: int, g_ret: GreenTable, g_adv: GreenTable) -> float:
    """B(t) by nested trapezoid quadrature with G_ret(t, .) as the response."""
    e = _check_index(kernels, end_index)
    return _nested(kernels, e, g_ret.g[e], g_adv)


def diffusion_c(kernels: InfluenceKernels, end_index: int, g_ret: GreenTable, g_adv: GreenTable) -> float:
    """C(t): as B(t) with the time derivative of G_ret(t, .)."""
    e = _check_index(kernels, end_index)
    return _nested(kernels, e, g_ret.g_dot[e], g_adv) / kernels.mass


def _coefficients_at(kernels, e, basis, tol, g_ret):
    """All four coefficients at index ``e`` with the final-value Green function.

    The advanced Green function is applied in factored form,
    G_ret(t', s) - hx(t') G_ret(t, s) - hv(t') dG_ret(t, s), so each end index
    costs a few matrix-vector products instead of an n x n table.
    """
    pair = boundary_from_basis(basis[0], basis[1], e, tol)
    dom = frequency_shift(kernels, e, pair)
    a = dissipation_a(kernels, e, pair)
    hx, hxd, hv, hvd = pair.final_value_basis()
    s = slice(0, e + 1)
    w = _end_weights(kernels.grid, e)
    resp = np.stack([g_ret.g[e, s], g_ret.g_dot[e, s]], axis=1)
    if kernels.n_locality == "local":
        q = np.diag(kernels.N.values)[s, None] * (w[:, None] * resp)
    else:
        q = kernels.N.values[s, s] @ (w[:, None] * resp)
    wq = w[:, None] * q
    ge = g_ret.g[e, s] @ wq
    gde = g_ret.g_dot[e, s] @ wq
    if kernels.h_locality == "local":
        # only the end-point slope enters, and it vanishes identically
        mem = np.zeros(2)
    else:
        r = g_ret.g[s, s] @ wq - np.outer(hx[s], ge) - np.outer(hv[s], gde)
        r[e] = 0.0
        mem = kernels.apply_h(e, r)
    b, c = q[e] - mem
    return dom, a, float(b), float(c) / kernels.mass


def coefficient_table(
    kernels: InfluenceKernels,
    g_ret: Optional[GreenTable] = None,
    threads: int = 1,
) -> CoefficientTable:
    """Coefficients at every grid point; caustic points are interpolated."""
    n = kernels.grid.n_points
    g_ret = g_ret if g_ret is not None else build_retarded_green(kernels, threads)
    basis = homogeneous_basis(kernels)
    tol = caustic_tolerance(kernels)
    out = np.zeros((n, 4))

    def work(indices):
        bad = []
        for e in indices:
            try:
                out[e] = _coefficients_at(kernels, e, basis, tol, g_ret)
            except DegenerateBoundaryError:
                bad.append(int(e))
        return bad

    idx = np.arange(1, n)
    if threads > 1:
        # interleave so the O(e^2) cost is balanced
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, [idx[i::threads] for i in range(threads)]))
        skipped = sorted(i for p in parts for i in p)
    else:
        skipped = work(idx)
    good = np.setdiff1d(np.arange(1, n), skipped)
    if (kernels.h_locality == "local" or kernels.n_locality == "local") and len(good) >= 2:
        # the integrals over [t_i, t] vanish as t -> t_i only for smooth
        # kernels; a delta kernel keeps a finite right limit
        k1, k2 = good[:2]
        out[0] = out[k1] + (out[k1] - out[k2]) * k1 / (k2 - k1)
    if skipped:
        good = np.concatenate([[0], good])
        for j in range(4):
            out[skipped, j] = np.interp(skipped, good, out[good, j])
    return CoefficientTable(kernels.grid, out[:, 0].copy(), out[:, 1].copy(),
                            out[:, 2].copy(), out[:, 3].copy(), skipped)


def moment_rhs(state: GaussianState, coeffs_at_t: Sequence[float], system: SystemParams) -> GaussianState:
    """Time derivative of the five Gaussian moments."""
    dom, a, b, c = coeffs_at_t
    return GaussianState.from_array(_rhs(state.as_array(), dom, a, b, c, system))


def _rhs(y, dom, a, b, c, system):
    M = system.mass
    k = M * (system.omega_ren ** 2 + dom)
    mx, mp, xx, xp, pp = y
    return np.array([
        mp / M,
        -k * mx - 2.0 * a * mp,
        2.0 * xp / M,
        pp / M - k * xx - 2.0 * a * xp + b,
        -2.0 * k * xp - 4.0 * a * pp + 2.0 * M * c,
    ])


def evolve_gaussian(initial: GaussianState, table: CoefficientTable, system: SystemParams) -> List[GaussianState]:
    """Classic RK4 on the table's grid; one state per grid point."""
    grid = table.grid
    dt = grid.dt
    coef = np.stack([table.delta_omega_sq, table.a, table.b, table.c], axis=1)
    y = initial.as_array()
    states = np.empty((grid.n_points, 5))
    states[0] = y
    for k in range(grid.n_points - 1):
        c0 = coef[k]
        c1 = coef[k + 1]
        ch = 0.5 * (c0 + c1)
        k1 = _rhs(y, *c0, system)
        k2 = _rhs(y + 0.5 * dt * k1, *ch, system)
        k3 = _rhs(y + 0.5 * dt * k2, *ch, system)
        k4 = _rhs(y + dt * k3, *c1, system)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        det = y[2] * y[4] - y[3] ** 2
        if not np.all(np.isfinite(y)) or det < -1e-8:
            t = grid.times[k + 1]
            raise IntegrationFailureError(
                f"covariance lost positivity at t = {t:.12g} (det = {det:.3g})", t
            )
        states[k + 1] = y
    return [GaussianState.from_array(s) for s in states]


def states_to_array(states: Sequence[GaussianState]) -> np.ndarray:
    return np.array([s.as_array() for s in states])
