"""Solutions of the nonlocal Langevin operator.

    (L X)(t) = M (X'' + omega_ren^2 X)(t) + int_{t_i}^t H(t, t') X(t') dt'

Forward stepping is velocity Verlet with the memory integral evaluated by the
trapezoid rule; local dissipation acts through the velocity channel and is
treated implicitly.  Everything here is linear in the data, exactly, at the
discrete level.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import io
from ._kernels import volterra_verlet
from .errors import DegenerateBoundaryError, InvalidArgumentError
from .grid_kernels import InfluenceKernels, TimeGrid, trapezoid_weights


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class GreenTable:
    grid: TimeGrid
    g: np.ndarray
    g_dot: np.ndarray
    causality: str  # "retarded" | "advanced"
    end_index: Optional[int] = None
    method: str = "forward"

    def save(self, path) -> None:
        header = {"t_start": self.grid.t_start, "t_end": self.grid.t_end,
                  "kind": "green", "causality": self.causality, "method": self.method}
        if self.end_index is not None:
            header["end_index"] = self.end_index
        io.write_matrix(path, self.g, header)


@dataclass(frozen=True)
class BoundaryPair:
    u1: Trajectory
    u2: Trajectory
    end_index: int
    condition: float

    def final_value_basis(self):
        """Homogeneous solutions with data (1, 0) and (0, 1) at the end time.

        Returns ``(hx, hx_dot, hv, hv_dot)``; these are the combinations that
        multiply X and p/M in the final-condition representation of a path.
        """
        e = self.end_index
        u1d = self.u1.v[e]
        if u1d == 0.0:
            raise DegenerateBoundaryError(
                "du1/dt vanishes at the end time", self.u1.grid.times[e], e
            )
        ratio = self.u2.v[e] / u1d
        hx = self.u2.x - ratio * self.u1.x
        hx_dot = self.u2.v - ratio * self.u1.v
        hv = self.u1.x / u1d
        hv_dot = self.u1.v / u1d
        return hx, hx_dot, hv, hv_dot


def _memory(kernels: InfluenceKernels) -> np.ndarray:
    return np.ascontiguousarray(kernels.memory_matrix() / kernels.mass)


def integrate_batch(kernels: InfluenceKernels, x0, v0, start=None, source=None):
    """Forward-integrate a batch of members; returns (x, v) with shape (n, B).

    ``source`` is the force xi (not divided by M), shape (n, B).  It must vanish
    before each member's start index.
    """
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0, dtype=float)))
    v0 = np.ascontiguousarray(np.atleast_1d(np.asarray(v0, dtype=float)))
    nb = x0.shape[0]
    n = kernels.grid.n_points
    start = np.zeros(nb, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
    src = None
    if source is not None:
        src = np.ascontiguousarray(np.asarray(source, dtype=float).reshape(n, nb) / kernels.mass)
    out_x = np.empty((n, nb))
    out_v = np.empty((n, nb))
    volterra_verlet(
        _memory(kernels), kernels.system.omega_ren ** 2, kernels.friction / kernels.mass,
        kernels.grid.dt, src, x0, v0, start, out_x, out_v,
    )
    return out_x, out_v


def solve_homogeneous_ivp(kernels: InfluenceKernels, x0: float, v0: float) -> Trajectory:
    x, v = integrate_batch(kernels, [x0], [v0])
    return Trajectory(kernels.grid, x[:, 0], v[:, 0])


def solve_inhomogeneous(kernels: InfluenceKernels, source, x0: float = 0.0, v0: float = 0.0) -> Trajectory:
    source = np.asarray(source, dtype=float)
    if source.shape != (kernels.grid.n_points,):
        raise InvalidArgumentError(
            f"source must have length {kernels.grid.n_points}, got shape {source.shape}"
        )
    x, v = integrate_batch(kernels, [x0], [v0], source=source[:, None])
    return Trajectory(kernels.grid, x[:, 0], v[:, 0])


def propagate_x0(kernels: InfluenceKernels, x_i: float, p_i: float) -> Trajectory:
    """Deterministic part X_0 of every Langevin path."""
    return solve_homogeneous_ivp(kernels, x_i, p_i / kernels.mass)


def homogeneous_basis(kernels: InfluenceKernels):
    """IVP solutions with initial data (1, 0) and (0, 1)."""
    x, v = integrate_batch(kernels, [1.0, 0.0], [0.0, 1.0])
    g = kernels.grid
    return Trajectory(g, x[:, 0], v[:, 0]), Trajectory(g, x[:, 1], v[:, 1])


def build_retarded_green(kernels: InfluenceKernels, threads: int = 1) -> GreenTable:
    """Column l is the response started at t_l with G = 0 and dG/dt = 1/M."""
    n = kernels.grid.n_points
    inv_m = 1.0 / kernels.mass
    cols = np.arange(n)

    def run(chunk):
        return integrate_batch(kernels, np.zeros(len(chunk)), np.full(len(chunk), inv_m), chunk)

    if threads > 1 and n > 64:
        chunks = np.array_split(cols, threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
        g = np.concatenate([p[0] for p in parts], axis=1)
        gd = np.concatenate([p[1] for p in parts], axis=1)
    else:
        g, gd = run(cols)
    g[np.diag_indices(n)] = 0.0
    return GreenTable(kernels.grid, g, gd, "retarded")


def _frequency_scale(kernels: InfluenceKernels) -> float:
    mem = np.max(np.sum(np.abs(kernels.memory_matrix()), axis=1)) / kernels.mass
    span = kernels.grid.t_end - kernels.grid.t_start
    return float(np.sqrt(kernels.system.omega_ren ** 2 + mem + (np.pi / span) ** 2))


def caustic_tolerance(kernels: InfluenceKernels) -> float:
    """Relative size below which u2(t) counts as vanishing (Verlet phase error budget)."""
    return 10.0 * (kernels.grid.dt * _frequency_scale(kernels)) ** 2


def boundary_from_basis(v1: Trajectory, v2: Trajectory, end_index: int, tol: float) -> BoundaryPair:
    grid = v1.grid
    e = int(end_index)
    if not 0 < e < grid.n_points:
        raise InvalidArgumentError(f"end_index must be in [1, {grid.n_points - 1}], got {end_index}")
    # columns: coefficients of v1, v2; rows: value at t_i and at t_e
    m = np.array([[v1.x[0], v2.x[0]], [v1.x[e], v2.x[e]]])
    scale = max(np.max(np.abs(v2.x[: e + 1])), 1e-300)
    cond = float(np.linalg.cond(m))
    if abs(v2.x[e]) <= tol * scale or not np.isfinite(cond):
        raise DegenerateBoundaryError(
            f"boundary solve is singular at t = {grid.times[e]:.12g} (caustic; cond = {cond:.3g})",
            grid.times[e], e,
        )
    c1 = np.linalg.solve(m, [1.0, 0.0])
    c2 = np.linalg.solve(m, [0.0, 1.0])
    u1 = Trajectory(grid, c1[0] * v1.x + c1[1] * v2.x, c1[0] * v1.v + c1[1] * v2.v)
    u2 = Trajectory(grid, c2[0] * v1.x + c2[1] * v2.x, c2[0] * v1.v + c2[1] * v2.v)
    return BoundaryPair(u1, u2, e, cond)


def boundary_solutions(kernels: InfluenceKernels, end_index: int, basis=None) -> BoundaryPair:
    """Homogeneous u1, u2 with u1(t_i)=1, u1(t)=0 and u2(t_i)=0, u2(t)=1."""
    v1, v2 = basis if basis is not None else homogeneous_basis(kernels)
    return boundary_from_basis(v1, v2, end_index, caustic_tolerance(kernels))


def build_advanced_green(
    kernels: InfluenceKernels,
    end_index: int,
    method: str = "two_solution",
    pair: Optional[BoundaryPair] = None,
    g_ret: Optional[GreenTable] = None,
) -> GreenTable:
    """Green function for the final-value problem on [t_i, t_end_index].

    ``two_solution`` evaluates the closed form built from u1, u2 (exact when
    the operator is a second-order ODE).  ``volterra`` subtracts from G_ret the
    homogeneous solution that matches its final data, which is exact for any
    memory kernel but is no longer supported only above the diagonal.
    """
    pair = pair if pair is not None else boundary_solutions(kernels, end_index)
    e = pair.end_index
    n = kernels.grid.n_points
    M = kernels.mass
    g = np.zeros((n, n))
    gd = np.zeros((n, n))
    if method == "two_solution":
        u1, u1d, u2, u2d = pair.u1.x, pair.u1.v, pair.u2.x, pair.u2.v
        s = slice(0, e + 1)
        wr = u1d[s] * u2[s] - u2d[s] * u1[s]
        num = np.outer(u1[s], u2[s]) - np.outer(u2[s], u1[s])
        numd = np.outer(u1d[s], u2[s]) - np.outer(u2d[s], u1[s])
        mask = np.triu(np.ones((e + 1, e + 1)), 1)
        g[s, s] = -(num / wr[None, :]) * mask / M
        gd[s, s] = -(numd / wr[None, :]) * mask / M
    elif method == "volterra":
        g_ret = g_ret if g_ret is not None else build_retarded_green(kernels)
        hx, hxd, hv, hvd = pair.final_value_basis()
        s = slice(0, e + 1)
        ge, gde = g_ret.g[e, s], g_ret.g_dot[e, s]
        g[s, s] = g_ret.g[s, s] - np.outer(hx[s], ge) - np.outer(hv[s], gde)
        gd[s, s] = g_ret.g_dot[s, s] - np.outer(hxd[s], ge) - np.outer(hvd[s], gde)
        # final data vanish identically; remove roundoff
        g[e, s] = 0.0
        gd[e, s] = 0.0
    else:
        raise InvalidArgumentError(f"unknown advanced-Green method {method!r}")
    return GreenTable(kernels.grid, g, gd, "advanced", e, method)


def retarded_green_two_solution(kernels: InfluenceKernels, basis=None) -> GreenTable:
    """G_ret from two homogeneous solutions (valid for local dynamics).

    The expression is invariant under a change of basis, so the IVP basis is
    used directly and no caustic can occur.
    """
    v1, v2 = basis if basis is not None else homogeneous_basis(kernels)
    wr = v1.v * v2.x - v2.v * v1.x
    num = np.outer(v1.x, v2.x) - np.outer(v2.x, v1.x)
    numd = np.outer(v1.v, v2.x) - np.outer(v2.v, v1.x)
    mask = np.tril(np.ones_like(num), -1)
    M = kernels.mass
    return GreenTable(kernels.grid, num / wr[None, :] * mask / M,
                      numd / wr[None, :] * mask / M, "retarded", method="two_solution")


def compose_trajectory(kernels: InfluenceKernels, g_ret: GreenTable, source, x_i, p_i) -> Trajectory:
    """X = X_0 + int G_ret xi, with the integral done by the trapezoid rule.

    Without local damping this reproduces ``solve_inhomogeneous`` to roundoff.
    """
    x0 = propagate_x0(kernels, x_i, p_i)
    n, dt = kernels.grid.n_points, kernels.grid.dt
    w = trapezoid_weights(n, dt)
    src = np.asarray(source, dtype=float)
    # G(k, l) = 0 for l >= k, so the upper end point drops out of x
    x = x0.x + g_ret.g @ (w * src)
    v = x0.v + g_ret.g_dot @ (w * src)
    # the equal-time slope enters with the half weight of the upper end point
    v = v - np.diag(g_ret.g_dot) * (w * src) + 0.5 * dt * np.diag(g_ret.g_dot) * src
    v[0] = x0.v[0]
    return Trajectory(kernels.grid, x, v)


def representation_gap(kernels: InfluenceKernels, g_ret: Optional[GreenTable] = None) -> float:
    """Max difference between forward-integrated and two-solution G_ret.

    Zero up to discretization error for local dynamics; for a memory kernel
    the two-solution form is not exact and the gap measures by how much.
    """
    g_ret = g_ret if g_ret is not None else build_retarded_green(kernels)
    return float(np.max(np.abs(g_ret.g - retarded_green_two_solution(kernels).g)))
