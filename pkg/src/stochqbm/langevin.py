"""Langevin ensembles and their Monte Carlo estimators.

A path solves (L X)(t) = xi(t) with Gaussian xi of covariance N and initial
data drawn from the initial Wigner function.  Averages over both reproduce
the reduced Wigner function and the symmetrized correlators.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from . import io, rng as rngmod
from .coefficients import GaussianState
from .errors import (
    IndefiniteCovarianceError,
    InsufficientSamplesError,
    InvalidArgumentError,
    InvalidStateError,
    UnsupportedDistributionError,
)
from .grid_kernels import InfluenceKernels, KernelMatrix, TimeGrid, trapezoid_weights
from .phase_space import PhaseGrid
from .volterra import GreenTable, build_retarded_green, integrate_batch, solve_inhomogeneous

CHUNK = 512
JACKKNIFE_BLOCKS = 100


@dataclass(frozen=True)
class NoiseFactor:
    """Factor of W^1/2 N W^1/2 with W the trapezoid weights.

    ``lower @ z`` has covariance W^1/2 N W^1/2; dividing by sqrt(W) gives a
    source with covariance N.  ``lower`` is None for the zero kernel and a
    1-D array of diagonal entries for local noise.
    """

    grid: TimeGrid
    lower: Optional[np.ndarray]
    jitter_used: float
    weights: np.ndarray

    @property
    def is_zero(self) -> bool:
        return self.lower is None

    @property
    def is_diagonal(self) -> bool:
        return self.lower is not None and self.lower.ndim == 1

    def weighted(self, z: np.ndarray) -> np.ndarray:
        """``lower @ z`` for z of shape (n,) or (n, B)."""
        if self.lower is None:
            return np.zeros_like(z)
        if self.lower.ndim == 1:
            return self.lower.reshape((-1,) + (1,) * (z.ndim - 1)) * z
        return self.lower @ z

    def source(self, z: np.ndarray) -> np.ndarray:
        eta = self.weighted(z)
        return eta / np.sqrt(self.weights).reshape((-1,) + (1,) * (z.ndim - 1))

    def dense(self) -> np.ndarray:
        n = self.grid.n_points
        if self.lower is None:
            return np.zeros((n, n))
        return np.diag(self.lower) if self.lower.ndim == 1 else self.lower


def factor_noise(N: KernelMatrix) -> NoiseFactor:
    if N.kind != "noise":
        raise InvalidArgumentError("factor_noise needs a noise kernel")
    grid = N.grid
    w = trapezoid_weights(grid.n_points, grid.dt)
    vals = np.asarray(N.values)
    if not np.any(vals):
        return NoiseFactor(grid, None, 0.0, w)
    if not np.any(vals - np.diag(np.diag(vals))):
        d = np.diag(vals) * w
        if np.any(d < 0):
            raise IndefiniteCovarianceError("local noise kernel has negative diagonal entries")
        return NoiseFactor(grid, np.sqrt(d), 0.0, w)
    sw = np.sqrt(w)
    cov = sw[:, None] * vals * sw[None, :]
    scale = np.max(np.abs(cov))
    for eps in (1e-12, 1e-11, 1e-10, 1e-9, 1e-8):
        jitter = eps * scale
        try:
            low = linalg.cholesky(cov + jitter * np.eye(len(cov)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        return NoiseFactor(grid, low, jitter, w)
    raise IndefiniteCovarianceError(
        f"noise kernel is not positive semi-definite (jitter up to {1e-8 * scale:.3g} failed)"
    )


def sample_noise(factor: NoiseFactor, rng_stream: np.random.Generator) -> np.ndarray:
    """One weighted realization ``lower @ z``; its covariance is W^1/2 N W^1/2."""
    return factor.weighted(rng_stream.standard_normal(factor.grid.n_points))


@dataclass(frozen=True)
class InitialDistribution:
    """Gaussian state or tabulated Wigner function on a :class:`PhaseGrid`."""

    kind: str
    gaussian: Optional[GaussianState] = None
    table: Optional[np.ndarray] = None
    phase_grid: Optional[PhaseGrid] = None

    def __post_init__(self):
        if self.kind == "gaussian":
            g = self.gaussian
            if g is None or not g.is_psd:
                raise InvalidArgumentError("gaussian initial data need a positive semi-definite covariance")
        elif self.kind == "tabulated_wigner":
            if self.table is None or self.phase_grid is None:
                raise InvalidArgumentError("tabulated initial data need a table and its phase grid")
            pg = self.phase_grid
            tab = np.asarray(self.table, dtype=float)
            if tab.shape != (pg.nx, pg.np):
                raise InvalidArgumentError(f"table shape {tab.shape} does not match phase grid")
            if not np.any(tab):
                raise InvalidArgumentError("tabulated Wigner function is identically zero")
            norm = tab.sum() * pg.dx * pg.dp
            if abs(norm - 1.0) > 1e-6:
                raise InvalidArgumentError(f"tabulated Wigner function integrates to {norm:.9g}, not 1")
        else:
            raise UnsupportedDistributionError(f"unknown initial distribution kind {self.kind!r}")

    @classmethod
    def from_gaussian(cls, state: GaussianState) -> "InitialDistribution":
        return cls("gaussian", gaussian=state)

    @classmethod
    def from_field(cls, field) -> "InitialDistribution":
        return cls("tabulated_wigner", table=np.asarray(field.values), phase_grid=field.grid)

    @property
    def abs_mass(self) -> float:
        if self.kind == "gaussian":
            return 1.0
        return float(np.abs(self.table).sum() * self.phase_grid.dx * self.phase_grid.dp)


def sample_initial(dist: InitialDistribution, rng_stream: np.random.Generator) -> Tuple[float, float, float]:
    """Draw (x_i, p_i, weight); weights are +1 for Gaussian data and sign(W) * int|W| otherwise."""
    if dist.kind == "gaussian":
        g = dist.gaussian
        cov = np.array([[g.cov_xx, g.cov_xp], [g.cov_xp, g.cov_pp]])
        # eigen-factor tolerates a singular covariance
        vals, vecs = np.linalg.eigh(cov)
        z = rng_stream.standard_normal(2)
        dx, dp = vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * z)
        return g.mean_x + dx, g.mean_p + dp, 1.0
    pg = dist.phase_grid
    tab = np.asarray(dist.table, dtype=float)
    flat = np.abs(tab).ravel()
    cdf = np.cumsum(flat)
    cell = int(np.searchsorted(cdf, rng_stream.random() * cdf[-1], side="right"))
    cell = min(cell, flat.size - 1)
    i, j = divmod(cell, pg.np)
    u = rng_stream.random(2)
    x = pg.x_min + (i + u[0]) * pg.dx
    p = pg.p_min + (j + u[1]) * pg.dp
    return x, p, float(np.sign(tab[i, j])) * dist.abs_mass


def simulate_trajectory(kernels: InfluenceKernels, xi, x_i: float, p_i: float):
    """One Langevin path by direct forward integration; returns (x, v)."""
    tr = solve_inhomogeneous(kernels, xi, x_i, p_i / kernels.mass)
    return tr.x, tr.v


@dataclass(frozen=True)
class TrajectoryEnsemble:
    grid: TimeGrid
    mass: float
    count: int
    paths_x: np.ndarray
    paths_v: np.ndarray
    weights: np.ndarray
    seed: int
    kernels_digest: str
    noise: Optional[np.ndarray] = None

    def momenta(self, t_index: int) -> np.ndarray:
        return self.mass * self.paths_v[:, t_index]

    def save(self, path) -> None:
        arrays = {"paths_x": self.paths_x, "paths_v": self.paths_v, "weights": self.weights}
        if self.noise is not None:
            arrays["noise"] = self.noise
        meta = {"seed": int(self.seed), "kernels_digest": self.kernels_digest, "count": self.count,
                "mass": self.mass, "t_start": self.grid.t_start, "t_end": self.grid.t_end,
                "n_points": self.grid.n_points}
        io.write_binary(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "TrajectoryEnsemble":
        meta, arrays = io.read_binary(path)
        grid = TimeGrid(meta["t_start"], meta["t_end"], meta["n_points"])
        return cls(grid, meta["mass"], meta["count"], arrays["paths_x"], arrays["paths_v"],
                   arrays["weights"], meta["seed"], meta["kernels_digest"], arrays.get("noise"))


def _run_chunk(kernels, factor, dist, seed, lo, hi, store_noise):
    n = kernels.grid.n_points
    b = hi - lo
    x0 = np.empty(b)
    p0 = np.empty(b)
    w = np.empty(b)
    z = np.empty((n, b))
    for m, j in enumerate(range(lo, hi)):
        g = rngmod.stream(seed, j)
        x0[m], p0[m], w[m] = sample_initial(dist, g)
        z[:, m] = g.standard_normal(n)
    src = None if factor.is_zero else factor.source(z)
    x, v = integrate_batch(kernels, x0, p0 / kernels.mass, source=src)
    noise = None
    if store_noise:
        noise = np.zeros((b, n)) if src is None else src.T.copy()
    return x.T.copy(), v.T.copy(), w, noise


def run_ensemble(
    kernels: InfluenceKernels,
    dist: InitialDistribution,
    count: int,
    seed: int,
    threads: int = 1,
    store_noise: bool = False,
    factor: Optional[NoiseFactor] = None,
) -> TrajectoryEnsemble:
    """Simulate ``count`` paths.  Path j draws from the stream keyed (seed, j).

    Work is cut into fixed chunks independent of ``threads``, so the result
    is bit-identical for any degree of parallelism.
    """
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    factor = factor if factor is not None else factor_noise(kernels.N)
    bounds = [(lo, min(lo + CHUNK, count)) for lo in range(0, count, CHUNK)]

    def job(bd):
        return _run_chunk(kernels, factor, dist, seed, bd[0], bd[1], store_noise)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(bd) for bd in bounds]
    px = np.concatenate([p[0] for p in parts])
    pv = np.concatenate([p[1] for p in parts])
    wt = np.concatenate([p[2] for p in parts])
    noise = np.concatenate([p[3] for p in parts]) if store_noise else None
    return TrajectoryEnsemble(kernels.grid, kernels.mass, count, px, pv, wt, int(seed),
                              kernels.digest, noise)


# estimators ---------------------------------------------------------------

def _jackknife(samples: np.ndarray, fn):
    """Estimate ``fn(column means)`` and its block-jackknife standard error.

    ``samples`` has one row per trajectory.  Blocks are contiguous in
    trajectory order, so errors do not depend on scheduling.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    count = samples.shape[0]
    if count < 10:
        raise InsufficientSamplesError(f"need at least 10 samples, got {count}")
    full = np.asarray(fn(samples.mean(axis=0)), dtype=float)
    nb = min(JACKKNIFE_BLOCKS, count)
    edges = np.linspace(0, count, nb + 1).astype(int)
    sums = np.add.reduceat(samples, edges[:-1], axis=0)
    sizes = np.diff(edges)[:, None]
    total = samples.sum(axis=0)
    loo = np.array([fn((total - sums[i]) / (count - sizes[i])) for i in range(nb)], dtype=float)
    err = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, err


def _check_index(ens: TrajectoryEnsemble, k: int) -> int:
    if not 0 <= k < ens.grid.n_points:
        raise InvalidArgumentError(f"time index {k} outside [0, {ens.grid.n_points - 1}]")
    return int(k)


def _moments_fn(m):
    _, ex, ep, exx, exp_, epp = m
    return np.array([ex, ep, exx - ex * ex, exp_ - ex * ep, epp - ep * ep])


def estimate_moments(ens: TrajectoryEnsemble, t_index: int):
    """Weighted moments of (X, M dX/dt) and their jackknife errors, as two GaussianStates."""
    k = _check_index(ens, t_index)
    x = ens.paths_x[:, k]
    p = ens.momenta(k)
    w = ens.weights
    s = np.stack([w, w * x, w * p, w * x * x, w * x * p, w * p * p], axis=1)
    val, err = _jackknife(s, _moments_fn)
    return GaussianState.from_array(val), GaussianState.from_array(err)


def stochastic_npoint(ens: TrajectoryEnsemble, indices: Sequence[int]):
    """Weighted average of X(t_1)...X(t_s) with its jackknife error."""
    prod = ens.weights.copy()
    for k in indices:
        prod = prod * ens.paths_x[:, _check_index(ens, k)]
    val, err = _jackknife(prod, lambda m: m)
    return float(val[0]), float(err[0])


def stochastic_correlator(ens: TrajectoryEnsemble, t1_index: int, t2_index: int):
    return stochastic_npoint(ens, (t1_index, t2_index))


def novikov_check(kernels: InfluenceKernels, ens: TrajectoryEnsemble, t1_index: int, t2_index: int,
                  g_ret: Optional[GreenTable] = None):
    """<xi(t1) X(t2)> against int N(t1, s) G_ret(t2, s) ds; returns (lhs, rhs, err)."""
    if ens.noise is None:
        raise InvalidStateError("ensemble was run without store_noise=True")
    k1, k2 = _check_index(ens, t1_index), _check_index(ens, t2_index)
    lhs, err = _jackknife(ens.weights * ens.noise[:, k1] * ens.paths_x[:, k2], lambda m: m)
    if k2 == 0:
        return float(lhs[0]), 0.0, float(err[0])
    g_ret = g_ret if g_ret is not None else build_retarded_green(kernels)
    w = trapezoid_weights(k2 + 1, kernels.grid.dt)
    rhs = float(np.sum(kernels.N.values[k1, : k2 + 1] * g_ret.g[k2, : k2 + 1] * w))
    return float(lhs[0]), rhs, float(err[0])


@dataclass(frozen=True)
class WignerEstimate:
    phase_grid: PhaseGrid
    values: np.ndarray
    std_err: np.ndarray
    t_index: int
    count: int = 0
    normalization_err: float = 0.0

    @property
    def normalization(self) -> float:
        return float(self.values.sum() * self.phase_grid.dx * self.phase_grid.dp)

    def to_csv(self, path) -> None:
        xs, ps = self.phase_grid.centers()
        X, P = np.meshgrid(xs, ps, indexing="ij")
        io.write_csv(path, {"X": X.ravel(), "p": P.ravel(), "value": self.values.ravel(),
                            "std_err": self.std_err.ravel()})


def estimate_wigner(ens: TrajectoryEnsemble, t_index: int, phase_grid: PhaseGrid) -> WignerEstimate:
    """Signed 2-D histogram of (X(t), M dX/dt(t)) normalized as a density."""
    k = _check_index(ens, t_index)
    pg = phase_grid
    x = ens.paths_x[:, k]
    p = ens.momenta(k)
    w = ens.weights
    i = np.floor((x - pg.x_min) / pg.dx).astype(np.int64)
    j = np.floor((p - pg.p_min) / pg.dp).astype(np.int64)
    inside = (i >= 0) & (i < pg.nx) & (j >= 0) & (j < pg.np)
    flat = i[inside] * pg.np + j[inside]
    area = pg.dx * pg.dp
    size = pg.nx * pg.np
    s1 = np.bincount(flat, weights=w[inside], minlength=size)
    s2 = np.bincount(flat, weights=w[inside] ** 2, minlength=size)
    n = ens.count
    mean = s1 / n
    var = np.clip(s2 / n - mean ** 2, 0.0, None) / max(n - 1, 1)
    # bins are disjoint: the error of the total is that of the in-range weight
    wi = np.where(inside, w, 0.0)
    return WignerEstimate(pg, (mean / area).reshape(pg.nx, pg.np),
                          (np.sqrt(var) / area).reshape(pg.nx, pg.np), k, n,
                          float(np.std(wi) / np.sqrt(max(n - 1, 1))))
