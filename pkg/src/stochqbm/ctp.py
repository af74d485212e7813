"""Closed-time-path generating functional and symmetrized correlators.

For Gaussian initial data every quantity here is deterministic: the path is
X = X_0 + G_ret (J_sigma + xi), linear in Gaussian variables.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import io
from .coefficients import CoefficientTable, GaussianState, evolve_gaussian
from .errors import InvalidArgumentError, NumericalFailureError, UnsupportedDistributionError
from .grid_kernels import InfluenceKernels, trapezoid_weights
from .langevin import InitialDistribution, TrajectoryEnsemble, _jackknife
from .volterra import GreenTable, homogeneous_basis

ROUTES = ("deterministic", "ctp_derivative", "stochastic_mc", "regression")


@dataclass(frozen=True)
class CTPSources:
    j_sigma: np.ndarray
    j_delta: np.ndarray

    def __post_init__(self):
        js = np.asarray(self.j_sigma, dtype=float)
        jd = np.asarray(self.j_delta, dtype=float)
        if js.shape != jd.shape or js.ndim != 1:
            raise InvalidArgumentError("j_sigma and j_delta must be 1-D arrays of equal length")
        object.__setattr__(self, "j_sigma", js)
        object.__setattr__(self, "j_delta", jd)

    @classmethod
    def zeros(cls, n: int) -> "CTPSources":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class CorrelatorResult:
    value: complex
    std_err: float
    route: str


def _gaussian(dist: InitialDistribution) -> GaussianState:
    if dist.kind != "gaussian":
        raise UnsupportedDistributionError(
            "closed-form route needs Gaussian initial data; use the Monte Carlo estimators"
        )
    return dist.gaussian


def noise_quadratic(kernels: InfluenceKernels, a: np.ndarray, b: np.ndarray) -> float:
    """int int a(s) N(s, s') b(s') ds ds' by trapezoid quadrature.

    A local kernel is collapsed first, amplitude * int a b ds, which keeps the
    quadrature second-order accurate at the end points.
    """
    n, dt = kernels.grid.n_points, kernels.grid.dt
    w = trapezoid_weights(n, dt)
    if kernels.n_locality == "local":
        amp = np.diag(kernels.N.values) * dt
        return float(np.sum(w * amp * a * b))
    return float((w * a) @ kernels.N.values @ (w * b))


class _Context:
    """Quantities shared by every evaluation for one (kernels, dist, g_ret)."""

    def __init__(self, kernels, dist, g_ret):
        self.kernels = kernels
        self.state = _gaussian(dist)
        self.g_ret = g_ret
        v1, v2 = homogeneous_basis(kernels)
        self.v1 = v1.x
        self.v2 = v2.x / kernels.mass
        self.w = trapezoid_weights(kernels.grid.n_points, kernels.grid.dt)
        s = self.state
        self.mu = np.array([s.mean_x, s.mean_p])
        self.sigma = np.array([[s.cov_xx, s.cov_xp], [s.cov_xp, s.cov_pp]])

    def mean_path(self):
        return self.mu[0] * self.v1 + self.mu[1] * self.v2

    def z(self, src: CTPSources) -> complex:
        jd = self.w * src.j_delta
        js = self.w * src.j_sigma
        ab = np.array([jd @ self.v1, jd @ self.v2])
        initial = -1j * (ab @ self.mu) - 0.5 * ab @ self.sigma @ ab
        q = jd @ self.g_ret.g
        noise = -0.5 * noise_quadratic(self.kernels, q, q)
        phase = -1j * (q @ js)
        return complex(np.exp(initial + noise + phase))

    def two_point(self, k1: int, k2: int) -> float:
        e1 = np.array([self.v1[k1], self.v2[k1]])
        e2 = np.array([self.v1[k2], self.v2[k2]])
        disp = e1 @ (self.sigma + np.outer(self.mu, self.mu)) @ e2
        return float(disp + noise_quadratic(self.kernels, self.g_ret.g[k1], self.g_ret.g[k2]))


def _index(kernels, k):
    if not 0 <= int(k) < kernels.grid.n_points:
        raise InvalidArgumentError(f"time index {k} outside [0, {kernels.grid.n_points - 1}]")
    return int(k)


def eval_ctp(kernels: InfluenceKernels, dist: InitialDistribution, src: CTPSources,
             g_ret: GreenTable) -> complex:
    """Z[J_sigma, J_delta] for Gaussian initial data."""
    if src.j_delta.shape[0] != kernels.grid.n_points:
        raise InvalidArgumentError("sources must have one value per grid point")
    return _Context(kernels, dist, g_ret).z(src)


def symmetrized_two_point(kernels: InfluenceKernels, dist: InitialDistribution, g_ret: GreenTable,
                          t1_index: int, t2_index: int) -> CorrelatorResult:
    """<X_0(t1) X_0(t2)> over initial data plus (G_ret N G_ret^T)(t1, t2)."""
    ctx = _Context(kernels, dist, g_ret)
    return CorrelatorResult(ctx.two_point(_index(kernels, t1_index), _index(kernels, t2_index)),
                            0.0, "deterministic")


def ctp_derivative_correlator(kernels: InfluenceKernels, dist: InitialDistribution, g_ret: GreenTable,
                              s_indices: Sequence[int], rel_tol: float = 1e-3) -> CorrelatorResult:
    """s-point symmetrized correlator from J_delta derivatives of Z.

    Spikes eps / w_k at the listed grid points turn Z into the joint
    characteristic function of X(t_k); mixed central differences with step
    h and h/2 are combined by Richardson extrapolation.
    """
    idx = [_index(kernels, k) for k in s_indices]
    if not 1 <= len(idx) <= 4:
        raise InvalidArgumentError("between 1 and 4 time indices are supported")
    ctx = _Context(kernels, dist, g_ret)
    n = kernels.grid.n_points
    spread = max(np.sqrt(max(ctx.two_point(k, k), 0.0)) for k in idx)
    scale = max(spread, abs(ctx.mean_path()[idx]).max(), 1e-300)
    s = len(idx)

    def deriv(h):
        total = 0.0 + 0.0j
        for signs in itertools.product((1.0, -1.0), repeat=s):
            jd = np.zeros(n)
            for k, sg in zip(idx, signs):
                jd[k] += sg * h / ctx.w[k]
            total += np.prod(signs) * ctx.z(CTPSources(np.zeros(n), jd))
        return (1j ** s) * total / (2.0 * h) ** s

    h = 0.01 / scale
    d1, d2 = deriv(h), deriv(0.5 * h)
    value = (4.0 * d2 - d1) / 3.0
    if abs(d2 - d1) > rel_tol * scale ** s:
        raise NumericalFailureError(
            f"finite-difference derivative did not settle (change {abs(d2 - d1):.3g})",
            residual=abs(d2 - d1),
        )
    return CorrelatorResult(float(value.real), 0.0, "ctp_derivative")


def _wick(idx: List[int], mean: np.ndarray, conn) -> float:
    if not idx:
        return 1.0
    first, rest = idx[0], idx[1:]
    total = mean[first] * _wick(rest, mean, conn)
    for j, other in enumerate(rest):
        total += conn(first, other) * _wick(rest[:j] + rest[j + 1:], mean, conn)
    return total


def n_point_symmetrized(kernels: InfluenceKernels, dist: InitialDistribution, g_ret: GreenTable,
                        indices: Sequence[int]) -> CorrelatorResult:
    """<<X(t_1)...X(t_n)>> of the Gaussian process, by Wick's theorem with the mean."""
    idx = [_index(kernels, k) for k in indices]
    ctx = _Context(kernels, dist, g_ret)
    mean = ctx.mean_path()
    if len(idx) % 2 == 1 and not np.any(ctx.mu):
        return CorrelatorResult(0.0, 0.0, "deterministic")

    def conn(a, b):
        return ctx.two_point(a, b) - mean[a] * mean[b]

    return CorrelatorResult(float(_wick(idx, mean, conn)), 0.0, "deterministic")


def mc_characteristic(ens: TrajectoryEnsemble, k_src: np.ndarray):
    """<<exp(-i K.X)>> from an ensemble, with jackknife errors of the real and imaginary parts."""
    w = trapezoid_weights(ens.grid.n_points, ens.grid.dt)
    phase = ens.paths_x @ (w * np.asarray(k_src, dtype=float))
    s = np.stack([ens.weights * np.cos(phase), -ens.weights * np.sin(phase)], axis=1)
    val, err = _jackknife(s, lambda m: m)
    return complex(val[0], val[1]), float(np.hypot(err[0], err[1]))


def _regression(kernels, table, state_t1: GaussianState, k1: int, k2: int) -> float:
    """Propagate <X(t) X(t1)> and <P(t) X(t1)> from t1 to t2 with the mean drift."""
    M = kernels.mass
    w0 = kernels.system.omega_ren ** 2
    dt = kernels.grid.dt
    coef = np.stack([table.delta_omega_sq, table.a], axis=1)
    y = np.array([state_t1.cov_xx + state_t1.mean_x ** 2,
                  state_t1.cov_xp + state_t1.mean_x * state_t1.mean_p])

    def f(y, c):
        return np.array([y[1] / M, -M * (w0 + c[0]) * y[0] - 2.0 * c[1] * y[1]])

    for k in range(k1, k2):
        c0, c1 = coef[k], coef[k + 1]
        ch = 0.5 * (c0 + c1)
        a1 = f(y, c0)
        a2 = f(y + 0.5 * dt * a1, ch)
        a3 = f(y + 0.5 * dt * a2, ch)
        a4 = f(y + dt * a3, c1)
        y = y + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    return float(y[0])


def markov_gap(kernels: InfluenceKernels, dist: InitialDistribution, table: CoefficientTable,
               t1_index: int, t2_index: int, g_ret: Optional[GreenTable] = None,
               states: Optional[Sequence[GaussianState]] = None):
    """(exact, regression, gap) for the two-time correlator <X(t2) X(t1)>.

    ``regression`` only uses the one-time transport generator: the state at
    t1 from the moment equations, then the mean drift from t1 to t2.
    """
    from .volterra import build_retarded_green

    k1, k2 = _index(kernels, t1_index), _index(kernels, t2_index)
    if k2 <= k1:
        raise InvalidArgumentError("markov_gap needs t2 > t1")
    g_ret = g_ret if g_ret is not None else build_retarded_green(kernels)
    exact = _Context(kernels, dist, g_ret).two_point(k1, k2)
    if states is None:
        states = evolve_gaussian(_gaussian(dist), table, kernels.system)
    reg = _regression(kernels, table, states[k1], k1, k2)
    return exact, reg, abs(exact - reg)


@dataclass(frozen=True)
class CorrelatorScan:
    t1: np.ndarray
    t2: np.ndarray
    exact: np.ndarray
    regression: np.ndarray
    gap: np.ndarray
    std_err: np.ndarray

    def to_csv(self, path) -> None:
        io.write_csv(path, {"t1": self.t1, "t2": self.t2, "exact": self.exact,
                            "regression": self.regression, "gap": self.gap, "std_err": self.std_err})


def correlator_scan(kernels: InfluenceKernels, dist: InitialDistribution, table: CoefficientTable,
                    pairs: Sequence, g_ret: Optional[GreenTable] = None,
                    ens: Optional[TrajectoryEnsemble] = None) -> CorrelatorScan:
    """Markov gap over (t1_index, t2_index) pairs; ``std_err`` comes from ``ens`` when given."""
    from .langevin import stochastic_correlator
    from .volterra import build_retarded_green

    g_ret = g_ret if g_ret is not None else build_retarded_green(kernels)
    states = evolve_gaussian(_gaussian(dist), table, kernels.system)
    times = kernels.grid.times
    rows = []
    for k1, k2 in pairs:
        ex, reg, gap = markov_gap(kernels, dist, table, k1, k2, g_ret, states)
        err = stochastic_correlator(ens, k1, k2)[1] if ens is not None else 0.0
        rows.append((times[k1], times[k2], ex, reg, gap, err))
    cols = np.array(rows, dtype=float).reshape(-1, 6).T
    return CorrelatorScan(*cols)
