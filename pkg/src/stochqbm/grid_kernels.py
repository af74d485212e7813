"""Time grid, spectral densities and the discretized influence kernels.

The environment enters only through the noise kernel ``N`` and the causal
dissipation kernel ``H``.  Both are tabulated on a uniform :class:`TimeGrid`.
Units: hbar = k_B = 1.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from . import io
from .errors import InvalidArgumentError, NumericalFailureError

# Tolerances requested from the quadrature and the (looser) ones at which we
# declare failure.  Requests are tight because the noise matrix must stay
# positive semi-definite at the 1e-10 relative level.
QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11
FAIL_EPSABS = 1e-9
FAIL_EPSREL = 1e-7

# Exponential cutoffs are truncated at this many cutoff frequencies.
_EXP_TAIL = 60.0

OHMIC_EXP = "ohmic_exponential_cutoff"
OHMIC_HARD = "ohmic_hard_cutoff"
TABULATED = "tabulated"
FAMILIES = (OHMIC_EXP, OHMIC_HARD, TABULATED)

PRESETS = ("free", "caldeira_leggett_highT", "drude_nonlocal")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise InvalidArgumentError("grid bounds must be finite")
        if not self.t_end > self.t_start:
            raise InvalidArgumentError(
                f"t_end ({self.t_end}) must exceed t_start ({self.t_start})"
            )
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise InvalidArgumentError(f"n_points must be an integer >= 3, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / (self.n_points - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_points) * self.dt

    def index_of(self, t: float) -> int:
        """Nearest grid index to time ``t``."""
        k = int(round((t - self.t_start) / self.dt))
        if not 0 <= k < self.n_points:
            raise InvalidArgumentError(f"time {t} is outside the grid")
        return k


def make_time_grid(t_start: float, t_end: float, n_points: int) -> TimeGrid:
    return TimeGrid(float(t_start), float(t_end), n_points)


def trapezoid_weights(n_used: int, dt: float, size: Optional[int] = None) -> np.ndarray:
    """Trapezoid weights for an integral over the first ``n_used`` grid points.

    The returned vector has length ``size`` (default ``n_used``) and is zero
    beyond the integration range.  One point means an empty interval.
    """
    size = n_used if size is None else size
    w = np.zeros(size)
    if n_used >= 2:
        w[:n_used] = dt
        w[0] = w[n_used - 1] = 0.5 * dt
    return w


@dataclass(frozen=True)
class SystemParams:
    mass: float = 1.0
    omega_ren: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise InvalidArgumentError(f"mass must be positive, got {self.mass}")
        if not self.omega_ren >= 0:
            raise InvalidArgumentError(f"omega_ren must be >= 0, got {self.omega_ren}")


@dataclass(frozen=True)
class SpectralDensity:
    """Bath spectral density I(omega).

    Ohmic families are ``(2/pi) M gamma omega`` times a cutoff factor, so that
    in the local limit the system obeys ``x'' + 2 gamma x' + ...``.
    """

    family: str
    coupling: float
    cutoff: float = 1.0
    mass: float = 1.0
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown spectral family {self.family!r}")
        if self.family == TABULATED:
            if self.table is None or len(self.table) < 2:
                raise InvalidArgumentError("tabulated spectral density needs >= 2 (omega, I) pairs")
            w = np.array([p[0] for p in self.table], dtype=float)
            vals = np.array([p[1] for p in self.table], dtype=float)
            if np.any(np.diff(w) <= 0) or w[0] < 0:
                raise InvalidArgumentError("tabulated omegas must be non-negative and strictly increasing")
            if np.any(vals < 0):
                raise InvalidArgumentError("tabulated I(omega) must be non-negative")
            object.__setattr__(self, "table", tuple((float(a), float(b)) for a, b in self.table))
        else:
            if not self.cutoff > 0:
                raise InvalidArgumentError("cutoff must be positive")
            if self.coupling < 0:
                raise InvalidArgumentError("coupling must be non-negative")

    @property
    def is_zero(self) -> bool:
        if self.family == TABULATED:
            return all(v == 0 for _, v in self.table)
        return self.coupling == 0

    def support(self):
        """Finite frequency interval carrying (numerically) all the weight."""
        if self.family == OHMIC_EXP:
            return 0.0, _EXP_TAIL * self.cutoff
        if self.family == OHMIC_HARD:
            return 0.0, self.cutoff
        return self.table[0][0], self.table[-1][0]

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        if self.family == OHMIC_EXP:
            return (2 / np.pi) * self.mass * self.coupling * omega * np.exp(-omega / self.cutoff)
        if self.family == OHMIC_HARD:
            return np.where(
                omega <= self.cutoff, (2 / np.pi) * self.mass * self.coupling * omega, 0.0
            )
        w = np.array([p[0] for p in self.table])
        v = np.array([p[1] for p in self.table])
        return np.interp(omega, w, v, left=0.0, right=0.0)


def eval_spectral_density(sd: SpectralDensity, omega: float) -> float:
    if omega < 0:
        raise InvalidArgumentError(f"omega must be non-negative, got {omega}")
    return float(sd(omega))


@dataclass(frozen=True)
class KernelMatrix:
    grid: TimeGrid
    values: np.ndarray
    kind: str  # "noise" | "dissipation_H"
    symmetry: str  # "symmetric" | "lower_triangular"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        n = self.grid.n_points
        if vals.shape != (n, n):
            raise InvalidArgumentError(f"kernel must be {n}x{n}, got {vals.shape}")
        if self.kind not in ("noise", "dissipation_H"):
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "noise" and not np.array_equal(vals, vals.T):
            raise InvalidArgumentError("noise kernel must be exactly symmetric")
        if self.kind == "dissipation_H" and np.any(np.triu(vals, 1) != 0):
            raise InvalidArgumentError("dissipation kernel must vanish above the diagonal")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def is_psd(self, eps: float = 1e-10) -> bool:
        scale = np.max(np.abs(self.values))
        if scale == 0:
            return True
        eig = np.linalg.eigvalsh(self.values + eps * scale * np.eye(len(self.values)))
        return bool(eig.min() >= 0)

    def save(self, path) -> None:
        io.write_matrix(
            path,
            self.values,
            {"t_start": self.grid.t_start, "t_end": self.grid.t_end, "kind": self.kind},
        )

    @classmethod
    def load(cls, path) -> "KernelMatrix":
        head, vals = io.read_matrix(path)
        grid = TimeGrid(head["t_start"], head["t_end"], head["n_points"])
        kind = head["kind"]
        if kind == "noise":
            vals = 0.5 * (vals + vals.T)
        sym = "symmetric" if kind == "noise" else "lower_triangular"
        return cls(grid, vals, kind, sym)


@dataclass(frozen=True)
class InfluenceKernels:
    """Complete problem definition: system, grid and the (H, N) pair.

    A local dissipation kernel is not stored as a matrix.  Its action
    ``u -> friction * du/dt`` is applied by the integrators through the
    velocity channel; ``H.values`` is then identically zero.
    """

    system: SystemParams
    grid: TimeGrid
    H: KernelMatrix
    N: KernelMatrix
    h_locality: str = "nonlocal"
    n_locality: str = "nonlocal"
    friction: float = 0.0
    label: str = "custom"
    _digest: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        if self.H.grid != self.grid or self.N.grid != self.grid:
            raise InvalidArgumentError("H and N must live on the system grid")
        if self.H.kind != "dissipation_H" or self.N.kind != "noise":
            raise InvalidArgumentError("H must be a dissipation kernel and N a noise kernel")
        for loc in (self.h_locality, self.n_locality):
            if loc not in ("local", "nonlocal"):
                raise InvalidArgumentError(f"locality must be 'local' or 'nonlocal', got {loc!r}")
        if self.h_locality == "local" and np.any(self.H.values != 0):
            raise InvalidArgumentError("local dissipation is carried by `friction`, H must be zero")
        if self.h_locality == "nonlocal" and self.friction != 0:
            raise InvalidArgumentError("friction is only meaningful for local dissipation")
        if self.n_locality == "local":
            off = self.N.values - np.diag(np.diag(self.N.values))
            if np.any(off != 0):
                raise InvalidArgumentError("local noise kernel must be diagonal")
        h = hashlib.sha256()
        h.update(repr((self.system, self.grid, self.h_locality, self.n_locality,
                       float(self.friction))).encode())
        h.update(self.H.values.tobytes())
        h.update(self.N.values.tobytes())
        object.__setattr__(self, "_digest", h.hexdigest())

    @property
    def digest(self) -> str:
        return self._digest

    @property
    def mass(self) -> float:
        return self.system.mass

    def memory_matrix(self) -> np.ndarray:
        """``H`` with trapezoid weights folded in, row ``k`` integrating over [t_0, t_k]."""
        n, dt = self.grid.n_points, self.grid.dt
        hw = np.tril(np.asarray(self.H.values)) * dt
        hw[:, 0] *= 0.5
        hw[np.arange(n), np.arange(n)] *= 0.5
        hw[0, 0] = 0.0
        return hw

    def apply_h(self, k: int, values: np.ndarray, derivs: Optional[np.ndarray] = None):
        """``int_{t_0}^{t_k} H(t_k, t') f(t') dt'`` for f sampled on the grid.

        ``values``/``derivs`` may be 1-D (one function) or 2-D with time on
        the first axis.  Local dissipation needs the derivative channel.
        """
        if self.h_locality == "local":
            if self.friction == 0:
                return 0.0 * np.asarray(values)[k]
            if derivs is None:
                raise InvalidArgumentError("local dissipation needs the derivative channel")
            return self.friction * np.asarray(derivs)[k]
        w = trapezoid_weights(k + 1, self.grid.dt)
        return np.tensordot(self.H.values[k, : k + 1] * w, np.asarray(values)[: k + 1], axes=1)

    def with_noise(self, N: KernelMatrix, n_locality: Optional[str] = None) -> "InfluenceKernels":
        return InfluenceKernels(
            self.system, self.grid, self.H, N, self.h_locality,
            n_locality or self.n_locality, self.friction, self.label,
        )


def _thermal_integrand(sd: SpectralDensity, temperature: float):
    if temperature == 0:
        return lambda w: float(sd(w))

    def f(w):
        x = w / (2.0 * temperature)
        if x < 1e-8:
            # I(w) coth(x) with I ~ w near 0
            return float(sd(w)) / x if x > 0 else 0.0
        return float(sd(w)) / np.tanh(x)

    return f


def _quad_transform(func, lo, hi, weight, s, breakpoints=()):
    """Adaptive quadrature of ``func(w) * weight(w s)`` over [lo, hi]."""
    pieces = [lo, *[b for b in breakpoints if lo < b < hi], hi]
    total, worst = 0.0, 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if s == 0:
                if weight == "sin":
                    continue
                val, err = integrate.quad(func, a, b, epsabs=QUAD_EPSABS,
                                          epsrel=QUAD_EPSREL, limit=400)
            else:
                val, err = integrate.quad(func, a, b, weight=weight, wvar=s,
                                          epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
        total += val
        worst = max(worst, err)
    if not np.isfinite(total) or worst > max(FAIL_EPSABS, FAIL_EPSREL * abs(total)):
        raise NumericalFailureError(
            f"quadrature did not converge at lag {s} (error estimate {worst:.3g})", residual=worst
        )
    return total, worst


def _unit_strength(sd: SpectralDensity):
    """(sd scaled to unit strength, scale); keeps quadrature tolerances relative."""
    if sd.family == TABULATED:
        scale = max(v for _, v in sd.table)
        table = tuple((w, v / scale) for w, v in sd.table)
        return SpectralDensity(TABULATED, 0.0, table=table), scale
    return SpectralDensity(sd.family, 1.0, sd.cutoff, 1.0), sd.mass * sd.coupling


def _lag_profile(sd, temperature, grid, weight):
    if sd.is_zero:
        return np.zeros(grid.n_points), 0.0
    sd, scale = _unit_strength(sd)
    lo, hi = sd.support()
    bps = [p[0] for p in sd.table] if sd.family == TABULATED else ()
    func = _thermal_integrand(sd, temperature) if weight == "cos" else (lambda w: float(sd(w)))
    lags = np.arange(grid.n_points) * grid.dt
    out = np.empty(grid.n_points)
    worst = 0.0
    for k, s in enumerate(lags):
        out[k], err = _quad_transform(func, lo, hi, weight, s, bps)
        worst = max(worst, err)
    return out * scale, worst * scale


def _toeplitz_lower(profile):
    n = len(profile)
    idx = np.subtract.outer(np.arange(n), np.arange(n))
    return np.where(idx >= 0, profile[np.clip(idx, 0, None)], 0.0)


def build_noise_kernel(sd: SpectralDensity, temperature: float, grid: TimeGrid) -> KernelMatrix:
    """N(t_k, t_l) = int_0^inf I(w) coth(w / 2T) cos(w (t_k - t_l)) dw."""
    if temperature < 0:
        raise InvalidArgumentError("temperature must be non-negative")
    profile, _ = _lag_profile(sd, temperature, grid, "cos")
    n = grid.n_points
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return KernelMatrix(grid, profile[idx], "noise", "symmetric")


def build_dissipation_kernel(sd: SpectralDensity, grid: TimeGrid) -> KernelMatrix:
    """H(t_k, t_l) = -2 theta(t_k - t_l) int_0^inf I(w) sin(w (t_k - t_l)) dw.

    The sign is the one for which positive coupling damps: in the ohmic limit
    the memory term becomes ``2 M gamma dX/dt``.  The equal-time entry is the
    one-sided limit s -> 0+, which vanishes.
    """
    profile, _ = _lag_profile(sd, 0.0, grid, "sin")
    profile = -2.0 * profile
    profile[0] = 0.0
    return KernelMatrix(grid, _toeplitz_lower(profile), "dissipation_H", "lower_triangular")


_REQUIRED = {
    "free": (),
    "caldeira_leggett_highT": ("gamma", "temperature"),
    "drude_nonlocal": ("gamma", "cutoff", "temperature"),
}


def local_noise(amplitude: float, grid: TimeGrid) -> KernelMatrix:
    """Grid representation of ``amplitude * delta(t - t')``."""
    return KernelMatrix(grid, np.eye(grid.n_points) * (amplitude / grid.dt), "noise", "symmetric")


def preset_kernels(name: str, params: Mapping, grid: TimeGrid) -> InfluenceKernels:
    """Named (H, N) pairs.

    ``params`` holds ``mass`` and ``omega_ren`` (default 1) plus the preset's
    own keys: ``gamma``, ``temperature`` and, for the Drude bath, ``cutoff``.
    """
    if name not in _REQUIRED:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    missing = [k for k in _REQUIRED[name] if k not in params]
    if missing:
        raise InvalidArgumentError(f"preset {name!r} needs parameters: {', '.join(missing)}")
    system = SystemParams(float(params.get("mass", 1.0)), float(params.get("omega_ren", 1.0)))
    n = grid.n_points
    zero_h = KernelMatrix(grid, np.zeros((n, n)), "dissipation_H", "lower_triangular")
    if name == "free":
        zero_n = KernelMatrix(grid, np.zeros((n, n)), "noise", "symmetric")
        return InfluenceKernels(system, grid, zero_h, zero_n, "local", "local", 0.0, name)

    gamma = float(params["gamma"])
    temp = float(params["temperature"])
    if gamma < 0 or temp < 0:
        raise InvalidArgumentError("gamma and temperature must be non-negative")
    M = system.mass
    if name == "caldeira_leggett_highT":
        # High-temperature limit of the ohmic noise kernel: 4 M gamma T delta(s).
        return InfluenceKernels(
            system, grid, zero_h, local_noise(4.0 * M * gamma * temp, grid),
            "local", "local", 2.0 * M * gamma, name,
        )
    sd = SpectralDensity(OHMIC_EXP, gamma, float(params["cutoff"]), M)
    return InfluenceKernels(
        system, grid, build_dissipation_kernel(sd, grid), build_noise_kernel(sd, temp, grid),
        "nonlocal", "nonlocal", 0.0, name,
    )


def stationarity_defect(N: KernelMatrix) -> float:
    """Largest relative deviation of N from a function of k - l."""
    v = N.values
    n = len(v)
    worst = 0.0
    scale = max(np.max(np.abs(v)), 1e-300)
    for d in range(n):
        diag = np.diagonal(v, d)
        worst = max(worst, float(np.max(np.abs(diag - diag[0]))) / scale)
    return worst
