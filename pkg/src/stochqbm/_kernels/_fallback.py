"""Pure numpy implementations of the hot kernels.

Signatures and results match the compiled ``_core`` module; only speed differs.
"""

import numpy as np


def _memory(row, hist):
    # reducing over the leading axis adds rows in order, so each member's sum
    # is independent of the batch width (a BLAS product is not)
    return (row[:, None] * hist).sum(axis=0)


def volterra_verlet(hw_over_m, omega_sq, damping, dt, accel_src, x0, v0, start, out_x, out_v):
    """Velocity-Verlet stepping of ``x'' + omega_sq x + (Hw x)/M + damping x' = src``.

    Parameters
    ----------
    hw_over_m : (n, n) array
        Memory matrix with trapezoid weights, divided by the mass.
    accel_src : (n, B) array or None
        Source divided by the mass; must be zero before each member's start.
    x0, v0 : (B,) arrays
        State placed at index ``start[b]``; members are zero before that.
    out_x, out_v : (n, B) arrays, overwritten.
    """
    n, nb = out_x.shape
    out_x[:] = 0.0
    out_v[:] = 0.0
    start = np.asarray(start, dtype=np.int64)
    has_mem = bool(np.any(hw_over_m))
    acc = np.zeros(nb)
    half_dt = 0.5 * dt
    denom = 1.0 + half_dt * damping
    for k in range(n):
        fresh = start == k
        if np.any(fresh):
            out_x[k, fresh] = x0[fresh]
            out_v[k, fresh] = v0[fresh]
            f = -omega_sq * out_x[k, fresh]
            if accel_src is not None:
                f = f + accel_src[k, fresh]
            if has_mem:
                f = f - _memory(hw_over_m[k, : k + 1], out_x[: k + 1][:, fresh])
            acc[fresh] = f - damping * out_v[k, fresh]
        if k == n - 1:
            break
        xn = out_x[k] + dt * out_v[k] + half_dt * dt * acc
        out_x[k + 1] = xn
        f = -omega_sq * xn
        if accel_src is not None:
            f = f + accel_src[k + 1]
        if has_mem:
            f = f - _memory(hw_over_m[k + 1, : k + 2], out_x[: k + 2])
        vn = (out_v[k] + half_dt * (acc + f)) / denom
        out_v[k + 1] = vn
        acc = f - damping * vn


def _upwind_faces(w, vel):
    """Fifth-order upwind-biased flux ``vel * w`` at the interior faces along axis 0.

    ``vel`` broadcasts to the face array of shape (n - 1, m).  Values beyond
    the walls are taken as zero.
    """
    n = w.shape[0]
    pad = np.zeros((n + 6,) + w.shape[1:])
    pad[3:-3] = w
    c = [pad[k : k + n - 1] for k in range(1, 7)]  # w[i-2] ... w[i+3]
    left = (2.0 * c[0] - 13.0 * c[1] + 47.0 * c[2] + 27.0 * c[3] - 3.0 * c[4]) / 60.0
    right = (2.0 * c[5] - 13.0 * c[4] + 47.0 * c[3] + 27.0 * c[2] - 3.0 * c[1]) / 60.0
    return vel * np.where(vel > 0, left, right)


def fp_rhs(w, xs, ps, dx, dp, mass, omega_r_sq, a, b, c, out):
    """Time derivative of the Wigner field under the transport equation.

    Finite-volume form with zero flux through the outer walls.  ``w`` has
    shape (nx, np) with X along axis 0.
    """
    nx, npp = w.shape
    out[:] = 0.0
    # X-direction fluxes at interior faces i+1/2
    vx = (ps / mass)[None, :]
    fx = _upwind_faces(w, vx)
    if b != 0.0:
        wp = np.zeros((nx, npp + 2))
        wp[:, 1:-1] = w
        dwdp = (wp[:-1, 2:] + wp[1:, 2:] - wp[:-1, :-2] - wp[1:, :-2]) / (4.0 * dp)
        fx = fx - b * dwdp
    # p-direction fluxes at interior faces j+1/2
    vp = (-mass * omega_r_sq * xs)[:, None]
    fp = _upwind_faces(w.T, vp.T).T
    p_face = 0.5 * (ps[1:] + ps[:-1])
    if a != 0.0:
        fp = fp - 2.0 * a * p_face[None, :] * 0.5 * (w[:, 1:] + w[:, :-1])
    if c != 0.0:
        fp = fp - mass * c * (w[:, 1:] - w[:, :-1]) / dp
    out[:-1, :] -= fx / dx
    out[1:, :] += fx / dx
    out[:, :-1] -= fp / dp
    out[:, 1:] += fp / dp
