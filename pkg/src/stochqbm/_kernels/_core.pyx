# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  See ``_fallback.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memset

cnp.import_array()


def volterra_verlet(double[:, ::1] hw_over_m, double omega_sq, double damping, double dt,
                    accel_src, double[::1] x0, double[::1] v0, start,
                    double[:, ::1] out_x, double[:, ::1] out_v):
    cdef Py_ssize_t n = out_x.shape[0]
    cdef Py_ssize_t nb = out_x.shape[1]
    cdef Py_ssize_t k, l, b
    cdef double half_dt = 0.5 * dt
    cdef double denom = 1.0 + half_dt * damping
    cdef double h, f, xn, vn
    cdef double[:, ::1] src
    cdef bint has_src = accel_src is not None
    cdef long long[::1] st = np.ascontiguousarray(start, dtype=np.int64)
    cdef double[::1] acc = np.zeros(nb)
    cdef double[::1] mem = np.zeros(nb)
    cdef bint has_mem = bool(np.any(np.asarray(hw_over_m)))
    if has_src:
        src = np.ascontiguousarray(accel_src, dtype=np.float64)
    else:
        src = np.zeros((1, 1))

    with nogil:
        memset(&out_x[0, 0], 0, n * nb * sizeof(double))
        memset(&out_v[0, 0], 0, n * nb * sizeof(double))
        for k in range(n):
            # members starting at k: place state and evaluate the acceleration
            for b in range(nb):
                if st[b] == k:
                    out_x[k, b] = x0[b]
                    out_v[k, b] = v0[b]
                    f = -omega_sq * x0[b]
                    if has_src:
                        f = f + src[k, b]
                    if has_mem:
                        h = 0.0
                        for l in range(k + 1):
                            h = h + hw_over_m[k, l] * out_x[l, b]
                        f = f - h
                    acc[b] = f - damping * v0[b]
            if k == n - 1:
                break
            for b in range(nb):
                out_x[k + 1, b] = out_x[k, b] + dt * out_v[k, b] + half_dt * dt * acc[b]
            if has_mem:
                for b in range(nb):
                    mem[b] = 0.0
                for l in range(k + 2):
                    h = hw_over_m[k + 1, l]
                    if h != 0.0:
                        for b in range(nb):
                            mem[b] = mem[b] + h * out_x[l, b]
            for b in range(nb):
                xn = out_x[k + 1, b]
                f = -omega_sq * xn
                if has_src:
                    f = f + src[k + 1, b]
                if has_mem:
                    f = f - mem[b]
                vn = (out_v[k, b] + half_dt * (acc[b] + f)) / denom
                out_v[k + 1, b] = vn
                acc[b] = f - damping * vn


cdef inline double _at(double[:, ::1] w, Py_ssize_t i, Py_ssize_t j, Py_ssize_t n,
                       Py_ssize_t k, bint along_x) nogil:
    """w shifted to index k along one axis, zero outside the grid."""
    if k < 0 or k >= n:
        return 0.0
    if along_x:
        return w[k, j]
    return w[i, k]


cdef inline double _face(double[:, ::1] w, Py_ssize_t i, Py_ssize_t j, Py_ssize_t n,
                         double vel, bint along_x) nogil:
    """Fifth-order upwind-biased value at face i+1/2 (along X) or j+1/2 (along p)."""
    cdef Py_ssize_t m = i if along_x else j
    if vel > 0:
        return (2.0 * _at(w, i, j, n, m - 2, along_x) - 13.0 * _at(w, i, j, n, m - 1, along_x)
                + 47.0 * _at(w, i, j, n, m, along_x) + 27.0 * _at(w, i, j, n, m + 1, along_x)
                - 3.0 * _at(w, i, j, n, m + 2, along_x)) / 60.0
    return (2.0 * _at(w, i, j, n, m + 3, along_x) - 13.0 * _at(w, i, j, n, m + 2, along_x)
            + 47.0 * _at(w, i, j, n, m + 1, along_x) + 27.0 * _at(w, i, j, n, m, along_x)
            - 3.0 * _at(w, i, j, n, m - 1, along_x)) / 60.0


def fp_rhs(double[:, ::1] w, double[::1] xs, double[::1] ps, double dx, double dp,
           double mass, double omega_r_sq, double a, double b, double c,
           double[:, ::1] out):
    cdef Py_ssize_t nx = w.shape[0]
    cdef Py_ssize_t npp = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double vel, flux, dwdp, up, dn, pf
    cdef double inv_dx = 1.0 / dx
    cdef double inv_dp = 1.0 / dp
    with nogil:
        for i in range(nx):
            for j in range(npp):
                out[i, j] = 0.0
        # X-direction faces
        for i in range(nx - 1):
            for j in range(npp):
                vel = ps[j] / mass
                flux = vel * _face(w, i, j, nx, vel, True)
                if b != 0.0:
                    up = 0.0
                    dn = 0.0
                    if j + 1 < npp:
                        up = w[i, j + 1] + w[i + 1, j + 1]
                    if j >= 1:
                        dn = w[i, j - 1] + w[i + 1, j - 1]
                    dwdp = (up - dn) / (4.0 * dp)
                    flux = flux - b * dwdp
                out[i, j] -= flux * inv_dx
                out[i + 1, j] += flux * inv_dx
        # p-direction faces
        for i in range(nx):
            vel = -mass * omega_r_sq * xs[i]
            for j in range(npp - 1):
                flux = vel * _face(w, i, j, npp, vel, False)
                if a != 0.0:
                    pf = 0.5 * (ps[j] + ps[j + 1])
                    flux = flux - 2.0 * a * pf * 0.5 * (w[i, j] + w[i, j + 1])
                if c != 0.0:
                    flux = flux - mass * c * (w[i, j + 1] - w[i, j]) * inv_dp
                out[i, j] -= flux * inv_dp
                out[i, j + 1] += flux * inv_dp
