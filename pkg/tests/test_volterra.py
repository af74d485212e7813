import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochqbm import (
    boundary_solutions,
    build_advanced_green,
    build_retarded_green,
    compose_trajectory,
    make_time_grid,
    preset_kernels,
    representation_gap,
    solve_homogeneous_ivp,
    solve_inhomogeneous,
    trapezoid_weights,
)
from stochqbm.errors import DegenerateBoundaryError, InvalidArgumentError
from stochqbm.volterra import propagate_x0, retarded_green_two_solution


@pytest.fixture(scope="module")
def free_fine():
    return preset_kernels("free", {}, make_time_grid(0, 2 * np.pi, 2001))


def test_free_cosine(free_fine):
    tr = solve_homogeneous_ivp(free_fine, 1.0, 0.0)
    assert np.max(np.abs(tr.x - np.cos(free_fine.grid.times))) < 1e-4


def test_zero_data_zero_path(drude_small):
    tr = solve_homogeneous_ivp(drude_small, 0.0, 0.0)
    assert not np.any(tr.x) and not np.any(tr.v)


def test_damped_oscillator_closed_form():
    gam = 0.2
    k = preset_kernels("caldeira_leggett_highT", {"gamma": gam, "temperature": 0.0},
                       make_time_grid(0, 10, 2001))
    t = k.grid.times
    wd = np.sqrt(1 - gam ** 2)
    exact = np.exp(-gam * t) * (np.cos(wd * t) + gam / wd * np.sin(wd * t))
    assert np.max(np.abs(solve_homogeneous_ivp(k, 1.0, 0.0).x - exact)) < 1e-4


def test_constant_force_free(free_fine):
    tr = solve_inhomogeneous(free_fine, np.ones(free_fine.grid.n_points))
    assert np.max(np.abs(tr.x - (1 - np.cos(free_fine.grid.times)))) < 1e-4


def test_zero_source_is_homogeneous(drude_small):
    n = drude_small.grid.n_points
    a = solve_inhomogeneous(drude_small, np.zeros(n), 0.3, -0.2)
    b = solve_homogeneous_ivp(drude_small, 0.3, -0.2)
    np.testing.assert_array_equal(a.x, b.x)


def test_superposition(drude_small, rng):
    n = drude_small.grid.n_points
    s1, s2 = rng.standard_normal(n), rng.standard_normal(n)
    x1 = solve_inhomogeneous(drude_small, s1).x
    x2 = solve_inhomogeneous(drude_small, s2).x
    x12 = solve_inhomogeneous(drude_small, 2 * s1 - 3 * s2).x
    np.testing.assert_allclose(x12, 2 * x1 - 3 * x2, atol=1e-12)


def test_source_shape_checked(drude_small):
    with pytest.raises(InvalidArgumentError):
        solve_inhomogeneous(drude_small, np.zeros(3))


def test_green_free_sine(free_fine):
    g = build_retarded_green(free_fine)
    t = free_fine.grid.times
    s = np.subtract.outer(t, t)
    assert np.max(np.abs(g.g - np.sin(s) * (s > 0))) < 1e-4
    assert not np.any(np.diag(g.g))
    np.testing.assert_allclose(np.diag(g.g_dot), 1.0)


def test_green_dense_operator_oracle(drude_small):
    """Apply a finite-difference version of L to G_ret: L G = delta / dt."""
    k = drude_small
    g = build_retarded_green(k).g
    n, dt, M = k.grid.n_points, k.grid.dt, k.mass
    hw = k.memory_matrix()
    lg = np.zeros((n, n))
    lg[1:-1] = M * (g[2:] - 2 * g[1:-1] + g[:-2]) / dt ** 2 + M * k.system.omega_ren ** 2 * g[1:-1]
    lg[1:-1] += (hw @ g)[1:-1]
    rows, cols = np.tril_indices(n - 1, -1)
    rows, cols = rows[rows >= 1], cols[rows >= 1]
    off = np.max(np.abs(lg[rows, cols]))
    diag = np.max(np.abs(np.diag(lg)[1:-1] * dt - 1))
    assert off < 1e-3
    assert diag < 1e-3


def test_green_threads_identical(drude_small):
    a = build_retarded_green(drude_small, threads=1)
    b = build_retarded_green(drude_small, threads=3)
    assert np.array_equal(a.g, b.g) and np.array_equal(a.g_dot, b.g_dot)


def test_boundary_solutions_free():
    k = preset_kernels("free", {}, make_time_grid(0, np.pi / 2, 401))
    pair = boundary_solutions(k, 400)
    t = k.grid.times
    assert np.max(np.abs(pair.u1.x - np.cos(t))) < 1e-5
    assert np.max(np.abs(pair.u2.x - np.sin(t))) < 1e-5
    for u, (a, b) in ((pair.u1, (1, 0)), (pair.u2, (0, 1))):
        assert abs(u.x[0] - a) < 1e-8 and abs(u.x[-1] - b) < 1e-8


def test_caustic_raises():
    k = preset_kernels("free", {}, make_time_grid(0, 2 * np.pi, 401))
    with pytest.raises(DegenerateBoundaryError) as info:
        boundary_solutions(k, 200)
    assert info.value.index == 200


def test_boundary_values_drude(drude_small):
    pair = boundary_solutions(drude_small, 150)
    assert abs(pair.u1.x[0] - 1) < 1e-8 and abs(pair.u1.x[150]) < 1e-8
    assert abs(pair.u2.x[0]) < 1e-8 and abs(pair.u2.x[150] - 1) < 1e-8


def test_advanced_green_free_closed_form():
    k = preset_kernels("free", {}, make_time_grid(0, 2.0, 801))
    e = 800
    adv = build_advanced_green(k, e)
    t = k.grid.times
    s = np.subtract.outer(t, t)
    exact = -np.sin(s) * (s < 0)
    assert np.max(np.abs(adv.g - exact)) < 1e-5
    assert not np.any(np.tril(adv.g))


def test_advanced_green_final_conditions(drude_small, rng):
    """int G_adv xi vanishes with its slope at the end time, for any source."""
    k = drude_small
    e = 180
    adv = build_advanced_green(k, e, "volterra")
    xi = rng.standard_normal(k.grid.n_points)
    w = trapezoid_weights(e + 1, k.grid.dt, k.grid.n_points)
    x = adv.g @ (w * xi)
    v = adv.g_dot @ (w * xi)
    scale = np.max(np.abs(x[: e + 1]))
    assert abs(x[e]) <= 10 * k.grid.dt ** 2 * scale
    assert abs(v[e]) <= 10 * k.grid.dt ** 2 * scale


def test_advanced_methods_agree_for_local_dynamics(cl_small):
    a = build_advanced_green(cl_small, 200, "two_solution")
    b = build_advanced_green(cl_small, 200, "volterra")
    assert np.max(np.abs(a.g - b.g)) < 1e-3
    with pytest.raises(InvalidArgumentError):
        build_advanced_green(cl_small, 200, "fourier")


def test_propagate_free():
    k = preset_kernels("free", {}, make_time_grid(0, 3, 3001))
    tr = propagate_x0(k, 0.7, -0.4)
    t = k.grid.times
    assert np.max(np.abs(tr.x - (0.7 * np.cos(t) - 0.4 * np.sin(t)))) < 1e-5
    assert not np.any(propagate_x0(k, 0.0, 0.0).x)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_propagate_linear(a, b, c, d):
    k = preset_kernels("drude_nonlocal", {"gamma": 0.1, "temperature": 1.0, "cutoff": 2.0},
                       make_time_grid(0, 2, 41))
    lhs = propagate_x0(k, a + c, b + d).x
    rhs = propagate_x0(k, a, b).x + propagate_x0(k, c, d).x
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_compose_matches_direct_solve(drude_small, rng):
    n = drude_small.grid.n_points
    xi = rng.standard_normal(n)
    g = build_retarded_green(drude_small)
    a = compose_trajectory(drude_small, g, xi, 0.3, 0.1)
    b = solve_inhomogeneous(drude_small, xi, 0.3, 0.1 / drude_small.mass)
    np.testing.assert_allclose(a.x, b.x, atol=1e-12)
    np.testing.assert_allclose(a.v, b.v, atol=1e-12)


def test_compose_free_convolution(free_fine, rng):
    """Free oscillator: X = int sin(t - s) xi(s) ds, checked against Simpson on a smooth source."""
    t = free_fine.grid.times
    xi = np.cos(3 * t) + 0.5
    g = build_retarded_green(free_fine)
    x = compose_trajectory(free_fine, g, xi, 0.0, 0.0).x
    # closed form of int_0^t sin(t-s) (cos 3s + 1/2) ds
    exact = (np.cos(t) - np.cos(3 * t)) / 8 + 0.5 * (1 - np.cos(t))
    assert np.max(np.abs(x - exact)) < 1e-4


def test_representation_gap(cl_small, drude_small):
    assert representation_gap(cl_small) <= 10 * cl_small.grid.dt ** 2
    assert representation_gap(drude_small) > 1e-3
    two = retarded_green_two_solution(cl_small)
    assert not np.any(np.triu(two.g))
