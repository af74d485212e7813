import numpy as np
import pytest

from stochqbm import (
    CTPSources,
    GaussianState,
    InitialDistribution,
    PhaseGrid,
    build_retarded_green,
    cat_wigner,
    coefficient_table,
    correlator_scan,
    ctp_derivative_correlator,
    eval_ctp,
    make_time_grid,
    markov_gap,
    n_point_symmetrized,
    preset_kernels,
    run_ensemble,
    stochastic_correlator,
    symmetrized_two_point,
)
from stochqbm.ctp import ROUTES, mc_characteristic
from stochqbm.errors import InvalidArgumentError, UnsupportedDistributionError

VAC = InitialDistribution.from_gaussian(GaussianState(0, 0, 0.5, 0, 0.5))
SHIFTED = InitialDistribution.from_gaussian(GaussianState(0.6, -0.2, 0.7, 0.1, 0.5))


@pytest.fixture(scope="module")
def drude_g(drude_small):
    return build_retarded_green(drude_small)


def test_normalization(drude_small, drude_g, rng):
    n = drude_small.grid.n_points
    assert eval_ctp(drude_small, SHIFTED, CTPSources.zeros(n), drude_g) == 1.0
    z = eval_ctp(drude_small, SHIFTED, CTPSources(rng.standard_normal(n), np.zeros(n)), drude_g)
    assert z == 1.0


def test_modulus_independent_of_sigma_source(drude_small, drude_g, rng):
    n = drude_small.grid.n_points
    kd = 0.3 * rng.standard_normal(n)
    a = eval_ctp(drude_small, SHIFTED, CTPSources(np.zeros(n), kd), drude_g)
    for _ in range(3):
        b = eval_ctp(drude_small, SHIFTED, CTPSources(rng.standard_normal(n), kd), drude_g)
        assert abs(abs(a) - abs(b)) <= 1e-12


def test_characteristic_matches_monte_carlo(drude_small, drude_g):
    ens = run_ensemble(drude_small, SHIFTED, 10000, 4)
    t = drude_small.grid.times / drude_small.grid.t_end
    gen = np.random.default_rng(8)
    for _ in range(3):
        kd = 0.4 * gen.standard_normal(3) @ np.array([np.sin((m + 1) * np.pi * t) for m in range(3)])
        z = eval_ctp(drude_small, SHIFTED, CTPSources(np.zeros(len(t)), kd), drude_g)
        mc, err = mc_characteristic(ens, kd)
        assert abs(mc - z) < 3 * err


def test_source_validation():
    with pytest.raises(InvalidArgumentError):
        CTPSources(np.zeros(3), np.zeros(4))


def test_two_point_free_vacuum(free_small):
    g = build_retarded_green(free_small)
    t = free_small.grid.times
    for a, b in ((0, 0), (30, 200), (240, 10)):
        v = symmetrized_two_point(free_small, VAC, g, a, b)
        assert v.value == pytest.approx(0.5 * np.cos(t[a] - t[b]), abs=1e-3)
        assert v.route in ROUTES


def test_two_point_initial_time(drude_small, drude_g):
    assert symmetrized_two_point(drude_small, SHIFTED, drude_g, 0, 0).value == pytest.approx(0.7 + 0.36, rel=1e-14)


def test_two_point_matches_monte_carlo(cl_small):
    g = build_retarded_green(cl_small)
    ens = run_ensemble(cl_small, SHIFTED, 10000, 12)
    for a, b in ((40, 120), (200, 240), (240, 240)):
        ex = symmetrized_two_point(cl_small, SHIFTED, g, a, b).value
        mc, err = stochastic_correlator(ens, a, b)
        assert abs(mc - ex) < 3 * err


def test_non_gaussian_rejected(drude_small, drude_g):
    cat = InitialDistribution.from_field(cat_wigner(3.0, PhaseGrid.symmetric(6, 6, 32, 32)))
    with pytest.raises(UnsupportedDistributionError):
        symmetrized_two_point(drude_small, cat, drude_g, 0, 1)


def test_derivative_correlator(drude_small, drude_g):
    k = drude_small
    assert abs(ctp_derivative_correlator(k, VAC, drude_g, (120,)).value) < 1e-12
    two = symmetrized_two_point(k, SHIFTED, drude_g, 80, 160).value
    d2 = ctp_derivative_correlator(k, SHIFTED, drude_g, (80, 160)).value
    assert d2 == pytest.approx(two, rel=1e-6)
    idx = (40, 80, 120, 160)
    d4 = ctp_derivative_correlator(k, VAC, drude_g, idx).value
    c = {(a, b): ctp_derivative_correlator(k, VAC, drude_g, (a, b)).value for a in idx for b in idx}
    wick = c[40, 80] * c[120, 160] + c[40, 120] * c[80, 160] + c[40, 160] * c[80, 120]
    assert d4 == pytest.approx(wick, rel=1e-4)
    with pytest.raises(InvalidArgumentError):
        ctp_derivative_correlator(k, VAC, drude_g, (1, 2, 3, 4, 5))


def test_n_point(drude_small, drude_g, free_small):
    assert n_point_symmetrized(drude_small, VAC, drude_g, (50,)).value == 0.0
    two = symmetrized_two_point(drude_small, SHIFTED, drude_g, 30, 90).value
    assert n_point_symmetrized(drude_small, SHIFTED, drude_g, (30, 90)).value == two
    g = build_retarded_green(free_small)
    t = free_small.grid.times
    idx = (10, 70, 130, 220)
    c = lambda i, j: 0.5 * np.cos(t[i] - t[j])  # noqa: E731
    wick = c(10, 70) * c(130, 220) + c(10, 130) * c(70, 220) + c(10, 220) * c(70, 130)
    assert n_point_symmetrized(free_small, VAC, g, idx).value == pytest.approx(wick, abs=1e-3)


def _worst_ratio(k, pairs):
    g = build_retarded_green(k)
    tab = coefficient_table(k, g)
    scan = correlator_scan(k, VAC, tab, pairs, g)
    dt = k.grid.dt
    ratios = []
    for (a, b), gap in zip(pairs, scan.gap):
        s = np.sqrt(symmetrized_two_point(k, VAC, g, a, a).value * symmetrized_two_point(k, VAC, g, b, b).value)
        ratios.append(gap / (10 * dt ** 2 * s))
    return max(ratios), scan


def test_markov_gap_local(cl_small, free_small):
    pairs = [(40, 120), (120, 240), (10, 200)]
    assert _worst_ratio(cl_small, pairs)[0] <= 1.0
    assert _worst_ratio(free_small, pairs)[0] <= 1.0


def test_markov_gap_memory(tmp_path):
    k = preset_kernels("drude_nonlocal", {"gamma": 0.1, "temperature": 1.0, "cutoff": 2.0},
                       make_time_grid(0, 8, 401))
    ratio, scan = _worst_ratio(k, [(100, 200), (200, 400)])
    assert ratio > 5
    scan.to_csv(tmp_path / "gap.csv")
    assert (tmp_path / "gap.csv").read_text().splitlines()[0] == "t1,t2,exact,regression,gap,std_err"


def test_markov_gap_order_checked(cl_small):
    g = build_retarded_green(cl_small)
    with pytest.raises(InvalidArgumentError):
        markov_gap(cl_small, VAC, coefficient_table(cl_small, g), 20, 10, g)
