import numpy as np
import pytest

from stochqbm import (
    CoefficientTable,
    GaussianState,
    InitialDistribution,
    PhaseGrid,
    WignerField,
    cat_wigner,
    coefficient_table,
    compare_wigner,
    estimate_wigner,
    evolve_fp,
    evolve_gaussian,
    field_moments,
    gaussian_wigner,
    make_time_grid,
    negative_mass,
    preset_kernels,
    run_ensemble,
)
from stochqbm.cli import moment_relative_error
from stochqbm.errors import BoundaryLeakError, InvalidArgumentError, InvalidComparisonError
from stochqbm.langevin import WignerEstimate

VAC = GaussianState(0, 0, 0.5, 0, 0.5)


def _zero_table(grid):
    z = np.zeros(grid.n_points)
    return CoefficientTable(grid, z, z, z, z)


def test_phase_grid_validation():
    with pytest.raises(InvalidArgumentError):
        PhaseGrid(0, 1, 0, 1, 8, 32)
    with pytest.raises(InvalidArgumentError):
        PhaseGrid(1, 0, 0, 1, 32, 32)


def test_vacuum_peak():
    fld = gaussian_wigner(VAC, PhaseGrid.symmetric(6, 6, 121, 121))
    assert fld.values[60, 60] == pytest.approx(1 / np.pi, rel=1e-6)


def test_translation():
    pg = PhaseGrid.symmetric(6, 6, 120, 120)
    a = gaussian_wigner(GaussianState(1.0, -0.5, 0.5, 0, 0.5), pg).values
    b = gaussian_wigner(VAC, pg).values
    # dx = dp = 0.1: the shift is 10 cells in X and -5 cells in p
    np.testing.assert_allclose(a[10:, :115], b[:-10, 5:], atol=1e-12)


def test_round_trip_moments():
    s = GaussianState(0.4, -0.3, 0.6, 0.12, 0.7)
    m, norm = field_moments(gaussian_wigner(s, PhaseGrid.symmetric(8, 8, 400, 400)))
    np.testing.assert_allclose(m.as_array(), s.as_array(), atol=1e-6)
    assert norm == pytest.approx(1, abs=1e-12)


def test_cat_properties():
    pg = PhaseGrid.symmetric(7, 7, 200, 200)
    cat = cat_wigner(3.0, pg)
    assert cat.values.min() < 0
    assert cat.truncation_mass < 1e-6
    m, _ = field_moments(cat)
    assert m.cov_xx > 0.5 + 2.0
    single = gaussian_wigner(VAC, pg)
    np.testing.assert_allclose(cat_wigner(1e-8, pg).values, single.values, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        cat_wigner(0.0, pg)


def test_raster_and_csv(tmp_path):
    fld = cat_wigner(3.0, PhaseGrid.symmetric(6, 6, 32, 32))
    fld.save_raster(tmp_path / "w.bin")
    back = WignerField.load_raster(tmp_path / "w.bin")
    assert back.grid == fld.grid and np.array_equal(back.values, fld.values)
    fld.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "X,p,value" and len(lines) == 32 * 32 + 1


def test_free_period_returns():
    k = preset_kernels("free", {}, make_time_grid(0, 2 * np.pi, 101))
    f0 = cat_wigner(3.0, PhaseGrid.symmetric(6, 6, 128, 128))
    f1 = evolve_fp(f0, _zero_table(k.grid), k.system, (0, 2 * np.pi))
    l2 = np.sqrt(np.sum((f1.values - f0.values) ** 2) / np.sum(f0.values ** 2))
    assert l2 <= 0.02
    assert negative_mass(f1) == pytest.approx(negative_mass(f0), rel=0.02)
    assert abs(f1.mass - f0.mass) <= 1e-6 * 2 * np.pi


@pytest.mark.parametrize("preset,params", [
    ("free", {}),
    ("caldeira_leggett_highT", {"gamma": 0.2, "temperature": 2.0}),
    ("drude_nonlocal", {"gamma": 0.1, "temperature": 1.0, "cutoff": 2.0}),
])
def test_gaussian_closure(preset, params):
    k = preset_kernels(preset, params, make_time_grid(0, 4, 161))
    s0 = GaussianState(0.8, 0.3, 0.5, 0.0, 0.5)
    tab = coefficient_table(k)
    states = evolve_gaussian(s0, tab, k.system)
    f = gaussian_wigner(s0, PhaseGrid.symmetric(7, 7, 128, 128))
    for a, b in ((0, 80), (80, 160)):
        f = evolve_fp(f, tab, k.system, (k.grid.times[a], k.grid.times[b]))
        m, norm = field_moments(f)
        assert moment_relative_error(m, states[b]) <= 0.01
        assert norm == pytest.approx(1, abs=1e-6)


def test_cat_decoherence_monotone():
    k = preset_kernels("caldeira_leggett_highT", {"gamma": 0.05, "temperature": 0.5}, make_time_grid(0, 3, 121))
    frames = []
    f0 = cat_wigner(3.0, PhaseGrid.symmetric(6, 6, 128, 128))
    evolve_fp(f0, coefficient_table(k), k.system, (0, 3), frames, 5)
    neg = [negative_mass(f0)] + [negative_mass(f) for f in frames]
    assert np.all(np.diff(neg) <= 1e-4 * neg[0])
    assert neg[-1] < 0.5 * neg[0]


def test_leak_detected():
    k = preset_kernels("free", {}, make_time_grid(0, 2, 41))
    f0 = gaussian_wigner(GaussianState(2.0, 0, 0.5, 0, 0.5), PhaseGrid.symmetric(3.5, 3.5, 48, 48))
    with pytest.raises(BoundaryLeakError):
        evolve_fp(f0, _zero_table(k.grid), k.system, (0, 2))


def test_span_validated():
    k = preset_kernels("free", {}, make_time_grid(0, 2, 41))
    f0 = gaussian_wigner(VAC, PhaseGrid.symmetric(5, 5, 32, 32))
    with pytest.raises(InvalidArgumentError):
        evolve_fp(f0, _zero_table(k.grid), k.system, (0, 3))


def _as_estimate(fld, count=10 ** 9):
    return WignerEstimate(fld.grid, fld.values, np.full(fld.values.shape, 1e-3), 0, count)


def test_compare_identical_and_mismatched():
    pg = PhaseGrid.symmetric(5, 5, 32, 32)
    vac = gaussian_wigner(VAC, pg)
    rep = compare_wigner(vac, _as_estimate(vac))
    assert rep.l1_distance == 0 and rep.frac_over_3 == 0
    hot = gaussian_wigner(GaussianState(0, 0, 2.0, 0, 2.0), pg)
    bad = compare_wigner(vac, _as_estimate(hot))
    assert bad.l1_distance > 0.3 and bad.frac_over_3 > 0.2
    far = WignerField(PhaseGrid(20, 30, 20, 30, 32, 32), vac.values)
    with pytest.raises(InvalidComparisonError):
        compare_wigner(far, _as_estimate(vac))


def test_compare_block_average_and_interpolation():
    fine = gaussian_wigner(VAC, PhaseGrid.symmetric(5, 5, 128, 128))
    coarse_grid = PhaseGrid.symmetric(5, 5, 32, 32)
    exact = gaussian_wigner(VAC, PhaseGrid.symmetric(5, 5, 1280, 1280)).values.reshape(32, 40, 32, 40).mean(axis=(1, 3))
    est = WignerEstimate(coarse_grid, exact, np.full((32, 32), 1e-3), 0, 10 ** 9)
    # block averages agree with exact bin averages to O(dx_fine^2); point
    # samples at the coarse centers would be off by several 1e-3
    assert compare_wigner(fine, est).max_abs_z < 1
    shifted = WignerEstimate(PhaseGrid.symmetric(4, 4, 20, 20), np.zeros((20, 20)), np.ones((20, 20)), 0, 10)
    assert np.isfinite(compare_wigner(fine, shifted).l1_distance)


def test_vacuum_mc_versus_grid(free_small):
    ens = run_ensemble(free_small, InitialDistribution.from_gaussian(VAC), 10000, 2)
    f = evolve_fp(gaussian_wigner(VAC, PhaseGrid.symmetric(5, 5, 128, 128)), _zero_table(free_small.grid),
                  free_small.system, (0, free_small.grid.times[120]))
    rep = compare_wigner(f, estimate_wigner(ens, 120, PhaseGrid.symmetric(5, 5, 32, 32)))
    assert rep.frac_over_3 < 0.01
