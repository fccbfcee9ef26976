import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splinetomo.bspline import (
    FOOTPRINT_RADIUS,
    BasisSpec,
    CoefficientVolume,
    bspline2_1d,
    exact_project,
    footprint_radius,
    grid_project,
    measure_footprint_radius,
    neighbor_margin,
    oracle_project,
    phi,
    sample_footprint_crossings,
    synthesize,
)
from splinetomo.contribnet import sample_lines
from splinetomo.geometry import Ray

INV_SQRT3 = 1 / math.sqrt(3)


@pytest.mark.parametrize("x, expected", [(0, 0.75), (0.5, 0.5), (-0.5, 0.5), (1.0, 0.125),
                                         (1.5, 0.0), (2.0, 0.0), (-1.25, 0.03125)])
def test_bspline2_values(x, expected):
    assert bspline2_1d(x) == pytest.approx(expected, abs=1e-15)


def test_bspline2_c1_at_knots():
    h = 1e-7
    for k in (-1.5, -0.5, 0.5, 1.5):
        left = (bspline2_1d(k) - bspline2_1d(k - h)) / h
        right = (bspline2_1d(k + h) - bspline2_1d(k)) / h
        assert abs(left - right) < 1e-5
        assert abs(bspline2_1d(k - 1e-12) - bspline2_1d(k + 1e-12)) < 1e-10


@pytest.mark.parametrize("x, expected", [((0, 0, 0), 27 / 64), ((1.5, 0, 0), 0.0),
                                         ((0.5, 0.5, 0.5), 0.125)])
def test_phi_values(x, expected):
    assert phi(x) == pytest.approx(expected, abs=1e-15)


def test_partition_of_unity():
    rng = np.random.default_rng(0)
    x = rng.uniform(-20, 20, (1000, 3))
    base = np.floor(x + 0.5)
    total = np.zeros(len(x))
    for d in np.ndindex(3, 3, 3):
        total += phi(x - (base + np.asarray(d) - 1))
    assert np.max(np.abs(total - 1)) <= 1e-12


def test_synthesize_examples():
    vol = CoefficientVolume.zeros((5, 5, 5))
    assert synthesize(vol, (0.3, -0.2, 1.1)) == 0
    vol.coeffs[2, 2, 2] = 1.0  # lattice index (0, 0, 0)
    assert synthesize(vol, (0, 0, 0)) == pytest.approx(0.421875, abs=1e-15)
    ones = CoefficientVolume(np.ones((6, 6, 6)))
    x = np.random.default_rng(1).uniform(-1.5, 1.5, (50, 3))
    assert np.max(np.abs(synthesize(ones, x) - 1)) <= 1e-12


def test_synthesize_matches_dense_sum():
    rng = np.random.default_rng(2)
    vol = CoefficientVolume(rng.normal(size=(4, 5, 3)), (-1, 3, 0))
    x = rng.uniform(-2, 5, (40, 3)) + np.array([0, 3, 0])
    k = vol.lattice_indices()
    dense = np.array([np.sum(vol.flat * phi(p - k)) for p in x])
    assert np.allclose(synthesize(vol, x), dense, atol=1e-13, rtol=0)


def test_basis_spec():
    spec = BasisSpec()
    assert spec.support_half_width == 1.5
    assert spec.footprint_radius_L >= spec.support_half_width
    assert spec.neighbor_margin == 4
    with pytest.raises(NotImplementedError):
        BasisSpec(degree=3)
    with pytest.raises(ValueError):
        BasisSpec(footprint_radius_L=1.0)


def test_coefficient_volume_layout():
    vol = CoefficientVolume(np.arange(24.0).reshape(2, 3, 4))
    assert vol.origin_index == (-1, -1, -2)
    idx = vol.lattice_indices()
    assert tuple(idx[0]) == (-1, -1, -2) and tuple(idx[1]) == (-1, -1, -1)
    assert tuple(idx[4]) == (-1, 0, -2)  # k1-major: last axis fastest
    with pytest.raises(ValueError):
        CoefficientVolume(np.array([[[np.nan]]]))


# -- line integrals ---------------------------------------------------------------------

@pytest.mark.parametrize("s, expected", [
    ((0, 0, 0), 0.5625),         # 1 * b2(0)^2
    ((0, 0.5, 0), 0.375),        # b2(0) b2(0.5)
    ((0, 1.0, 1.0), 0.015625),   # b2(1)^2
    ((0, 0, 1.5), 0.0),          # grazes the support
    ((0, 0, 7.0), 0.0),
])
def test_axis_aligned_integrals(s, expected):
    ray = Ray(np.array([1.0, 0, 0]), np.asarray(s, float))
    assert oracle_project(ray) == pytest.approx(expected, abs=1e-12)
    assert exact_project(ray.omega, ray.s) == pytest.approx(expected, abs=1e-14)


def test_diagonal_ray_refinement():
    ray = Ray(np.full(3, INV_SQRT3), np.zeros(3))
    coarse = oracle_project(ray, step=1 / 256)
    fine = oracle_project(ray, step=1 / 1024)
    assert abs(coarse - fine) <= 1e-8
    assert abs(fine - exact_project(ray.omega, ray.s)) <= 1e-10


def test_exact_matches_simpson_random():
    rng = np.random.default_rng(3)
    om, s = sample_lines(rng, 200, FOOTPRINT_RADIUS)
    ex = exact_project(om, s)
    simpson = np.array([oracle_project(Ray(o, x)) for o, x in zip(om, s)])
    assert np.max(np.abs(ex - simpson)) <= 1e-8
    assert np.count_nonzero(ex) > 30


def test_grid_cross_check():
    rng = np.random.default_rng(4)
    om, s = sample_lines(rng, 50, FOOTPRINT_RADIUS)
    for o, x in zip(om, s):
        ray = Ray(o, x)
        assert abs(grid_project(ray) - oracle_project(ray)) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_oracle_symmetries(seed):
    rng = np.random.default_rng(seed)
    (om,), (s,) = sample_lines(rng, 1, FOOTPRINT_RADIUS)
    k = rng.integers(-5, 6, 3).astype(float)
    ray = Ray(om, s)
    val = oracle_project(ray)
    assert abs(oracle_project(Ray(-om, s)) - val) <= 1e-10
    shifted = Ray.through(s + k, om)
    assert abs(oracle_project(shifted, center=k) - val) <= 1e-10


def test_mass_over_footprint_disk():
    rng = np.random.default_rng(5)
    om, s = sample_lines(rng, 100_000, FOOTPRINT_RADIUS)
    mass = np.mean(exact_project(om, s)) * math.pi * FOOTPRINT_RADIUS**2
    assert mass == pytest.approx(1.0, rel=0.01)


# -- footprint ----------------------------------------------------------------------------

def test_footprint_constant():
    L = footprint_radius()
    assert L >= 1.5
    assert L == FOOTPRINT_RADIUS
    assert neighbor_margin(L) == 4


def test_sampled_crossings_inside_footprint():
    r = sample_footprint_crossings(200_000, np.random.default_rng(6))
    assert r.max() <= footprint_radius()
    assert r.max() <= 3 * math.sqrt(2) + 1e-9
    assert r.max() >= 3 * math.sqrt(2) - 5e-3


def test_footprint_rounding_rule():
    sup = measure_footprint_radius(200_000, seed=1)
    assert math.ceil(sup * 1e4) / 1e4 == FOOTPRINT_RADIUS


def test_crossing_outside_footprint_gives_zero():
    rng = np.random.default_rng(7)
    om, s = sample_lines(rng, 2000, 3 * FOOTPRINT_RADIUS)
    far = np.linalg.norm(s, axis=1) > FOOTPRINT_RADIUS
    # the crossing on the dominant plane is farther than the offset itself
    assert np.all(exact_project(om[far], s[far]) == 0)
