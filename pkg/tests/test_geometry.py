import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splinetomo.bspline import exact_project
from splinetomo.geometry import (
    GeometryError,
    Ray,
    cone_pitch,
    default_cone_distances,
    dominant_axis,
    geometry_from_descriptor,
    load_geometry,
    make_cone_beam,
    make_parallel_beam,
    plane_basis,
    project_onto_plane,
)

unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))
points = st.tuples(*[st.floats(-50, 50, allow_nan=False)] * 3).map(np.asarray)


def assert_ray_invariants(geo):
    assert np.allclose(np.linalg.norm(geo.omegas, axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.max(np.abs(np.sum(geo.omegas * geo.offsets, axis=1))) <= 1e-9


@pytest.mark.parametrize("x, omega, expected", [
    ((1, 0, 0), (1, 0, 0), (0, 0, 0)),
    ((0, 2, 3), (1, 0, 0), (0, 2, 3)),
    ((1, 1, 0), (1 / math.sqrt(2), 1 / math.sqrt(2), 0), (0, 0, 0)),
])
def test_project_onto_plane_examples(x, omega, expected):
    assert np.allclose(project_onto_plane(x, omega), expected, atol=1e-15)


@given(points, unit_vectors)
def test_projection_is_orthogonal_and_idempotent(x, omega):
    p = project_onto_plane(x, omega)
    assert abs(p @ omega) <= 1e-9
    assert np.allclose(project_onto_plane(p, omega), p, atol=1e-12, rtol=0)


def test_dominant_axis_examples():
    assert dominant_axis((1, 0, 0)) == 1
    assert dominant_axis((0.1, 0.9, math.sqrt(1 - 0.82))) == 2
    assert dominant_axis((1 / math.sqrt(2), 1 / math.sqrt(2), 0)) == 1


@given(unit_vectors)
def test_dominant_axis_sign_invariant(omega):
    assert dominant_axis(omega) == dominant_axis(-omega)


@given(unit_vectors)
def test_plane_basis_orthonormal(omega):
    b = plane_basis(omega)
    for w in (b.u, b.v):
        assert abs(np.linalg.norm(w) - 1) <= 1e-12
        assert abs(w @ omega) <= 1e-12
    assert abs(b.u @ b.v) <= 1e-12
    assert np.allclose(b.v, np.cross(b.u, omega), atol=1e-12, rtol=0)
    again = plane_basis(omega.copy())
    assert np.array_equal(b.u, again.u) and np.array_equal(b.v, again.v)


@pytest.mark.parametrize("omega", [(0, 0, 1), (1, 0, 0)])
def test_plane_basis_axis_aligned(omega):
    omega = np.asarray(omega, float)
    b = plane_basis(omega)
    assert abs(b.u @ omega) == 0 and abs(b.v @ omega) == 0
    assert np.linalg.norm(b.u) == 1 and np.linalg.norm(b.v) == 1


def test_ray_through_normalizes_offset():
    r = Ray.through((3.0, 4.0, 5.0), (0, 0, 2))
    assert np.allclose(r.omega, (0, 0, 1))
    assert np.allclose(r.s, (3.0, 4.0, 0.0))


def test_cone_central_ray():
    geo = make_cone_beam(1, 1, 1, 10.0, 10.0, 1.0)
    assert geo.num_rays == 1
    assert np.allclose(geo.omegas[0], (0, 1, 0))
    assert np.allclose(geo.offsets[0], 0)


def test_cone_view_rotation():
    geo = make_cone_beam(4, 1, 1, 10.0, 7.0, 1.0)
    # central rays of views 0 and 2 are opposite; sources at -10*omega
    assert np.allclose(geo.omegas[2], -geo.omegas[0], atol=1e-15)
    src0 = -10.0 * geo.omegas[0]
    rot = np.diag([1.0, -1.0, -1.0])  # rotation by pi about e1
    assert np.allclose(-10.0 * geo.omegas[2], rot @ src0, atol=1e-12)


def test_cone_rays_pass_through_source():
    geo = make_cone_beam(3, 4, 5, 30.0, 20.0, 0.7)
    assert_ray_invariants(geo)
    for v in range(3):
        rays = slice(v * 20, (v + 1) * 20)
        om, s = geo.omegas[rays], geo.offsets[rays]
        a = geo.angles[v]
        src = -30.0 * np.array([0.0, math.cos(a), math.sin(a)])
        # distance of the source from each line is zero
        d = project_onto_plane(src - s, om)
        assert np.max(np.linalg.norm(d, axis=1)) < 1e-10


def test_cone_rejects_source_inside_volume():
    with pytest.raises(GeometryError):
        make_cone_beam(4, 2, 2, 5.0, 5.0, 1.0, volume_extent=(8, 8, 8))


@pytest.mark.parametrize("bad", [dict(num_views=0), dict(detector_rows=-1), dict(pixel_pitch=0.0)])
def test_invalid_counts(bad):
    kwargs = dict(num_views=2, detector_rows=2, detector_cols=2, source_distance=10.0,
                  detector_distance=10.0, pixel_pitch=1.0) | bad
    with pytest.raises(GeometryError):
        make_cone_beam(**kwargs)


def test_parallel_view_zero_along_e2():
    geo = make_parallel_beam(1, 3, 4, 0.5)
    assert np.allclose(geo.omegas, (0, 1, 0))
    assert_ray_invariants(geo)
    assert len({tuple(s) for s in np.round(geo.offsets, 12)}) == 12


def test_parallel_opposed_views_symmetric_phantom():
    # a single basis function at the origin is point-symmetric, so views at
    # 0 and pi see mirrored detectors with identical values
    geo = make_parallel_beam(2, 3, 5, 0.4, angles=[0.0, math.pi])
    vals = exact_project(geo.omegas, geo.offsets).reshape(geo.detector_shape)
    assert np.allclose(vals[0], vals[1][:, ::-1], atol=1e-13)
    assert vals.max() > 0.1


def test_ray_order_view_major():
    geo = make_parallel_beam(3, 2, 2, 1.0)
    assert geo.detector_shape == (3, 2, 2)
    sub = geo.subset([2, 0])
    assert np.array_equal(sub.omegas[:4], geo.omegas[8:12])
    assert np.array_equal(sub.offsets[4:], geo.offsets[:4])


@pytest.mark.parametrize("kind", ["cone", "parallel"])
def test_descriptor_round_trip(tmp_path, kind):
    if kind == "cone":
        geo = make_cone_beam(5, 3, 4, 40.0, 30.0, 1.3, volume_extent=(8, 8, 4), rotation_axis=3)
    else:
        geo = make_parallel_beam(5, 3, 4, 1.3, rotation_axis=2)
    path = tmp_path / "g.json"
    geo.to_json(path)
    back = load_geometry(path)
    assert back.digest() == geo.digest()
    assert np.array_equal(back.omegas, geo.omegas)
    assert np.array_equal(back.offsets, geo.offsets)
    d = json.loads(path.read_text())
    assert "omegas" not in d
    d["pixel_pitch"] = 1.31
    assert geometry_from_descriptor(d).digest() != geo.digest()


def test_descriptor_missing_field():
    with pytest.raises(GeometryError):
        geometry_from_descriptor({"kind": "cone_beam", "num_views": 3})


def test_default_distances_and_pitch_cover_cylinder():
    shape = (16, 16, 8)
    sd, dd = default_cone_distances(shape)
    assert sd == dd == pytest.approx(3 * math.sqrt(16**2 + 16**2 + 8**2))
    pitch = cone_pitch(shape, 3, sd, dd, 8, 16)
    geo = make_cone_beam(8, 8, 16, sd, dd, pitch, rotation_axis=3)
    # every point of the inscribed cylinder is crossed by the detector cone:
    # the outermost rays pass outside the cylinder radius and height
    s = geo.offsets.reshape(8, 8, 16, 3)
    lateral = np.linalg.norm(s[0, 4, [0, -1], :2], axis=1)
    assert np.all(lateral > 8.0)


@settings(max_examples=25)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_generated_rays_satisfy_invariants(views, rows, cols, axis):
    assert_ray_invariants(make_cone_beam(views, rows, cols, 50.0, 30.0, 0.9, rotation_axis=axis))
    assert_ray_invariants(make_parallel_beam(views, rows, cols, 0.9, rotation_axis=axis))
