import csv

import numpy as np
import pytest

from splinetomo.bspline import CoefficientVolume, phi, synthesize
from splinetomo.geometry import make_parallel_beam
from splinetomo.raytrace import Projector
from splinetomo.recon import (
    PSNR_CAP,
    ReconConfig,
    ReconError,
    Sinogram,
    cgls,
    cgls_solve,
    psnr,
    sample_volume,
    simulate_measurements,
)


def dense_views(n_views=12, n=9):
    """Parallel views around all three axes."""
    geos = [make_parallel_beam(n_views, n, n, 1.0, rotation_axis=a) for a in (1, 2, 3)]
    om = np.concatenate([g.omegas for g in geos])
    off = np.concatenate([g.offsets for g in geos])
    g = geos[0]
    g.omegas, g.offsets, g.num_views = om, off, 3 * n_views
    g.angles = np.concatenate([x.angles for x in geos])
    return g


class DenseOp:
    """Wraps an explicit matrix as a forward/adjoint pair."""

    def __init__(self, A, adjoint=None):
        self.A = A
        self.At = A.T if adjoint is None else adjoint
        self.n_coeffs = A.shape[1]

    def forward(self, x):
        return self.A @ x

    def adjoint(self, y):
        return self.At @ y

    def dot_test(self, rng):
        x, y = rng.normal(size=self.A.shape[1]), rng.normal(size=self.A.shape[0])
        a, b = self.forward(x) @ y, x @ self.adjoint(y)
        return abs(a - b) / max(abs(a), abs(b))


def test_simulate_noise_free_and_seeded(random_net):
    geo = make_parallel_beam(3, 4, 4, 1.0)
    vol = CoefficientVolume(np.random.default_rng(0).uniform(size=(5, 5, 5)))
    op = Projector(geo, vol.shape, net=random_net)
    clean = simulate_measurements(vol, geo, op, noise_variance=0.0)
    assert np.array_equal(clean.values, op.forward(vol.flat))
    a = simulate_measurements(vol, geo, op, 1e-3, seed=4)
    b = simulate_measurements(vol, geo, op, 1e-3, seed=4)
    assert np.array_equal(a.values, b.values)
    assert a.geometry_digest == geo.digest()


def test_noise_variance():
    geo = make_parallel_beam(10, 100, 100, 0.1)
    vol = CoefficientVolume.zeros((2, 2, 2))
    op = Projector(geo, vol.shape, projector="voxel")
    y = simulate_measurements(vol, geo, op, noise_variance=2e-3, seed=1).values
    assert len(y) >= 100_000
    assert np.var(y) == pytest.approx(2e-3, rel=0.05)


def test_cgls_zero_data():
    A = np.random.default_rng(0).normal(size=(30, 10))
    x, rows = cgls(DenseOp(A), np.zeros(30), 5)
    assert not np.any(x)
    assert all(r[1] == 0 for r in rows)


def test_cgls_matches_lstsq():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(40, 12))
    y = rng.normal(size=40)
    x, rows = cgls(DenseOp(A), y, 30)
    ref = np.linalg.lstsq(A, y, rcond=None)[0]
    assert np.allclose(x, ref, atol=1e-10)
    obj = [r[1] for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(obj, obj[1:]))


@pytest.mark.parametrize("projector", ["voxel", "splinesplat"])
def test_cgls_recovers_consistent_data(trained_net, projector):
    geo = dense_views()
    c = np.random.default_rng(2).uniform(size=(6, 6, 6))
    op = Projector(geo, c.shape, projector=projector, net=trained_net)
    y = op.forward(c.ravel())
    x, rows = cgls(op, y, 200)
    assert np.linalg.norm(x - c.ravel()) <= 1e-4 * np.linalg.norm(c)
    obj = [r[1] for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(obj, obj[1:]))


def test_cgls_nonfinite_aborts():
    A = np.ones((3, 2))
    A[0, 0] = np.inf
    with pytest.raises(ReconError, match="iteration 1"), np.errstate(all="ignore"):
        cgls(DenseOp(A, adjoint=np.ones((2, 3))), np.ones(3), 3)


def test_cgls_solve_refusals(random_net, tmp_path):
    geo = make_parallel_beam(2, 3, 3, 1.0)
    other = make_parallel_beam(2, 3, 3, 1.2)
    sino = Sinogram(np.ones(geo.num_rays), other.digest())
    with pytest.raises(ReconError, match="geometry"):
        cgls_solve(geo, sino, ReconConfig(iterations=2), vol_shape=(4, 4, 4), net=random_net)
    sino = Sinogram(np.ones(geo.num_rays), geo.digest())
    bad = DenseOp(np.ones((geo.num_rays, 64)), adjoint=np.zeros((64, geo.num_rays)))
    bad.name, bad.shape, bad.origin = "splinesplat", (4, 4, 4), (-2, -2, -2)
    with pytest.raises(ReconError, match="mismatch"):
        cgls_solve(geo, sino, ReconConfig(iterations=2), operator=bad)
    result = cgls_solve(geo, sino, ReconConfig(iterations=3), vol_shape=(4, 4, 4), net=random_net)
    assert len(result.log) == 4
    result.write_log(tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["iteration", "objective", "normal_residual"] and len(rows) == 5


def test_recon_config_validation():
    with pytest.raises(ValueError):
        ReconConfig(iterations=0)
    with pytest.raises(ValueError):
        ReconConfig(noise_variance=-1)
    with pytest.raises(ValueError):
        ReconConfig(projector="fancy")
    with pytest.raises(ValueError):
        Sinogram([1.0, np.nan], "x")


def test_psnr_examples():
    ref = np.random.default_rng(3).uniform(size=(4, 4, 4))
    assert psnr(ref, ref) == PSNR_CAP
    assert psnr(np.zeros(8), np.full(8, 2.0), peak=2.0) == pytest.approx(0.0, abs=1e-12)
    test = np.zeros(1000)
    test[::2] = np.sqrt(2e-3)  # MSE 1e-3
    assert psnr(np.zeros(1000), test, peak=1.0) == pytest.approx(30.0, abs=1e-9)
    with pytest.raises(ValueError):
        psnr(ref, ref[:2])


def test_sample_volume():
    ones = CoefficientVolume(np.ones((6, 6, 6)))
    assert np.allclose(sample_volume(ones)[1:-1, 1:-1, 1:-1], 1.0, atol=1e-12)
    unit = CoefficientVolume.zeros((5, 5, 5))
    unit.coeffs[2, 2, 2] = 1.0
    grid = sample_volume(unit, (9, 9, 9), (-2, -2, -2), spacing=0.5)
    x = np.stack(np.meshgrid(*[np.arange(9) * 0.5 - 2] * 3, indexing="ij"), axis=-1)
    assert np.allclose(grid, phi(x), atol=1e-15)
    rnd = CoefficientVolume(np.random.default_rng(4).normal(size=(5, 6, 4)), (0, -3, 2))
    pts = np.stack(np.meshgrid(np.arange(5), np.arange(6) - 3, np.arange(4) + 2, indexing="ij"), -1)
    assert np.allclose(sample_volume(rnd), synthesize(rnd, pts), atol=1e-13)
