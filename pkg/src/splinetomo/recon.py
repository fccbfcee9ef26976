"""Least-squares reconstruction, measurement simulation and image metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bspline import CoefficientVolume, bspline2_1d
from .contribnet import ContribNet
from .geometry import ScanGeometry
from .raytrace import PROJECTORS, Projector, ShapeMismatchError

log = logging.getLogger(__name__)

PSNR_CAP = 99.99


class ReconError(RuntimeError):
    """Reconstruction could not start or diverged."""


@dataclass
class Sinogram:
    values: np.ndarray
    geometry_digest: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram values must be finite")

    def __len__(self):
        return self.values.shape[0]


@dataclass
class ReconConfig:
    iterations: int = 50
    projector: str = "splinesplat"
    initial_coeffs: np.ndarray | None = None
    rng_seed: int = 0
    noise_variance: float = 1e-3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be >= 0")
        if self.projector not in PROJECTORS:
            raise ValueError(f"unknown projector {self.projector!r}")


@dataclass
class ReconResult:
    volume: CoefficientVolume
    log: list = field(default_factory=list)  # (iteration, objective, normal residual)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "objective", "normal_residual"])
            for row in self.log:
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def add_noise(clean: np.ndarray, noise_variance: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if noise_variance == 0:
        return clean.copy()
    return clean + rng.normal(0.0, math.sqrt(noise_variance), size=clean.shape)


def simulate_measurements(vol: CoefficientVolume, geometry: ScanGeometry, projector,
                          noise_variance: float = 1e-3, seed: int = 0) -> Sinogram:
    """``y = P c + n`` with i.i.d. zero-mean Gaussian ``n``.

    ``projector`` is a :class:`Projector` built for ``geometry`` and the
    volume box.
    """
    if projector.geometry is not geometry and projector.geometry.digest() != geometry.digest():
        raise ShapeMismatchError("projector was built for another geometry")
    if tuple(vol.shape) != projector.shape:
        raise ShapeMismatchError(f"volume {vol.shape} vs projector {projector.shape}")
    clean = projector.forward(vol.flat)
    return Sinogram(add_noise(clean, noise_variance, seed), geometry.digest())


def cgls(op: Projector, y: np.ndarray, iterations: int, x0: np.ndarray | None = None):
    """Conjugate gradient on the normal equations, using only ``op.forward`` and
    ``op.adjoint``.  Returns ``(x, log)`` with one ``(iteration, ||Ax - y||,
    ||A^T (Ax - y)||)`` row per iteration, iteration 0 being the start."""
    x = np.zeros(op.n_coeffs) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    r = y - op.forward(x) if x0 is not None else y.copy()
    s = op.adjoint(r)
    p = s.copy()
    gamma = float(s @ s)
    rows = [(0, float(np.linalg.norm(r)), math.sqrt(gamma))]
    for it in range(1, iterations + 1):
        if gamma == 0.0:
            rows.append((it, rows[-1][1], 0.0))
            continue
        q = op.forward(p)
        qq = float(q @ q)
        if qq == 0.0:
            rows.append((it, rows[-1][1], math.sqrt(gamma)))
            continue
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        s = op.adjoint(r)
        gamma_new = float(s @ s)
        if not (math.isfinite(gamma_new) and np.all(np.isfinite(x))):
            raise ReconError(f"non-finite iterate at iteration {it}")
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
        rows.append((it, float(np.linalg.norm(r)), math.sqrt(gamma)))
    return x, rows


def adjoint_preflight(op: Projector, seed: int = 0, tol: float = 1e-10) -> float:
    err = op.dot_test(np.random.default_rng(seed))
    if not err <= tol:
        raise ReconError(f"forward/adjoint mismatch: relative dot-test error {err:.3e} > {tol:g}")
    return err


def cgls_solve(geometry: ScanGeometry, sinogram: Sinogram, cfg: ReconConfig, vol_shape=None,
               net: ContribNet | None = None, operator: Projector | None = None,
               origin=None) -> ReconResult:
    """Least-squares fit of coefficients (or voxel values) to ``sinogram``.

    A prebuilt ``operator`` is reused when given; otherwise one is built from
    ``cfg.projector``, ``vol_shape`` and ``net``.
    """
    if sinogram.geometry_digest != geometry.digest():
        raise ReconError("sinogram was not measured with this geometry")
    if len(sinogram) != geometry.num_rays:
        raise ShapeMismatchError(f"{len(sinogram)} values for {geometry.num_rays} rays")
    if operator is None:
        if vol_shape is None:
            raise ValueError("vol_shape or operator is required")
        operator = Projector(geometry, vol_shape, origin, cfg.projector, net)
    elif operator.name != cfg.projector:
        raise ReconError(f"operator is {operator.name!r}, config asks for {cfg.projector!r}")
    adjoint_preflight(operator)
    x0 = None if cfg.initial_coeffs is None else np.asarray(cfg.initial_coeffs).ravel()
    x, rows = cgls(operator, sinogram.values, cfg.iterations, x0)
    vol = CoefficientVolume(x.reshape(operator.shape), operator.origin)
    return ReconResult(vol, rows)


def psnr(reference, test, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP``."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ShapeMismatchError(f"{reference.shape} vs {test.shape}")
    peak = float(reference.max()) if peak is None else float(peak)
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


def sample_volume(vol: CoefficientVolume, grid_shape=None, grid_origin=None, spacing: float = 1.0):
    """Evaluate the spline expansion on a regular grid (the lattice by default).

    The generator is separable, so the grid values are three 1-D weight
    matrices applied along the axes.
    """
    grid_shape = vol.shape if grid_shape is None else tuple(grid_shape)
    grid_origin = vol.origin_index if grid_origin is None else tuple(grid_origin)
    out = vol.coeffs
    for axis in range(3):
        x = grid_origin[axis] + spacing * np.arange(grid_shape[axis])
        k = vol.origin_index[axis] + np.arange(vol.shape[axis])
        B = bspline2_1d(x[:, None] - k[None, :])
        out = np.moveaxis(np.tensordot(B, out, axes=([1], [axis])), 0, axis)
    return out
