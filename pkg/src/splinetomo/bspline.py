"""Tensor-product quadratic B-spline generator and its exact line integrals.

The generator is ``phi(x) = b2(x1) b2(x2) b2(x3)`` with the centred quadratic
B-spline ``b2`` supported on ``[-3/2, 3/2]``.  Three routes to the line
integral of ``phi`` are provided:

* :func:`oracle_project` -- composite Simpson over the clipped chord, the
  reference used by the tests and acceptance checks;
* :func:`exact_project` -- vectorised piecewise Gauss-Legendre.  Along a line
  ``phi`` is a polynomial of degree <= 6 between the knot crossings, so four
  nodes per piece integrate it exactly.  Used to label training data;
* :func:`grid_project` -- resample ``phi`` on a fine grid and integrate with a
  trilinear-interpolation projector, as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ray

DEGREE = 2
SUPPORT_HALF_WIDTH = 1.5

# Maximal footprint radius of the generator: supremum of the crossing radius on
# the dominant-axis plane over all rays hitting the support, rounded up at the
# 4th decimal.  Reproduced by scripts/footprint_oracle.py (analytic value 3*sqrt(2)).
FOOTPRINT_RADIUS = 4.2427

_KNOTS = np.array([-1.5, -0.5, 0.5, 1.5])
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class BasisSpec:
    degree: int = DEGREE
    support_half_width: float = SUPPORT_HALF_WIDTH
    footprint_radius_L: float = FOOTPRINT_RADIUS

    def __post_init__(self):
        if self.degree != DEGREE:
            raise NotImplementedError("only quadratic B-splines are implemented")
        if self.support_half_width != (self.degree + 1) / 2:
            raise ValueError("support half-width must be (degree + 1) / 2")
        if self.footprint_radius_L < self.support_half_width:
            raise ValueError("footprint radius cannot be below the support half-width")

    @property
    def neighbor_margin(self) -> int:
        """Half-width of the neighbour window, ``ceil(L - 1/2)``."""
        return neighbor_margin(self.footprint_radius_L)

    @property
    def tag(self) -> str:
        return f"bspline{self.degree}-tp/L={self.footprint_radius_L:.4f}"


def neighbor_margin(L: float) -> int:
    return int(math.ceil(L - 0.5))


def default_origin(shape) -> tuple[int, int, int]:
    """Lattice index of array element (0, 0, 0) for a box centred on the origin."""
    return tuple(-(int(n) // 2) for n in shape)


@dataclass
class CoefficientVolume:
    """Expansion coefficients ``c_k`` on a box of the integer lattice.

    ``coeffs[i, j, l]`` is the coefficient of lattice index
    ``origin_index + (i, j, l)``; the C-order flattening is k1-major.
    """

    coeffs: np.ndarray
    origin_index: tuple[int, int, int] = None
    basis: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 3:
            raise ValueError("coefficient array must be 3-D")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")
        if self.origin_index is None:
            self.origin_index = default_origin(self.coeffs.shape)
        self.origin_index = tuple(int(o) for o in self.origin_index)

    @classmethod
    def zeros(cls, shape, origin_index=None) -> "CoefficientVolume":
        return cls(np.zeros(tuple(shape)), origin_index)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coeffs.shape

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def lattice_indices(self) -> np.ndarray:
        """``(N, 3)`` integer lattice index of every coefficient, k1-major."""
        grids = np.meshgrid(*[np.arange(n) + o for n, o in zip(self.shape, self.origin_index)],
                            indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def extent(self) -> np.ndarray:
        """Half-widths of the cell box covered by the volume, about its centre."""
        return np.asarray(self.shape, dtype=float) / 2.0


def bspline2_1d(x):
    """Centred quadratic B-spline, vectorised."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    out = np.where(a <= 0.5, 0.75 - a * a, 0.5 * (1.5 - a) ** 2)
    out = np.where(a <= 1.5, out, 0.0)
    return out if out.ndim else float(out)


def phi(x):
    """Tensor-product generator evaluated at points of shape ``(..., 3)``."""
    x = np.asarray(x, dtype=np.float64)
    out = bspline2_1d(x[..., 0]) * bspline2_1d(x[..., 1]) * bspline2_1d(x[..., 2])
    return out if np.ndim(out) else float(out)


def synthesize(vol: CoefficientVolume, x):
    """Evaluate ``f(x) = sum_k c_k phi(x - k)`` at points of shape ``(..., 3)``.

    Only the 27 lattice shifts around ``round(x)`` can be nonzero.
    """
    x = np.asarray(x, dtype=np.float64)
    pts = x.reshape(-1, 3)
    base = np.floor(pts + 0.5).astype(np.int64)
    o = np.asarray(vol.origin_index)
    n = np.asarray(vol.shape)
    out = np.zeros(len(pts))
    for d in np.ndindex(3, 3, 3):
        k = base + np.asarray(d) - 1
        idx = k - o
        inside = np.all((idx >= 0) & (idx < n), axis=1)
        if not inside.any():
            continue
        ii = idx[inside]
        c = vol.coeffs[ii[:, 0], ii[:, 1], ii[:, 2]]
        out[inside] += c * phi(pts[inside] - k[inside])
    out = out.reshape(x.shape[:-1])
    return out if out.ndim else float(out)


def support_chord(omega, s, center=(0.0, 0.0, 0.0), half_width: float = SUPPORT_HALF_WIDTH):
    """Slab-clip lines against the support cube of the basis at ``center``.

    Returns ``(t_in, t_out)``; a line hits the open cube iff ``t_in < t_out``.
    Works row-wise on ``(..., 3)`` inputs.
    """
    omega = np.asarray(omega, dtype=np.float64)
    rel = np.asarray(s, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    zero = omega == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half_width - rel) / omega
        t2 = (half_width - rel) / omega
    inside = np.abs(rel) < half_width
    lo = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return lo.max(axis=-1), hi.min(axis=-1)


def oracle_project(ray: Ray, center=(0.0, 0.0, 0.0), step: float = 1.0 / 256) -> float:
    """Line integral of ``phi(. - center)`` along ``ray`` by composite Simpson."""
    t_in, t_out = support_chord(ray.omega, ray.s, center)
    t_in, t_out = float(t_in), float(t_out)
    if not t_in < t_out:
        return 0.0
    n = int(math.ceil((t_out - t_in) / step))
    n += n % 2
    t = np.linspace(t_in, t_out, n + 1)
    x = ray.s + t[:, None] * ray.omega - np.asarray(center, dtype=np.float64)
    v = phi(x)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((t_out - t_in) / (3 * n) * np.dot(w, v))


def exact_project(omega, s, center=(0.0, 0.0, 0.0)):
    """Exact line integrals of ``phi(. - center)`` for stacked lines ``(..., 3)``."""
    omega = np.asarray(omega, dtype=np.float64)
    batch_shape = np.broadcast_shapes(omega.shape, np.shape(s))[:-1]
    om = np.broadcast_to(omega, batch_shape + (3,)).reshape(-1, 3)
    rel = (np.asarray(s, dtype=np.float64) - np.asarray(center, dtype=np.float64))
    rel = np.broadcast_to(rel, batch_shape + (3,)).reshape(-1, 3)

    t_in, t_out = support_chord(om, rel)
    hit = t_in < t_out
    t_in = np.where(hit, t_in, 0.0)
    t_out = np.where(hit, t_out, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = (_KNOTS[None, None, :] - rel[:, :, None]) / om[:, :, None]
    bp = bp.reshape(len(om), 3 * len(_KNOTS))
    bp = np.where(np.isfinite(bp), bp, t_in[:, None])
    bp = np.clip(bp, t_in[:, None], t_out[:, None])
    bp = np.sort(np.concatenate([t_in[:, None], bp, t_out[:, None]], axis=1), axis=1)
    mid = 0.5 * (bp[:, 1:] + bp[:, :-1])
    half = 0.5 * (bp[:, 1:] - bp[:, :-1])
    t = mid[..., None] + half[..., None] * _GL_NODES
    x = rel[:, None, None, :] + t[..., None] * om[:, None, None, :]
    vals = (phi(x) @ _GL_WEIGHTS) * half
    out = np.where(hit, vals.sum(axis=1), 0.0).reshape(batch_shape)
    return out if out.ndim else float(out)


_GRID_CACHE: dict[float, np.ndarray] = {}


def grid_project(ray: Ray, center=(0.0, 0.0, 0.0), refinement: float = 1.0 / 64) -> float:
    """Cross-check: sample ``phi`` on a fine grid, then integrate the trilinear
    interpolant along the ray with step ``refinement``."""
    from scipy.ndimage import map_coordinates

    h = refinement
    if h not in _GRID_CACHE:
        n = int(round(2 * SUPPORT_HALF_WIDTH / h))
        ax = -SUPPORT_HALF_WIDTH + h * np.arange(n + 1)
        b = bspline2_1d(ax)
        _GRID_CACHE[h] = b[:, None, None] * b[None, :, None] * b[None, None, :]
    grid = _GRID_CACHE[h]
    t_in, t_out = support_chord(ray.omega, ray.s, center)
    t_in, t_out = float(t_in), float(t_out)
    if not t_in < t_out:
        return 0.0
    n = max(int(math.ceil((t_out - t_in) / h)), 1)
    t = np.linspace(t_in, t_out, n + 1)
    x = ray.s + t[:, None] * ray.omega - np.asarray(center, dtype=np.float64)
    coords = (x + SUPPORT_HALF_WIDTH).T / h
    v = map_coordinates(grid, coords, order=1, mode="constant", cval=0.0)
    dt = (t_out - t_in) / n
    return float(dt * (v.sum() - 0.5 * (v[0] + v[-1])))


def footprint_radius() -> float:
    return FOOTPRINT_RADIUS


def sample_footprint_crossings(n_rays: int, rng: np.random.Generator, half_width: float = SUPPORT_HALF_WIDTH):
    """Crossing radii, on the dominant-axis plane through the basis centre, of
    random rays that intersect the support cube.

    Each ray passes through a point of the closed cube and has lateral slopes
    in ``[-1, 1]`` relative to its dominant axis.  Half of the draws push the
    point to the cube's vertices and edges and the slopes towards +-1, where
    the supremum is attained; the rest are uniform.
    """
    n = int(n_rays)
    d = rng.integers(0, 3, n)
    p = rng.uniform(-half_width, half_width, (n, 3))
    slopes = rng.uniform(-1.0, 1.0, (n, 2))
    extreme = rng.uniform(size=n) < 0.5
    snap = extreme[:, None] & (rng.uniform(size=(n, 3)) < 0.7)
    p = np.where(snap, np.sign(p) * half_width, p)
    pushed = np.sign(slopes) * (1.0 - rng.uniform(size=(n, 2)) ** 4 * rng.uniform(size=(n, 1)))
    slopes = np.where(extreme[:, None], pushed, slopes)
    # direction with component 1 along axis d and the slopes on the other two
    omega = np.ones((n, 3))
    others = np.stack([(d + 1) % 3, (d + 2) % 3], axis=1)
    np.put_along_axis(omega, others, slopes, axis=1)
    omega /= np.linalg.norm(omega, axis=1, keepdims=True)
    rows = np.arange(n)
    # move along the ray to the plane x_d = 0
    t = -p[rows, d] / omega[rows, d]
    x = p + t[:, None] * omega
    return np.sqrt(np.sum(x * x, axis=1) - x[rows, d] ** 2)


def measure_footprint_radius(n_rays: int = 1_000_000, seed: int = 0) -> float:
    """Supremum of the sampled crossing radii."""
    rng = np.random.default_rng(seed)
    return float(sample_footprint_crossings(n_rays, rng).max())
