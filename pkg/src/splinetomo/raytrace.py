"""Ray tracing through the coefficient lattice.

Two projectors share one Amanatides-Woo walk:

* the spline projector visits, at each DDA step, the basis functions of the
  current dominant-axis plane inside an l-inf window of half-width
  ``ceil(L - 1/2)`` around the crossed cell, skipping those already taken in
  the previous steps of the same plane, and weighs each by the learned
  contribution;
* the voxel projector weighs each crossed cell by its chord length.

Every operator comes with its exact transpose.  ``dda_init``, ``dda_step`` and
``get_neighbors`` are plain-Python references of the compiled walk; they are
used by the tests and for teaching, not by the projectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .bspline import BasisSpec, CoefficientVolume, neighbor_margin
from .contribnet import ContribNet
from .geometry import Ray, ScanGeometry, dominant_axis

SPLINE = 0
VOXEL = 1
PROJECTORS = {"splinesplat": SPLINE, "voxel": VOXEL}


class ShapeMismatchError(ValueError):
    """Arrays whose sizes do not match the geometry or volume."""


# -- reference traversal ----------------------------------------------------------

@dataclass
class TraversalState:
    k: np.ndarray
    t_max: np.ndarray
    t_delta: np.ndarray
    step: np.ndarray
    active: bool
    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)


def traversal_bounds(shape, origin, omega=None, margin: int = 0):
    """Inclusive cell-index box of a volume, dilated by ``margin`` on the axes
    other than the dominant axis of ``omega`` (all axes if ``omega`` is None)."""
    lo = np.asarray(origin, dtype=np.int64).copy()
    hi = lo + np.asarray(shape, dtype=np.int64) - 1
    if margin:
        d = None if omega is None else dominant_axis(omega) - 1
        for i in range(3):
            if i != d:
                lo[i] -= margin
                hi[i] += margin
    return lo, hi


def dda_init(ray: Ray, grid_bounds) -> TraversalState:
    """Set up the walk of ``ray`` through the inclusive cell box ``grid_bounds = (lo, hi)``."""
    lo, hi = (np.asarray(b, dtype=np.int64) for b in grid_bounds)
    k = np.zeros(3, np.int64)
    step = np.zeros(3, np.int64)
    t_max = np.zeros(3)
    t_delta = np.zeros(3)
    t_in, t_out = -math.inf, math.inf
    omega, s = ray.omega, ray.s
    for i in range(3):
        a, b = lo[i] - 0.5, hi[i] + 0.5
        if omega[i] == 0.0:
            if not a <= s[i] < b:
                return TraversalState(k, t_max, t_delta, step, False, lo, hi)
            continue
        t1, t2 = sorted(((a - s[i]) / omega[i], (b - s[i]) / omega[i]))
        t_in, t_out = max(t_in, t1), min(t_out, t2)
    if not t_in < t_out:
        return TraversalState(k, t_max, t_delta, step, False, lo, hi)
    for i in range(3):
        k[i] = min(max(math.floor(s[i] + t_in * omega[i] + 0.5), lo[i]), hi[i])
        if omega[i] > 0:
            step[i], t_delta[i] = 1, 1.0 / omega[i]
            t_max[i] = (k[i] + 0.5 - s[i]) / omega[i]
        elif omega[i] < 0:
            step[i], t_delta[i] = -1, -1.0 / omega[i]
            t_max[i] = (k[i] - 0.5 - s[i]) / omega[i]
        else:
            step[i], t_delta[i], t_max[i] = 0, math.inf, math.inf
    return TraversalState(k, t_max, t_delta, step, True, lo, hi)


def dda_step(state: TraversalState) -> TraversalState:
    a = int(np.argmin(state.t_max))  # argmin returns the first minimum on ties
    k = state.k.copy()
    t_max = state.t_max.copy()
    k[a] += state.step[a]
    t_max[a] += state.t_delta[a]
    active = bool(state.lo[a] <= k[a] <= state.hi[a])
    return TraversalState(k, t_max, state.t_delta, state.step, active, state.lo, state.hi)


def walk(ray: Ray, grid_bounds) -> list[tuple[int, int, int]]:
    state = dda_init(ray, grid_bounds)
    cells = []
    while state.active:
        cells.append(tuple(int(x) for x in state.k))
        state = dda_step(state)
    return cells


@dataclass
class NeighborHistory:
    prev1: frozenset = frozenset()
    prev2: frozenset = frozenset()

    def push(self, current) -> "NeighborHistory":
        return NeighborHistory(frozenset(current), self.prev1)


def get_neighbors(k, omega, L: float, history: NeighborHistory, shape=None, origin=None) -> set:
    """Candidate basis indices for the crossed cell ``k``.

    All ``q`` with ``q_d = k_d`` on the dominant axis ``d`` and
    ``|q - k|_inf <= ceil(L - 1/2)``, minus the two previous steps' sets, and
    restricted to the volume box when ``shape`` is given.
    """
    d = dominant_axis(omega) - 1
    m = neighbor_margin(L)
    k = tuple(int(x) for x in k)
    ranges = [range(k[i] - m, k[i] + m + 1) if i != d else range(k[i], k[i] + 1)
              for i in range(3)]
    if shape is not None:
        o = (0, 0, 0) if origin is None else tuple(origin)
        ranges = [[q for q in r if o[i] <= q < o[i] + shape[i]] for i, r in enumerate(ranges)]
    total = {(a, b, c) for a in ranges[0] for b in ranges[1] for c in ranges[2]}
    return total - (history.prev1 | history.prev2)


def reference_visits(ray: Ray, shape, origin, L: float) -> list[tuple[int, int, int]]:
    """Multiset (as a list) of basis indices enumerated by the reference walk."""
    m = neighbor_margin(L)
    bounds = traversal_bounds(shape, origin, ray.omega, m)
    history = NeighborHistory()
    visits = []
    state = dda_init(ray, bounds)
    while state.active:
        nbrs = get_neighbors(state.k, ray.omega, L, history, shape, origin)
        visits.extend(sorted(nbrs))
        history = history.push(nbrs)
        state = dda_step(state)
    return visits


# -- single-ray operators --------------------------------------------------------------

def _volume_args(shape, origin):
    return (np.asarray(origin, dtype=np.int64), np.asarray(shape, dtype=np.int64))


def ray_entries(ray: Ray, shape, origin, net: ContribNet | None = None, L: float | None = None,
                mode: str = "spline"):
    """Flat coefficient indices and weights contributing to one ray, in walk order.

    ``mode`` is ``"spline"`` (learned contributions), ``"voxel"`` (chord
    lengths) or ``"candidates"`` (every window candidate, weight 1).
    """
    o, n = _volume_args(shape, origin)
    omega = np.ascontiguousarray(ray.omega, dtype=np.float64)
    s = np.ascontiguousarray(ray.s, dtype=np.float64)
    if mode == "voxel":
        cap = int(n.sum()) + 3
        idx, w = np.empty(cap, np.int64), np.empty(cap)
        count = K.voxel_ray(omega, s, o, n, 1, idx, w)
        return idx[:count], w[:count]
    L = BasisSpec().footprint_radius_L if L is None else L
    m = neighbor_margin(L)
    cap = K.spline_capacity(n, m)
    idx, w = np.empty(cap, np.int64), np.empty(cap)
    if mode == "candidates":
        params, sizes = np.zeros(1), np.zeros(2, np.int64)
        count = K.spline_ray(omega, s, o, n, m, params, sizes, 2, idx, w,
                             np.empty(4), np.empty(1), np.empty(1))
    else:
        params, sizes = net.packed()
        count = K.spline_ray(omega, s, o, n, m, params, sizes, 1, idx, w,
                             np.empty(4), np.empty(K._MAX_WIDTH), np.empty(K._MAX_WIDTH))
    return idx[:count], w[:count]


def splinesplat_project(vol: CoefficientVolume, ray: Ray, net: ContribNet, L: float | None = None) -> float:
    net.check_basis(vol.basis)
    L = vol.basis.footprint_radius_L if L is None else L
    idx, w = ray_entries(ray, vol.shape, vol.origin_index, net, L)
    acc = 0.0
    for i, wi in zip(idx, w):
        acc += vol.flat[i] * wi
    return acc


def voxel_project(vol: CoefficientVolume, ray: Ray) -> float:
    """Sum of voxel values times chord lengths (``vol.coeffs`` read as voxel values)."""
    idx, w = ray_entries(ray, vol.shape, vol.origin_index, mode="voxel")
    acc = 0.0
    for i, wi in zip(idx, w):
        acc += vol.flat[i] * wi
    return acc


# -- whole-geometry operators -----------------------------------------------------------

def _geometry_arrays(geometry: ScanGeometry):
    return (np.ascontiguousarray(geometry.omegas, dtype=np.float64),
            np.ascontiguousarray(geometry.offsets, dtype=np.float64))


def _kernel_args(kind, net, L):
    if kind == SPLINE:
        if net is None:
            raise ValueError("the spline projector needs a contribution net")
        params, sizes = net.packed()
        return neighbor_margin(L), params, sizes
    return 0, np.zeros(1), np.zeros(2, np.int64)


def project_all(vol: CoefficientVolume, geometry: ScanGeometry, net: ContribNet | None = None,
                L: float | None = None, projector: str = "splinesplat") -> np.ndarray:
    """Project every ray of ``geometry``, in geometry order."""
    kind = PROJECTORS[projector]
    if kind == SPLINE:
        net.check_basis(vol.basis)
    L = vol.basis.footprint_radius_L if L is None else L
    m, params, sizes = _kernel_args(kind, net, L)
    om, off = _geometry_arrays(geometry)
    o, n = _volume_args(vol.shape, vol.origin_index)
    return K.project_rays(kind, om, off, o, n, m, params, sizes, np.ascontiguousarray(vol.flat))


def _backproject(kind, values, geometry, net, L, vol_shape, origin):
    values = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if values.shape[0] != geometry.num_rays:
        raise ShapeMismatchError(f"{values.shape[0]} values for {geometry.num_rays} rays")
    if vol_shape is None:
        raise ShapeMismatchError("vol_shape is required")
    if origin is None:
        origin = CoefficientVolume.zeros(vol_shape).origin_index
    m, params, sizes = _kernel_args(kind, net, L)
    om, off = _geometry_arrays(geometry)
    o, n = _volume_args(vol_shape, origin)
    out = K.backproject_rays(kind, om, off, o, n, m, params, sizes, values)
    return CoefficientVolume(out.reshape(tuple(vol_shape)), origin)


def splinesplat_backproject(residual_per_ray, geometry: ScanGeometry, net: ContribNet,
                            L: float | None = None, vol_shape=None, origin=None) -> CoefficientVolume:
    """Exact transpose of :func:`project_all` with the spline projector."""
    L = BasisSpec().footprint_radius_L if L is None else L
    return _backproject(SPLINE, residual_per_ray, geometry, net, L, vol_shape, origin)


def voxel_backproject(sinogram, geometry: ScanGeometry, vol_shape, origin=None) -> CoefficientVolume:
    return _backproject(VOXEL, sinogram, geometry, None, 0.0, vol_shape, origin)


class Projector:
    """Forward/adjoint pair for one geometry and volume box.

    The ray entries are traced once and kept as a CSR matrix (row = ray), so
    repeated applications inside iterative solvers only stream the matrix.
    The cached entries are those of the on-the-fly operators, in the same
    order, hence both give identical results.
    """

    def __init__(self, geometry: ScanGeometry, shape, origin=None, projector: str = "splinesplat",
                 net: ContribNet | None = None, L: float | None = None):
        self.geometry = geometry
        self.shape = tuple(int(x) for x in shape)
        self.origin = tuple(origin) if origin is not None else CoefficientVolume.zeros(shape).origin_index
        self.name = projector
        self.kind = PROJECTORS[projector]
        self.net = net
        self.L = BasisSpec().footprint_radius_L if L is None else L
        m, params, sizes = _kernel_args(self.kind, net, self.L)
        om, off = _geometry_arrays(geometry)
        o, n = _volume_args(self.shape, self.origin)
        counts, _ = K.count_entries(self.kind, om, off, o, n, m, params, sizes)
        self.indptr = np.zeros(len(counts) + 1, np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        nnz = int(self.indptr[-1])
        index_type = np.int32 if int(np.prod(self.shape)) < 2**31 else np.int64
        self.indices = np.empty(nnz, index_type)
        self.data = np.empty(nnz)
        K.fill_entries(self.kind, om, off, o, n, m, params, sizes, self.indptr,
                       self.indices, self.data)

    @property
    def n_coeffs(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def entries_per_ray(self) -> np.ndarray:
        return np.diff(self.indptr)

    def forward(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64).ravel()
        if x.shape[0] != self.n_coeffs:
            raise ShapeMismatchError(f"{x.shape[0]} coefficients for a {self.shape} volume")
        return K.csr_matvec(self.indptr, self.indices, self.data, x)

    def adjoint(self, y) -> np.ndarray:
        y = np.ascontiguousarray(y, dtype=np.float64).ravel()
        if y.shape[0] != self.geometry.num_rays:
            raise ShapeMismatchError(f"{y.shape[0]} values for {self.geometry.num_rays} rays")
        return K.csr_rmatvec(self.indptr, self.indices, self.data, y, self.n_coeffs)

    def dot_test(self, rng: np.random.Generator) -> float:
        """Relative mismatch of ``<A x, y>`` and ``<x, A^T y>`` for random ``x, y``."""
        x = rng.standard_normal(self.n_coeffs)
        y = rng.standard_normal(self.geometry.num_rays)
        lhs = float(np.dot(self.forward(x), y))
        rhs = float(np.dot(x, self.adjoint(y)))
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def neighbor_counts(geometry: ScanGeometry, shape, origin=None, L: float | None = None, rays=None):
    """Per-ray window evaluations and dominant planes crossed by the walk.

    Each crossed plane opens a window of at most ``(2 * margin + 1) ** 2``
    candidates, so ``evaluations <= planes * window`` ray by ray.
    """
    L = BasisSpec().footprint_radius_L if L is None else L
    origin = CoefficientVolume.zeros(shape).origin_index if origin is None else origin
    m = neighbor_margin(L)
    rays = range(geometry.num_rays) if rays is None else rays
    o, n = _volume_args(shape, origin)
    evals, planes = [], []
    for i in rays:
        ray = geometry.ray(int(i))
        idx, _ = ray_entries(ray, shape, origin, L=L, mode="candidates")
        d = dominant_axis(ray.omega) - 1
        pad = np.where(np.arange(3) == d, 0, m)
        cells = K.trace_cells(ray.omega, ray.s, o - pad, o + n - 1 + pad, int(n.sum() + 6 * m + 3))
        evals.append(len(idx))
        planes.append(len(np.unique(cells[:, d])))
    return np.asarray(evals, np.int64), np.asarray(planes, np.int64), (2 * m + 1) ** 2
