"""Rays, plane primitives and scan geometries.

All lengths are in lattice units (basis functions sit on the integer lattice
with step 1).  A ray is stored as a unit direction ``omega`` together with the
point ``s`` of the line that is closest to the origin, so ``<s, omega> = 0``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

CONE_BEAM = "cone_beam"
PARALLEL_BEAM = "parallel_beam"


class GeometryError(ValueError):
    """Raised for invalid or inconsistent scan geometries."""


@dataclass(frozen=True)
class Ray:
    omega: np.ndarray
    s: np.ndarray

    @classmethod
    def through(cls, point, direction) -> "Ray":
        """Build the ray along ``direction`` passing through ``point``."""
        omega = np.asarray(direction, dtype=np.float64)
        omega = omega / np.linalg.norm(omega)
        return cls(omega, project_onto_plane(np.asarray(point, dtype=np.float64), omega))

    def point(self, t: float) -> np.ndarray:
        return self.s + t * self.omega


@dataclass(frozen=True)
class PlaneBasis:
    u: np.ndarray
    v: np.ndarray


def project_onto_plane(x, omega) -> np.ndarray:
    """Orthogonal projection of ``x`` onto the plane through 0 orthogonal to ``omega``.

    Works row-wise on stacked inputs of shape ``(..., 3)``.
    """
    x = np.asarray(x, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    dot = np.sum(x * omega, axis=-1, keepdims=True)
    return x - dot * omega


def dominant_axis(omega) -> int:
    """1-based index of the axis with the largest ``|omega_d|``; ties go to the smallest index."""
    a = np.abs(np.asarray(omega, dtype=np.float64))
    return int(np.argmax(a)) + 1


def least_aligned_axis(omega) -> int:
    """0-based index of the axis with the smallest ``|omega_d|`` (ties -> smallest index)."""
    return int(np.argmin(np.abs(np.asarray(omega, dtype=np.float64))))


def plane_basis(omega) -> PlaneBasis:
    omega = np.asarray(omega, dtype=np.float64)
    e = np.zeros(3)
    e[least_aligned_axis(omega)] = 1.0
    u = np.cross(e, omega)
    u = u / np.linalg.norm(u)
    v = np.cross(u, omega)
    return PlaneBasis(u, v)


def _axis_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``axis`` to a right-handed frame.

    For canonical axes the frame is cyclic: e1 -> (e2, e3), e2 -> (e3, e1),
    e3 -> (e1, e2).
    """
    for i in range(3):
        if np.allclose(axis, np.eye(3)[i]):
            return np.eye(3)[(i + 1) % 3], np.eye(3)[(i + 2) % 3]
    b = plane_basis(axis).u
    c = np.cross(axis, b)
    return b, c / np.linalg.norm(c)


def _rotate(vec: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues' rotation formula
    c, s = math.cos(angle), math.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1.0 - c)


def _as_axis(rotation_axis) -> np.ndarray:
    if isinstance(rotation_axis, (int, np.integer)):
        if rotation_axis not in (1, 2, 3):
            raise GeometryError(f"rotation axis index must be 1, 2 or 3, got {rotation_axis}")
        return np.eye(3)[rotation_axis - 1]
    a = np.asarray(rotation_axis, dtype=np.float64)
    if a.shape != (3,) or not np.all(np.isfinite(a)) or np.linalg.norm(a) == 0:
        raise GeometryError(f"invalid rotation axis {rotation_axis!r}")
    return a / np.linalg.norm(a)


@dataclass
class ScanGeometry:
    """An ordered set of rays grouped into views.

    Rays are ordered view-major, then detector row, then detector column.
    ``omegas`` and ``offsets`` hold one ray per row.
    """

    kind: str
    num_views: int
    detector_rows: int
    detector_cols: int
    pixel_pitch: float
    rotation_axis: np.ndarray
    angles: np.ndarray
    omegas: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    source_distance: float | None = None
    detector_distance: float | None = None
    volume_extent: tuple[float, float, float] | None = None

    @property
    def num_rays(self) -> int:
        return self.num_views * self.detector_rows * self.detector_cols

    @property
    def detector_shape(self) -> tuple[int, int, int]:
        return (self.num_views, self.detector_rows, self.detector_cols)

    def __len__(self) -> int:
        return self.num_rays

    def ray(self, i: int) -> Ray:
        return Ray(self.omegas[i], self.offsets[i])

    def __iter__(self) -> Iterator[Ray]:
        for i in range(self.num_rays):
            yield self.ray(i)

    def descriptor(self) -> dict:
        d = {
            "kind": self.kind,
            "num_views": self.num_views,
            "detector_rows": self.detector_rows,
            "detector_cols": self.detector_cols,
            "pixel_pitch": float(self.pixel_pitch),
            "rotation_axis": [float(x) for x in self.rotation_axis],
            "angles": [float(x) for x in self.angles],
        }
        if self.kind == CONE_BEAM:
            d["source_distance"] = float(self.source_distance)
            d["detector_distance"] = float(self.detector_distance)
            if self.volume_extent is not None:
                d["volume_extent"] = [float(x) for x in self.volume_extent]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.descriptor(), f, indent=2, sort_keys=True)

    def subset(self, views: Sequence[int]) -> "ScanGeometry":
        """Geometry restricted to the given views, in the given order."""
        per = self.detector_rows * self.detector_cols
        idx = np.concatenate([np.arange(v * per, (v + 1) * per) for v in views])
        return ScanGeometry(
            kind=self.kind,
            num_views=len(views),
            detector_rows=self.detector_rows,
            detector_cols=self.detector_cols,
            pixel_pitch=self.pixel_pitch,
            rotation_axis=self.rotation_axis,
            angles=self.angles[list(views)],
            omegas=self.omegas[idx],
            offsets=self.offsets[idx],
            source_distance=self.source_distance,
            detector_distance=self.detector_distance,
            volume_extent=self.volume_extent,
        )


def _check_counts(**counts) -> None:
    for name, value in counts.items():
        if int(value) != value or value < 1:
            raise GeometryError(f"{name} must be a positive integer, got {value!r}")


def _detector_offsets(rows: int, cols: int, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    r = (np.arange(rows) - (rows - 1) / 2.0) * pitch
    c = (np.arange(cols) - (cols - 1) / 2.0) * pitch
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return rr.ravel(), cc.ravel()


def _default_angles(num_views: int, span: float) -> np.ndarray:
    return span * np.arange(num_views) / num_views


def make_cone_beam(
    num_views: int,
    detector_rows: int,
    detector_cols: int,
    source_distance: float,
    detector_distance: float,
    pixel_pitch: float,
    volume_extent=None,
    rotation_axis=1,
    angles=None,
) -> ScanGeometry:
    """Circular cone-beam scan around ``rotation_axis``.

    At angle 0 and rotation axis e1 the source sits at ``-source_distance * e2``
    and the detector centre at ``+detector_distance * e2``; detector rows run
    along the rotation axis and columns along e3.  ``volume_extent`` holds the
    half-widths of the reconstruction box, used to reject sources inside it.
    """
    _check_counts(num_views=num_views, detector_rows=detector_rows, detector_cols=detector_cols)
    if not (source_distance > 0 and detector_distance > 0 and pixel_pitch > 0):
        raise GeometryError("distances and pixel pitch must be positive")
    axis = _as_axis(rotation_axis)
    b, c = _axis_frame(axis)
    angles = _default_angles(num_views, 2 * np.pi) if angles is None else np.asarray(angles, float)
    if len(angles) != num_views:
        raise GeometryError("len(angles) must equal num_views")
    rr, cc = _detector_offsets(detector_rows, detector_cols, pixel_pitch)

    omegas = np.empty((num_views * rr.size, 3))
    offsets = np.empty_like(omegas)
    for i, a in enumerate(angles):
        b_a = _rotate(b, axis, float(a))
        c_a = _rotate(c, axis, float(a))
        src = -source_distance * b_a
        if volume_extent is not None and np.all(np.abs(src) < np.asarray(volume_extent)):
            raise GeometryError(f"source of view {i} lies inside the volume extent")
        pix = detector_distance * b_a + rr[:, None] * axis + cc[:, None] * c_a
        w = pix - src
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        sl = slice(i * rr.size, (i + 1) * rr.size)
        omegas[sl] = w
        offsets[sl] = project_onto_plane(src[None, :], w)
    return ScanGeometry(
        kind=CONE_BEAM,
        num_views=num_views,
        detector_rows=detector_rows,
        detector_cols=detector_cols,
        pixel_pitch=float(pixel_pitch),
        rotation_axis=axis,
        angles=angles,
        omegas=omegas,
        offsets=offsets,
        source_distance=float(source_distance),
        detector_distance=float(detector_distance),
        volume_extent=None if volume_extent is None else tuple(float(x) for x in volume_extent),
    )


def make_parallel_beam(
    num_views: int,
    detector_rows: int,
    detector_cols: int,
    pixel_pitch: float,
    rotation_axis=1,
    angles=None,
) -> ScanGeometry:
    """Parallel-beam scan; view angles default to ``[0, pi)``.

    At angle 0 with rotation axis e1 every ray points along e2.
    """
    _check_counts(num_views=num_views, detector_rows=detector_rows, detector_cols=detector_cols)
    if not pixel_pitch > 0:
        raise GeometryError("pixel pitch must be positive")
    axis = _as_axis(rotation_axis)
    b, c = _axis_frame(axis)
    angles = _default_angles(num_views, np.pi) if angles is None else np.asarray(angles, float)
    if len(angles) != num_views:
        raise GeometryError("len(angles) must equal num_views")
    rr, cc = _detector_offsets(detector_rows, detector_cols, pixel_pitch)
    n = rr.size
    omegas = np.empty((num_views * n, 3))
    offsets = np.empty_like(omegas)
    for i, a in enumerate(angles):
        w = _rotate(b, axis, float(a))
        c_a = _rotate(c, axis, float(a))
        sl = slice(i * n, (i + 1) * n)
        omegas[sl] = w
        offsets[sl] = project_onto_plane(rr[:, None] * axis + cc[:, None] * c_a, w)
    return ScanGeometry(
        kind=PARALLEL_BEAM,
        num_views=num_views,
        detector_rows=detector_rows,
        detector_cols=detector_cols,
        pixel_pitch=float(pixel_pitch),
        rotation_axis=axis,
        angles=angles,
        omegas=omegas,
        offsets=offsets,
    )


def geometry_from_descriptor(d: dict) -> ScanGeometry:
    """Regenerate a geometry from its JSON descriptor."""
    try:
        kind = d["kind"]
        common = dict(
            num_views=int(d["num_views"]),
            detector_rows=int(d["detector_rows"]),
            detector_cols=int(d["detector_cols"]),
            pixel_pitch=float(d["pixel_pitch"]),
            rotation_axis=d["rotation_axis"],
            angles=d.get("angles"),
        )
        if kind == CONE_BEAM:
            return make_cone_beam(
                source_distance=float(d["source_distance"]),
                detector_distance=float(d["detector_distance"]),
                volume_extent=d.get("volume_extent"),
                **common,
            )
        if kind == PARALLEL_BEAM:
            return make_parallel_beam(**common)
    except KeyError as exc:
        raise GeometryError(f"geometry descriptor is missing {exc}") from None
    raise GeometryError(f"unknown geometry kind {kind!r}")


def load_geometry(path) -> ScanGeometry:
    with open(path) as f:
        return geometry_from_descriptor(json.load(f))


def default_cone_distances(shape) -> tuple[float, float]:
    """Source and detector distances of three volume diagonals each."""
    diag = float(np.linalg.norm(np.asarray(shape, dtype=float)))
    return 3.0 * diag, 3.0 * diag


def cone_pitch(shape, rotation_axis: int, source_distance: float, detector_distance: float,
               detector_rows: int, detector_cols: int, margin: float = 1.02) -> float:
    """Pixel pitch at which the detector just sees the cylinder inscribed in the
    box (rotation about a canonical axis), from every view."""
    axis = int(rotation_axis) - 1
    half = np.asarray(shape, dtype=float) / 2.0
    r = float(min(half[i] for i in range(3) if i != axis))
    h = float(half[axis])
    if source_distance <= r:
        raise GeometryError("source inside the scanned cylinder")
    span = source_distance + detector_distance
    col_half = span * r / np.sqrt(source_distance**2 - r * r)
    row_half = span * h / (source_distance - r)
    return margin * max(2 * col_half / detector_cols, 2 * row_half / detector_rows)
