"""Phantoms, spline interpolation and raw+JSON file formats.

File layout (both volumes and sinograms): ``<stem>.json`` holds the header,
``<stem>.raw`` the little-endian float32 samples in C order (k1-major for
volumes, view/row/column for sinograms).  Passing either path or the bare stem
works.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bspline import BasisSpec, CoefficientVolume, default_origin
from .geometry import ScanGeometry

ELLIPSOID_SET = "ellipsoid_set"
SMOOTH_BLOBS = "smooth_blobs"
COEFFICIENTS = "coefficients"
SAMPLES = "samples"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


class FormatError(ValueError):
    """Malformed, truncated or inconsistent files."""


class DigestMismatchError(FormatError):
    """A sinogram does not belong to the geometry it is used with."""


# -- phantoms ---------------------------------------------------------------------

@dataclass
class Primitive:
    center: tuple
    semi_axes: tuple
    angles: tuple = (0.0, 0.0, 0.0)  # z-y-x Euler angles, radians
    amplitude: float = 1.0

    def rotation(self) -> np.ndarray:
        a, b, c = self.angles
        rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
        ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
        rx = np.array([[1, 0, 0], [0, np.cos(c), -np.sin(c)], [0, np.sin(c), np.cos(c)]])
        return rz @ ry @ rx

    def radius2(self, x: np.ndarray) -> np.ndarray:
        """Squared ellipsoidal radius of points ``(..., 3)``."""
        local = (x - np.asarray(self.center)) @ self.rotation()
        return np.sum((local / np.asarray(self.semi_axes)) ** 2, axis=-1)


@dataclass
class PhantomSpec:
    """Sum of primitives; ``scale`` multiplies the sum before clipping to [0, 1].

    ``ellipsoid_set`` primitives are uniform ellipsoids; ``smooth_blobs`` are
    bumps ``(1 - r^2)^3`` inside the ellipsoid (twice continuously
    differentiable, compactly supported).
    """

    kind: str
    primitives: list = field(default_factory=list)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (ELLIPSOID_SET, SMOOTH_BLOBS):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        self.primitives = [p if isinstance(p, Primitive) else Primitive(**p) for p in self.primitives]
        for p in self.primitives:
            if len(p.semi_axes) != 3 or min(p.semi_axes) <= 0:
                raise ValueError(f"degenerate primitive with semi-axes {p.semi_axes}")
            if not np.isfinite(p.amplitude):
                raise ValueError("primitive amplitudes must be finite")

    def profile(self, r2: np.ndarray) -> np.ndarray:
        if self.kind == ELLIPSOID_SET:
            return (r2 <= 1.0).astype(np.float64)
        return np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 3, 0.0)

    def raw_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape[:-1])
        for p in self.primitives:
            out += p.amplitude * self.profile(p.radius2(x))
        return self.scale * out

    def value(self, x) -> np.ndarray:
        return np.clip(self.raw_value(x), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "primitives": [asdict(p) for p in self.primitives]}


def lattice_points(shape, origin=None) -> np.ndarray:
    origin = default_origin(shape) if origin is None else origin
    axes = [np.arange(n) + o for n, o in zip(shape, origin)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).astype(np.float64)


def make_phantom(spec: PhantomSpec, shape, origin=None) -> np.ndarray:
    """Phantom sampled at the lattice points of the volume box, in [0, 1]."""
    if min(shape) < 1:
        raise ValueError("phantom shape must be positive")
    return spec.value(lattice_points(shape, origin))


def random_phantom(kind: str, shape, seed: int = 0, n_primitives: int = 12) -> PhantomSpec:
    """Random phantom filling the central part of the box.

    For ``smooth_blobs`` the scale is set so the lattice maximum is exactly 1;
    clipping is then inactive on the lattice.
    """
    rng = np.random.default_rng(seed)
    half = np.asarray(shape, dtype=float) / 2.0
    centre = np.asarray(default_origin(shape), float) + (np.asarray(shape) - 1) / 2.0
    smooth = kind == SMOOTH_BLOBS
    prims = [Primitive(tuple(centre), tuple(0.8 * half), (0.0, 0.0, 0.0), 0.5 if smooth else 0.3)]
    for _ in range(n_primitives - 1):
        axes = rng.uniform(0.12, 0.35, 3) * half
        c = centre + rng.uniform(-0.45, 0.45, 3) * half
        sign = 1.0 if smooth else rng.choice([-1.0, 1.0], p=[0.3, 0.7])
        prims.append(Primitive(tuple(c), tuple(axes), tuple(rng.uniform(0, np.pi, 3)),
                               float(sign * rng.uniform(0.2, 0.6))))
    spec = PhantomSpec(kind, prims)
    if smooth:
        spec.scale = 1.0 / float(spec.raw_value(lattice_points(shape)).max())
    return spec


def phantom_line_integrals(spec: PhantomSpec, geometry: ScanGeometry) -> np.ndarray:
    """Exact line integrals of the unclipped phantom along every ray.

    Along a line the squared ellipsoidal radius is a quadratic in ``t``; the
    chord inside each ellipsoid follows from its roots.  Smooth blobs are
    degree-6 polynomials on the chord (4-point Gauss-Legendre is exact).
    """
    om, s = geometry.omegas, geometry.offsets
    out = np.zeros(len(om))
    for p in spec.primitives:
        R = p.rotation()
        inv = 1.0 / np.asarray(p.semi_axes)
        d = (om @ R) * inv
        x0 = ((s - np.asarray(p.center)) @ R) * inv
        a = np.sum(d * d, axis=1)
        b = np.sum(d * x0, axis=1)
        c = np.sum(x0 * x0, axis=1) - 1.0
        disc = b * b - a * c
        hit = disc > 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        t1, t2 = (-b - root) / a, (-b + root) / a
        if spec.kind == ELLIPSOID_SET:
            val = np.where(hit, t2 - t1, 0.0)
        else:
            mid, half = 0.5 * (t1 + t2), 0.5 * (t2 - t1)
            t = mid[:, None] + half[:, None] * _GL_NODES
            r2 = a[:, None] * t * t + 2 * b[:, None] * t + c[:, None] + 1.0
            val = np.where(hit, half * ((1.0 - np.minimum(r2, 1.0)) ** 3 @ _GL_WEIGHTS), 0.0)
        out += p.amplitude * val
    return spec.scale * out


# -- spline interpolation -----------------------------------------------------------

def fit_coefficients(samples, origin=None) -> CoefficientVolume:
    """Quadratic-spline coefficients interpolating ``samples`` at lattice points.

    Separable recursive prefilter with whole-sample symmetric boundary
    extension; exact at interior lattice points.
    """
    samples = np.asarray(samples, dtype=np.float64)
    coeffs = ndimage.spline_filter(samples, order=2, mode="mirror", output=np.float64)
    return CoefficientVolume(coeffs, origin)


# -- files -----------------------------------------------------------------------------

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def _write(path, header: dict, values: np.ndarray) -> None:
    meta, raw = _paths(path)
    meta.parent.mkdir(parents=True, exist_ok=True)
    meta.write_text(json.dumps(header, indent=2, sort_keys=True))
    raw.write_bytes(np.ascontiguousarray(values, dtype="<f4").tobytes())


def _read(path) -> tuple[dict, np.ndarray]:
    meta, raw = _paths(path)
    try:
        header = json.loads(meta.read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read header {meta}: {exc}") from None
    try:
        blob = raw.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read data {raw}: {exc}") from None
    shape = tuple(int(n) for n in header.get("shape", ()))
    if not shape or len(blob) != 4 * int(np.prod(shape)):
        raise FormatError(f"{raw}: {len(blob)} bytes do not match shape {shape}")
    return header, np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)


def write_volume(path, values, origin=None, value_kind: str = COEFFICIENTS,
                 basis_tag: str | None = None) -> None:
    """Write a volume; ``values`` may be an array or a :class:`CoefficientVolume`."""
    if isinstance(values, CoefficientVolume):
        origin = values.origin_index if origin is None else origin
        basis_tag = values.basis.tag if basis_tag is None else basis_tag
        values = values.coeffs
    values = np.asarray(values)
    if value_kind not in (COEFFICIENTS, SAMPLES):
        raise FormatError(f"unknown value kind {value_kind!r}")
    header = {
        "shape": list(values.shape),
        "origin_index": list(default_origin(values.shape) if origin is None else origin),
        "value_kind": value_kind,
        "basis_tag": basis_tag if basis_tag is not None else (
            BasisSpec().tag if value_kind == COEFFICIENTS else None),
        "dtype": "float32-le",
    }
    _write(path, header, values)


def read_volume(path) -> tuple[np.ndarray, dict]:
    header, values = _read(path)
    if len(values.shape) != 3:
        raise FormatError("volume must be 3-D")
    if header.get("value_kind") not in (COEFFICIENTS, SAMPLES):
        raise FormatError(f"unknown value kind {header.get('value_kind')!r}")
    return values, header


def read_coefficients(path) -> CoefficientVolume:
    values, header = read_volume(path)
    return CoefficientVolume(values.astype(np.float64), header["origin_index"])


def write_sinogram(path, values, geometry: ScanGeometry) -> None:
    values = np.asarray(values).reshape(geometry.detector_shape)
    header = {
        "shape": list(values.shape),
        "geometry_digest": geometry.digest(),
        "geometry": geometry.descriptor(),
        "dtype": "float32-le",
    }
    _write(path, header, values)


def read_sinogram(path, geometry: ScanGeometry | None = None) -> tuple[np.ndarray, dict]:
    """Read a sinogram; with ``geometry`` given, refuse a digest mismatch."""
    header, values = _read(path)
    if geometry is not None:
        if header.get("geometry_digest") != geometry.digest():
            raise DigestMismatchError(
                f"sinogram digest {header.get('geometry_digest')} != geometry {geometry.digest()}")
        if values.size != geometry.num_rays:
            raise FormatError("sinogram size does not match geometry")
    return values, header
