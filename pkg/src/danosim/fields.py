"""Volumetric density fields and contact shape primitives.

A density field is a nonnegative scalar function over a finite bounding
box; outside the box it is exactly zero. Two concrete fields are provided:
a dense grid with trilinear interpolation (the portable stand-in for a
learned neural density field) and an analytic sphere indicator. Shape
primitives (half-space, sphere) carry indicator densities and double as
contact geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from danosim.errors import DomainError, ParseError
from danosim import rotations


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world_point = R(quaternion) @ body_point + translation."""

    translation: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(t).all() or not np.isfinite(norm):
            raise DomainError("pose components must be finite")
        if abs(norm - 1.0) > 1e-6:
            raise DomainError(f"quaternion norm {norm:.9f} is not within 1e-6 of 1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "quaternion", q / norm)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), rotations.IDENTITY_QUAT.copy())

    @staticmethod
    def from_translation(t) -> "Pose":
        return Pose(np.asarray(t, dtype=float), rotations.IDENTITY_QUAT.copy())

    def rotation(self) -> np.ndarray:
        return rotations.quat_to_matrix(self.quaternion)

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation().T + self.translation

    def inverse_transform_points(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation()

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(x) = self(other(x))."""
        q = rotations.normalize_quat(rotations.quat_multiply(self.quaternion, other.quaternion))
        t = self.transform_points(other.translation[None])[0]
        return Pose(t, q)

    def inverse(self) -> "Pose":
        q_inv = rotations.quat_conjugate(self.quaternion)
        return Pose(-(rotations.quat_to_matrix(q_inv) @ self.translation), q_inv)


@dataclass(frozen=True)
class HalfSpace:
    """Half-space {x : normal . x + offset <= 0}; the boundary is inside."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(a)
        if norm < 1e-12:
            raise DomainError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", a / norm)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_values(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.normal + self.offset

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.signed_values(points) <= 0.0


@dataclass(frozen=True)
class Sphere:
    """Solid ball {x : ||x - center|| - radius <= 0}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        if self.radius <= 0.0:
            raise DomainError(f"sphere radius must be > 0, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def signed_values(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points) - self.center, axis=-1) - self.radius

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.signed_values(points) <= 0.0


PrimitiveShape = HalfSpace | Sphere


class DensityField:
    """Interface shared by all density fields.

    Subclasses implement ``evaluate`` over a batch of points and declare a
    finite bounding box. Fields are immutable after construction; queries
    are read-only and safe to run concurrently.
    """

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def suggested_gradient_step(self) -> float:
        raise NotImplementedError


class GridDensityField(DensityField):
    """Dense node grid with trilinear interpolation.

    values[i, j, k] is the density at node origin + (i, j, k) * spacing.
    Queries outside the node bounding box return exactly 0.
    """

    def __init__(self, origin, spacing, values):
        origin = np.asarray(origin, dtype=float).reshape(3)
        spacing = np.asarray(spacing, dtype=float).reshape(3)
        values = np.asarray(values, dtype=float)
        if values.ndim != 3:
            raise DomainError("grid values must be a 3-d array")
        if any(n < 2 for n in values.shape):
            raise DomainError(f"grid dims must be >= 2 per axis, got {values.shape}")
        if np.any(spacing <= 0.0):
            raise DomainError(f"grid spacing must be > 0, got {spacing}")
        if not np.isfinite(values).all():
            raise DomainError("grid values must be finite")
        if np.any(values < 0.0):
            raise DomainError("grid values must be >= 0")
        self.origin = origin
        self.spacing = spacing
        self.values = values

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def bounds(self):
        hi = self.origin + (np.array(self.dims) - 1) * self.spacing
        return self.origin.copy(), hi

    def suggested_gradient_step(self) -> float:
        return float(np.min(self.spacing))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (points - self.origin) / self.spacing
        n = np.asarray(self.dims)
        inside = np.all((rel >= 0.0) & (rel <= n - 1), axis=1)
        out = np.zeros(len(points))
        if not inside.any():
            return out
        r = rel[inside]
        cell = np.minimum(r.astype(np.int64), n - 2)
        f = r - cell
        ix, iy, iz = cell[:, 0], cell[:, 1], cell[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        v = self.values
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        out[inside] = (
            v[ix, iy, iz] * gx * gy * gz
            + v[ix + 1, iy, iz] * fx * gy * gz
            + v[ix, iy + 1, iz] * gx * fy * gz
            + v[ix, iy, iz + 1] * gx * gy * fz
            + v[ix + 1, iy + 1, iz] * fx * fy * gz
            + v[ix + 1, iy, iz + 1] * fx * gy * fz
            + v[ix, iy + 1, iz + 1] * gx * fy * fz
            + v[ix + 1, iy + 1, iz + 1] * fx * fy * fz
        )
        return out


class SphereIndicatorField(DensityField):
    """Analytic indicator density of a solid ball."""

    def __init__(self, center, radius, margin=0.0):
        self.shape = Sphere(center, radius)
        if margin < 0.0:
            raise DomainError("margin must be >= 0")
        self.margin = float(margin)

    def bounds(self):
        half = self.shape.radius + self.margin
        return self.shape.center - half, self.shape.center + half

    def suggested_gradient_step(self) -> float:
        # Interior points of an indicator only see a finite-difference
        # gradient when the probes straddle the boundary; a step equal to
        # the radius keeps every interior point's gradient nonzero.
        return self.shape.radius

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.shape.contains(points).astype(float)


def box_field(center, half_extents) -> GridDensityField:
    """Indicator density of an axis-aligned box as a 2x2x2 all-ones grid."""
    center = np.asarray(center, dtype=float)
    half = np.asarray(half_extents, dtype=float)
    if np.any(half <= 0.0):
        raise DomainError("box half extents must be > 0")
    return GridDensityField(center - half, 2.0 * half, np.ones((2, 2, 2)))


def eval_density(field: DensityField, x) -> float:
    """Density at a single point; 0 outside the field's bounding box."""
    x = np.asarray(x, dtype=float).reshape(3)
    if not np.isfinite(x).all():
        raise DomainError("query point must be finite")
    return float(field.evaluate(x[None])[0])


def eval_primitive_density(shape: PrimitiveShape, x) -> float:
    """Indicator density of a shape primitive: 1 inside or on the boundary."""
    x = np.asarray(x, dtype=float).reshape(3)
    if not np.isfinite(x).all():
        raise DomainError("query point must be finite")
    return 1.0 if bool(shape.contains(x[None])[0]) else 0.0


def density_gradients(field: DensityField, points: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradients for a batch of points."""
    if h <= 0.0:
        raise DomainError(f"gradient step must be > 0, got {h}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    probes = np.repeat(points, 6, axis=0)
    for axis in range(3):
        probes[2 * axis::6, axis] += h
        probes[2 * axis + 1::6, axis] -= h
    vals = field.evaluate(probes).reshape(n, 6)
    return (vals[:, 0::2] - vals[:, 1::2]) / (2.0 * h)


def density_gradient(field: DensityField, x, h: float | None = None) -> np.ndarray:
    """Central finite-difference gradient at one point.

    The step defaults to the field's suggested step (one grid spacing for
    grid fields).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if not np.isfinite(x).all():
        raise DomainError("query point must be finite")
    if h is None:
        h = field.suggested_gradient_step()
    return density_gradients(field, x[None], h)[0]


def load_grid_field(path) -> GridDensityField:
    """Read a grid density field from its text format.

    Header lines ``dims: nx ny nz``, ``origin: x y z`` and ``spacing: sx sy
    sz`` are followed by one density value per line in x-fastest, then y,
    then z order. Comments start with ``#``.
    """
    header: dict[str, list[float]] = {}
    raw_values: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if ":" in text:
                key, _, rest = text.partition(":")
                key = key.strip()
                if key not in ("dims", "origin", "spacing"):
                    raise ParseError(f"{path}:{lineno}: unknown header '{key}'")
                if key in header:
                    raise ParseError(f"{path}:{lineno}: duplicate header '{key}'")
                try:
                    parts = [float(tok) for tok in rest.split()]
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: malformed {key} values") from None
                if len(parts) != 3:
                    raise ParseError(f"{path}:{lineno}: {key} needs 3 values")
                header[key] = parts
            else:
                try:
                    raw_values.extend(float(tok) for tok in text.split())
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: malformed density value") from None
    for key in ("dims", "origin", "spacing"):
        if key not in header:
            raise ParseError(f"{path}: missing header '{key}'")
    dims = [int(d) for d in header["dims"]]
    if any(d != v for d, v in zip(dims, header["dims"])) or any(d < 2 for d in dims):
        raise ParseError(f"{path}: dims must be integers >= 2, got {header['dims']}")
    expected = dims[0] * dims[1] * dims[2]
    if len(raw_values) != expected:
        raise ParseError(
            f"{path}: value count mismatch: header declares {expected} values, found {len(raw_values)}"
        )
    values = np.asarray(raw_values)
    if np.any(values < 0.0):
        bad = int(np.argmax(values < 0.0))
        raise ParseError(f"{path}: negative density at value index {bad}")
    # file order is x-fastest; memory layout is values[ix, iy, iz]
    grid = values.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    try:
        return GridDensityField(header["origin"], header["spacing"], grid)
    except DomainError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_grid_field(field: GridDensityField, path) -> None:
    """Write a grid density field in the format read by load_grid_field."""
    nx, ny, nz = field.dims
    with open(path, "w") as fh:
        fh.write(f"dims: {nx} {ny} {nz}\n")
        fh.write("origin: " + " ".join(f"{v:.17g}" for v in field.origin) + "\n")
        fh.write("spacing: " + " ".join(f"{v:.17g}" for v in field.spacing) + "\n")
        for iz in range(nz):
            for iy in range(ny):
                for ix in range(nx):
                    fh.write(f"{field.values[ix, iy, iz]:.17g}\n")
