"""Contact resolution through expected interpenetration volume.

The overlap of two bodies is the integral of the product of their density
fields, estimated by volume-weighted sums over the preprocessed sample
points. Repulsion acts at the overlap centroid along the contact normal
with a spring/damper law; sliding, torsional, and rolling friction all
scale with the normal force magnitude and use a smoothed unit vector so
the wrench stays continuous at zero slip.

Sign convention: the contact normal points from body B into body A and the
returned force applies to A (B receives the opposite force). The returned
torque is taken about A's center of mass and expressed in A's body frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from danosim.dano import DanoModel
from danosim.errors import DomainError
from danosim.fields import DensityField, HalfSpace, Pose, PrimitiveShape, Sphere

VELOCITY_SMOOTHING = 1e-6
NORMAL_EPS = 1e-12

# Nominal parameter ranges that produce realistic behavior. Values outside
# these ranges are legal (the scene parser warns, it does not reject).
TABLE_RANGES = {
    "impact_spring": (1e4, 1e5),
    "impact_damper": (1e5, 1e6),
    "sliding_friction": (0.0, 1.0),
    "sliding_drag": (0.0, 0.1),
    "rolling_friction": (0.0, 0.1),
    "rolling_drag": (0.0, 0.1),
    "torsional_friction": (0.0, 0.1),
    "torsional_drag": (0.0, 0.1),
}

PARAM_FIELDS = tuple(TABLE_RANGES)


def _midpoint(name: str) -> float:
    lo, hi = TABLE_RANGES[name]
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ContactParams:
    """The eight coefficients governing one contact pair.

    Defaults sit at the midpoints of the nominal ranges.
    """

    impact_spring: float = dataclass_field(default=_midpoint("impact_spring"))
    impact_damper: float = dataclass_field(default=_midpoint("impact_damper"))
    sliding_friction: float = dataclass_field(default=_midpoint("sliding_friction"))
    sliding_drag: float = dataclass_field(default=_midpoint("sliding_drag"))
    rolling_friction: float = dataclass_field(default=_midpoint("rolling_friction"))
    rolling_drag: float = dataclass_field(default=_midpoint("rolling_drag"))
    torsional_friction: float = dataclass_field(default=_midpoint("torsional_friction"))
    torsional_drag: float = dataclass_field(default=_midpoint("torsional_drag"))

    def __post_init__(self):
        for name in PARAM_FIELDS:
            if getattr(self, name) < 0.0:
                raise DomainError(f"contact parameter {name} must be >= 0")

    def out_of_range(self) -> list[str]:
        """Names of parameters outside their nominal range."""
        flagged = []
        for name, (lo, hi) in TABLE_RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                flagged.append(f"{name}={v:g} outside nominal range [{lo:g}, {hi:g}]")
        return flagged

    def replace_value(self, name: str, value: float) -> "ContactParams":
        if name not in PARAM_FIELDS:
            raise DomainError(f"unknown contact parameter '{name}'")
        kwargs = {f: getattr(self, f) for f in PARAM_FIELDS}
        kwargs[name] = value
        return ContactParams(**kwargs)


@dataclass
class Overlap:
    """Expected interpenetration volume and its centroid.

    chi is None when psi = 0 (non-contact); otherwise it is the
    density-product-weighted centroid in world coordinates.
    """

    psi: float
    chi: np.ndarray | None


@dataclass
class BodyMotion:
    """World-frame motion of a body at one instant, for wrench evaluation."""

    com: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def stationary() -> "BodyMotion":
        return BodyMotion(np.zeros(3), np.zeros(3), np.zeros(3), np.eye(3))

    def point_velocity(self, point: np.ndarray) -> np.ndarray:
        return self.velocity + np.cross(self.angular_velocity, point - self.com)


@dataclass
class ContactResult:
    """Resolved contact wrench for one pair.

    force is world frame, applied to A at chi; torque is about A's center
    of mass in A's body frame. friction_torque_world is the torsional plus
    rolling component before the lever-arm term, kept for the equal and
    opposite reaction on B.
    """

    psi: float
    chi: np.ndarray | None
    normal: np.ndarray | None
    force: np.ndarray
    torque: np.ndarray
    friction_torque_world: np.ndarray


def overlap_primitive(dano: DanoModel, pose: Pose, shape: PrimitiveShape) -> Overlap:
    """Overlap of a preprocessed body with a shape primitive in world frame.

    Only the body's own (precomputed) densities enter the sum; the
    primitive contributes indicator membership.
    """
    if dano.n_points == 0:
        raise DomainError("model has no surface points")
    world = pose.transform_points(dano.surface_points)
    inside = shape.contains(world)
    if not inside.any():
        return Overlap(0.0, None)
    w = dano.surface_densities[inside]
    total = float(w.sum())
    psi = dano.cell_volume * total
    if psi <= 0.0:
        return Overlap(0.0, None)
    chi = (w @ world[inside]) / total
    return Overlap(psi, chi)


def _cross_products(
    dano_a: DanoModel,
    pose_a: Pose,
    dano_b: DanoModel,
    pose_b: Pose,
    field_a: DensityField,
    field_b: DensityField,
):
    """Per-point density products for both sample sets, in world frame."""
    world_a = pose_a.transform_points(dano_a.surface_points)
    world_b = pose_b.transform_points(dano_b.surface_points)
    cross_b_at_a = field_b.evaluate(pose_b.inverse_transform_points(world_a))
    cross_a_at_b = field_a.evaluate(pose_a.inverse_transform_points(world_b))
    prod_a = dano_a.surface_densities * cross_b_at_a
    prod_b = cross_a_at_b * dano_b.surface_densities
    return world_a, world_b, prod_a, prod_b


def _pooled_weights(dano_a: DanoModel, dano_b: DanoModel) -> tuple[float, float]:
    # Pool the two per-box Monte Carlo estimates by their sample counts;
    # for equal boxes and counts this reduces to a single 1/(N_A+N_B) sum.
    total = dano_a.n_samples + dano_b.n_samples
    return (
        dano_a.n_samples * dano_a.cell_volume / total,
        dano_b.n_samples * dano_b.cell_volume / total,
    )


def overlap_dano_dano(
    dano_a: DanoModel,
    pose_a: Pose,
    dano_b: DanoModel,
    pose_b: Pose,
    field_a: DensityField,
    field_b: DensityField,
) -> Overlap:
    """Overlap of two density-field bodies.

    Own densities come from the preprocessed models; cross densities are
    queried online from the other body's field after transforming into its
    frame, since they change with the relative configuration.
    """
    if dano_a.n_points == 0 or dano_b.n_points == 0:
        raise DomainError("both models need surface points")
    world_a, world_b, prod_a, prod_b = _cross_products(
        dano_a, pose_a, dano_b, pose_b, field_a, field_b
    )
    wa, wb = _pooled_weights(dano_a, dano_b)
    sum_a = float(prod_a.sum())
    sum_b = float(prod_b.sum())
    psi = wa * sum_a + wb * sum_b
    if psi <= 0.0:
        return Overlap(0.0, None)
    moment = wa * (prod_a @ world_a) + wb * (prod_b @ world_b)
    return Overlap(psi, moment / psi)


def contact_normal_primitive(shape: PrimitiveShape, chi: np.ndarray) -> np.ndarray:
    """Outward primitive normal at the overlap centroid."""
    if isinstance(shape, HalfSpace):
        return shape.normal.copy()
    if isinstance(shape, Sphere):
        d = np.asarray(chi, dtype=float) - shape.center
        norm = np.linalg.norm(d)
        if norm < NORMAL_EPS:
            raise DomainError("degenerate normal: overlap centroid at sphere center")
        return d / norm
    raise DomainError(f"unsupported primitive {type(shape).__name__}")


def contact_normal_dano_dano(
    dano_a: DanoModel,
    pose_a: Pose,
    dano_b: DanoModel,
    pose_b: Pose,
    field_a: DensityField,
    field_b: DensityField,
) -> np.ndarray:
    """Product-weighted average of the precomputed surface normals.

    Both bodies' outward normals are rotated to world frame and averaged
    with the density products as weights; the two sums enter with opposite
    signs because the outward directions oppose each other across the
    contact. The result is oriented from B into A, matching the repulsion
    convention.
    """
    _, _, prod_a, prod_b = _cross_products(dano_a, pose_a, dano_b, pose_b, field_a, field_b)
    normals_a = dano_a.surface_normals @ pose_a.rotation().T
    normals_b = dano_b.surface_normals @ pose_b.rotation().T
    raw = prod_b @ normals_b - prod_a @ normals_a
    norm = np.linalg.norm(raw)
    if norm < NORMAL_EPS:
        raise DomainError("degenerate contact normal: weighted normals cancel")
    return raw / norm


def smoothed_unit(v: np.ndarray, eps: float = VELOCITY_SMOOTHING) -> np.ndarray:
    """v / max(||v||, eps); continuous replacement for the unit vector."""
    return v / max(float(np.linalg.norm(v)), eps)


def contact_wrench(
    psi: float,
    chi: np.ndarray | None,
    normal: np.ndarray | None,
    motion_a: BodyMotion,
    motion_b: BodyMotion,
    params: ContactParams,
) -> ContactResult:
    """Full contact wrench on body A.

    The relative velocity v is that of the material point of A at chi with
    respect to B, and omega is the relative angular velocity; both are
    decomposed into components normal and tangential to the contact. The
    spring term pushes A along +normal (B into A), the damper opposes
    normal approach, and each friction law opposes its own slip component.
    """
    if psi < 0.0:
        raise DomainError(f"overlap volume must be >= 0, got {psi}")
    if psi == 0.0:
        zero = np.zeros(3)
        return ContactResult(0.0, None, None, zero, zero.copy(), zero.copy())
    normal = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
        raise DomainError("contact normal must be unit length when psi > 0")
    chi = np.asarray(chi, dtype=float)

    v = motion_a.point_velocity(chi) - motion_b.point_velocity(chi)
    omega = motion_a.angular_velocity - motion_b.angular_velocity
    v_n = (v @ normal) * normal
    v_t = v - v_n
    omega_n = (omega @ normal) * normal
    omega_t = omega - omega_n

    f_normal = psi * (params.impact_spring * normal - params.impact_damper * v_n)
    fn_mag = float(np.linalg.norm(f_normal))
    f_tangent = -fn_mag * (
        params.sliding_friction * smoothed_unit(v_t) + params.sliding_drag * v_t
    )
    tau_n = -fn_mag * (
        params.torsional_friction * smoothed_unit(omega_n) + params.torsional_drag * omega_n
    )
    tau_t = -fn_mag * (
        params.rolling_friction * smoothed_unit(omega_t) + params.rolling_drag * omega_t
    )

    force = f_normal + f_tangent
    friction_torque = tau_n + tau_t
    torque_world = friction_torque + np.cross(chi - motion_a.com, force)
    torque_body = motion_a.rotation.T @ torque_world
    return ContactResult(psi, chi, normal, force, torque_body, friction_torque)
