"""Multi-body simulation with explicit contact wrenches.

Integration is semi-implicit Euler: contact, gravity, and control wrenches
are gathered at the current configuration, velocities update first, and
poses integrate with the updated velocities; orientation advances through
the quaternion exponential map and is renormalized every step. Linear
velocity is that of the center of mass in world frame; angular velocity is
body frame.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from danosim import rotations
from danosim.contact import (
    BodyMotion,
    ContactParams,
    contact_normal_dano_dano,
    contact_normal_primitive,
    contact_wrench,
    overlap_dano_dano,
    overlap_primitive,
)
from danosim.dano import DanoModel
from danosim.errors import DivergenceError, DomainError, ParseError
from danosim.fields import DensityField, HalfSpace, Pose, PrimitiveShape, Sphere

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class BodyState:
    """Pose plus twist of one dynamic body."""

    pose: Pose
    linear_velocity: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3)

    @staticmethod
    def at_rest(position, quaternion=None) -> "BodyState":
        q = rotations.IDENTITY_QUAT.copy() if quaternion is None else quaternion
        return BodyState(Pose(np.asarray(position, dtype=float), q), np.zeros(3), np.zeros(3))

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.pose.translation).all()
            and np.isfinite(self.pose.quaternion).all()
            and np.isfinite(self.linear_velocity).all()
            and np.isfinite(self.angular_velocity).all()
        )


def _com_inertia(inertia_origin: np.ndarray, mass: float, com: np.ndarray) -> np.ndarray:
    """Parallel-axis transfer of an origin-frame inertia to the COM frame."""
    shift = mass * (float(com @ com) * np.eye(3) - np.outer(com, com))
    return inertia_origin - shift


@dataclass
class DanoBody:
    """Dynamic body backed by a preprocessed density-field model.

    The field stays attached for online cross-density queries in
    dano-dano contact.
    """

    name: str
    model: DanoModel
    field: DensityField
    actuated: bool = False

    def __post_init__(self):
        self.com_body = self.model.com
        self.inertia_com = _com_inertia(self.model.inertia, self.model.mass, self.model.com)
        eigs = np.linalg.eigvalsh(self.inertia_com)
        if self.model.mass <= 0.0 or np.any(eigs <= 0.0):
            raise DomainError(f"body '{self.name}' needs positive mass and PD inertia")
        self.inertia_com_inv = np.linalg.inv(self.inertia_com)

    @property
    def mass(self) -> float:
        return self.model.mass

    @property
    def is_dynamic(self) -> bool:
        return True

    def with_alpha(self, alpha: float) -> "DanoBody":
        return DanoBody(self.name, self.model.with_alpha(alpha), self.field, self.actuated)


@dataclass
class SphereBody:
    """Dynamic solid sphere centered at its body-frame origin."""

    name: str
    radius: float
    mass: float
    actuated: bool = False

    def __post_init__(self):
        if self.radius <= 0.0 or self.mass <= 0.0:
            raise DomainError(f"body '{self.name}' needs positive radius and mass")
        self.com_body = np.zeros(3)
        self.inertia_com = 0.4 * self.mass * self.radius**2 * np.eye(3)
        self.inertia_com_inv = np.linalg.inv(self.inertia_com)

    @property
    def is_dynamic(self) -> bool:
        return True

    def world_shape(self, state: BodyState) -> Sphere:
        return Sphere(state.pose.translation, self.radius)


@dataclass
class StaticBody:
    """Immovable collision geometry fixed in world frame."""

    name: str
    shape: PrimitiveShape

    @property
    def is_dynamic(self) -> bool:
        return False

    @property
    def actuated(self) -> bool:
        return False


Body = DanoBody | SphereBody | StaticBody


@dataclass
class ContactPair:
    """One interacting pair; body_a must be a density-field body."""

    body_a: str
    body_b: str
    params: ContactParams = dataclass_field(default_factory=ContactParams)


@dataclass
class SceneConfig:
    """The unit of simulation: bodies, contact pairs, and stepping setup."""

    bodies: list[Body]
    contacts: list[ContactPair]
    gravity: np.ndarray = dataclass_field(default_factory=lambda: DEFAULT_GRAVITY.copy())
    dt: float = 0.01
    horizon: int = 100
    seed: int = 0

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self.validate()

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        names = [b.name for b in self.bodies]
        if len(set(names)) != len(names):
            raise DomainError("body names must be unique")
        by_name = {b.name: b for b in self.bodies}
        halfspaces = [
            b for b in self.bodies if isinstance(b, StaticBody) and isinstance(b.shape, HalfSpace)
        ]
        if len(halfspaces) > 1:
            raise DomainError("at most one static ground half-space per scene")
        for pair in self.contacts:
            for name in (pair.body_a, pair.body_b):
                if name not in by_name:
                    raise DomainError(f"contact pair references unknown body '{name}'")
            a, b = by_name[pair.body_a], by_name[pair.body_b]
            if not isinstance(a, DanoBody):
                raise DomainError(
                    f"contact pair ({pair.body_a}, {pair.body_b}): first body must be a "
                    "density-field body"
                )
            if isinstance(b, StaticBody) and not b.shape:
                raise DomainError("static contact body needs a shape")
            if not isinstance(b, (DanoBody, SphereBody, StaticBody)):
                raise DomainError("unsupported contact pair")

    def body(self, name: str) -> Body:
        for b in self.bodies:
            if b.name == name:
                return b
        raise DomainError(f"unknown body '{name}'")

    @property
    def dynamic_bodies(self) -> list[Body]:
        return [b for b in self.bodies if b.is_dynamic]

    @property
    def actuated_bodies(self) -> list[Body]:
        return [b for b in self.bodies if b.is_dynamic and b.actuated]

    def dynamic_index(self, name: str) -> int:
        for i, b in enumerate(self.dynamic_bodies):
            if b.name == name:
                return i
        raise DomainError(f"body '{name}' is not dynamic")

    def replace_body(self, name: str, new_body: Body) -> "SceneConfig":
        bodies = [new_body if b.name == name else b for b in self.bodies]
        return replace(self, bodies=bodies)

    def replace_pair_params(self, index: int, params: ContactParams) -> "SceneConfig":
        contacts = list(self.contacts)
        contacts[index] = replace(contacts[index], params=params)
        return replace(self, contacts=contacts)


def _pair_contact(scene: SceneConfig, pair: ContactPair, states: list[BodyState]):
    """Overlap, normal, and motions for one pair at the current states."""
    dyn_names = [b.name for b in scene.dynamic_bodies]
    body_a = scene.body(pair.body_a)
    body_b = scene.body(pair.body_b)
    state_a = states[dyn_names.index(pair.body_a)]

    if isinstance(body_b, DanoBody):
        state_b = states[dyn_names.index(pair.body_b)]
        ov = overlap_dano_dano(
            body_a.model, state_a.pose, body_b.model, state_b.pose, body_a.field, body_b.field
        )
        if ov.psi <= 0.0:
            return ov, None, None, None
        normal = contact_normal_dano_dano(
            body_a.model, state_a.pose, body_b.model, state_b.pose, body_a.field, body_b.field
        )
        motion_b = _body_motion(body_b, state_b)
    else:
        if isinstance(body_b, StaticBody):
            shape = body_b.shape
            state_b = None
            motion_b = BodyMotion.stationary()
        else:
            state_b = states[dyn_names.index(pair.body_b)]
            shape = body_b.world_shape(state_b)
            motion_b = _body_motion(body_b, state_b)
        ov = overlap_primitive(body_a.model, state_a.pose, shape)
        if ov.psi <= 0.0:
            return ov, None, None, None
        normal = contact_normal_primitive(shape, ov.chi)

    motion_a = _body_motion(body_a, state_a)
    return ov, normal, motion_a, motion_b


def _body_motion(body: Body, state: BodyState) -> BodyMotion:
    rot = state.pose.rotation()
    com = state.pose.translation + rot @ body.com_body
    return BodyMotion(com, state.linear_velocity, rot @ state.angular_velocity, rot)


def step(scene: SceneConfig, states: list[BodyState], controls: np.ndarray | None = None):
    """Advance all dynamic bodies by one time step.

    controls is an (n_actuated, 6) array of wrenches, force in world frame
    and torque in body frame, ordered like scene.actuated_bodies.
    """
    dyn = scene.dynamic_bodies
    if len(states) != len(dyn):
        raise DomainError(f"expected {len(dyn)} states, got {len(states)}")
    actuated = scene.actuated_bodies
    if controls is None:
        controls = np.zeros((len(actuated), 6))
    controls = np.asarray(controls, dtype=float).reshape(len(actuated), 6)

    forces = [body.mass * scene.gravity for body in dyn]
    torques_world = [np.zeros(3) for _ in dyn]

    act_index = {b.name: i for i, b in enumerate(actuated)}
    for i, body in enumerate(dyn):
        if body.name in act_index:
            u = controls[act_index[body.name]]
            forces[i] = forces[i] + u[:3]
            torques_world[i] = torques_world[i] + states[i].pose.rotation() @ u[3:]

    dyn_names = [b.name for b in dyn]
    for pair in scene.contacts:
        ov, normal, motion_a, motion_b = _pair_contact(scene, pair, states)
        if ov.psi <= 0.0:
            continue
        result = contact_wrench(ov.psi, ov.chi, normal, motion_a, motion_b, pair.params)
        ia = dyn_names.index(pair.body_a)
        forces[ia] = forces[ia] + result.force
        torques_world[ia] = torques_world[ia] + result.friction_torque_world + np.cross(
            ov.chi - motion_a.com, result.force
        )
        body_b = scene.body(pair.body_b)
        if body_b.is_dynamic:
            ib = dyn_names.index(pair.body_b)
            forces[ib] = forces[ib] - result.force
            torques_world[ib] = (
                torques_world[ib]
                - result.friction_torque_world
                + np.cross(ov.chi - motion_b.com, -result.force)
            )

    new_states = []
    dt = scene.dt
    for body, state, force, torque_w in zip(dyn, states, forces, torques_world):
        rot = state.pose.rotation()
        com = state.pose.translation + rot @ body.com_body
        v_new = state.linear_velocity + dt * force / body.mass
        omega = state.angular_velocity
        torque_body = rot.T @ torque_w
        omega_new = omega + dt * (
            body.inertia_com_inv @ (torque_body - np.cross(omega, body.inertia_com @ omega))
        )
        com_new = com + dt * v_new
        q_new = rotations.integrate_quat(state.pose.quaternion, omega_new, dt)
        translation_new = com_new - rotations.quat_to_matrix(q_new) @ body.com_body
        new_state = BodyState(Pose(translation_new, q_new), v_new, omega_new)
        if not new_state.is_finite():
            raise DivergenceError(f"non-finite state for body '{body.name}'", body=body.name)
        new_states.append(new_state)
    return new_states


@dataclass
class Trajectory:
    """Time-indexed states of the dynamic bodies, plus static body poses."""

    times: np.ndarray
    body_names: list[str]
    states: list[list[BodyState]]
    static_bodies: list[StaticBody] = dataclass_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def body_states(self, name: str) -> list[BodyState]:
        idx = self.body_names.index(name)
        return [frame[idx] for frame in self.states]

    def final(self) -> list[BodyState]:
        return self.states[-1]


def simulate(
    scene: SceneConfig,
    initial_states: list[BodyState],
    controls: np.ndarray | None = None,
    n_steps: int | None = None,
) -> Trajectory:
    """Roll the scene forward, recording every state.

    controls is (n_steps, n_actuated, 6) or None for an unactuated rollout.
    """
    if n_steps is None:
        n_steps = scene.horizon if controls is None else len(controls)
    if controls is not None and len(controls) < n_steps:
        raise DomainError(f"need {n_steps} control frames, got {len(controls)}")
    states = [
        BodyState(s.pose, s.linear_velocity.copy(), s.angular_velocity.copy())
        for s in initial_states
    ]
    frames = [states]
    for k in range(n_steps):
        u = None if controls is None else controls[k]
        try:
            states = step(scene, states, u)
        except DivergenceError as exc:
            raise DivergenceError(f"step {k}: {exc}", step_index=k, body=exc.body) from exc
        frames.append(states)
    times = np.arange(n_steps + 1) * scene.dt
    statics = [b for b in scene.bodies if isinstance(b, StaticBody)]
    return Trajectory(times, [b.name for b in scene.dynamic_bodies], frames, statics)


TRAJECTORY_COLUMNS = [
    "t", "body_id", "px", "py", "pz", "qw", "qx", "qy", "qz",
    "vx", "vy", "vz", "wx", "wy", "wz",
]


def save_trajectory(traj: Trajectory, path, header_comment: str = "") -> None:
    """Write the comma-separated trajectory format, one row per (step, body)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for t, frame in zip(traj.times, traj.states):
            for name, state in zip(traj.body_names, frame):
                row = [
                    f"{t:.17g}", name,
                    *(f"{v:.17g}" for v in state.pose.translation),
                    *(f"{v:.17g}" for v in state.pose.quaternion),
                    *(f"{v:.17g}" for v in state.linear_velocity),
                    *(f"{v:.17g}" for v in state.angular_velocity),
                ]
                fh.write(",".join(row) + "\n")


def load_trajectory(path) -> tuple[np.ndarray, dict[str, list[BodyState]]]:
    """Read a trajectory file; returns (times, states keyed by body name)."""
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: empty trajectory file") from None
    if [h.strip() for h in header] != TRAJECTORY_COLUMNS:
        raise ParseError(f"{path}: unexpected trajectory header {header}")
    for row in reader:
        if not row:
            continue
        if len(row) != len(TRAJECTORY_COLUMNS):
            raise ParseError(f"{path}: row with {len(row)} fields")
        rows.append(row)
    by_body: dict[str, list[BodyState]] = {}
    times_seen: dict[float, None] = {}
    for row in rows:
        t = float(row[0])
        name = row[1]
        vals = [float(v) for v in row[2:]]
        state = BodyState(
            Pose(np.array(vals[0:3]), np.array(vals[3:7])),
            np.array(vals[7:10]),
            np.array(vals[10:13]),
        )
        by_body.setdefault(name, []).append(state)
        times_seen[t] = None
    times = np.array(sorted(times_seen))
    counts = {name: len(states) for name, states in by_body.items()}
    if len(set(counts.values())) > 1:
        raise ParseError(f"{path}: bodies have differing frame counts {counts}")
    return times, by_body


CONTROL_COLUMNS = ["t", "body_id", "fx", "fy", "fz", "tx", "ty", "tz"]


def save_controls(
    scene: SceneConfig, controls: np.ndarray, path, header_comment: str = ""
) -> None:
    """Write control wrenches, one row per (step, actuated body)."""
    actuated = scene.actuated_bodies
    controls = np.asarray(controls, dtype=float)
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(CONTROL_COLUMNS) + "\n")
        for k in range(len(controls)):
            t = k * scene.dt
            for i, body in enumerate(actuated):
                vals = ",".join(f"{v:.17g}" for v in controls[k, i])
                fh.write(f"{t:.17g},{body.name},{vals}\n")


def load_controls(scene: SceneConfig, path) -> np.ndarray:
    """Read control wrenches into the (n_steps, n_actuated, 6) layout."""
    actuated = [b.name for b in scene.actuated_bodies]
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != CONTROL_COLUMNS:
        raise ParseError(f"{path}: unexpected controls header {header}")
    per_body: dict[str, list[list[float]]] = {name: [] for name in actuated}
    for row in reader:
        if not row:
            continue
        name = row[1]
        if name not in per_body:
            raise ParseError(f"{path}: controls for non-actuated body '{name}'")
        per_body[name].append([float(v) for v in row[2:8]])
    counts = {len(v) for v in per_body.values()}
    if len(counts) != 1:
        raise ParseError(f"{path}: differing control counts per body")
    n = counts.pop()
    out = np.zeros((n, len(actuated), 6))
    for i, name in enumerate(actuated):
        out[:, i, :] = np.asarray(per_body[name])
    return out


def linear_momentum(scene: SceneConfig, states: list[BodyState]) -> np.ndarray:
    return sum(
        (body.mass * state.linear_velocity for body, state in zip(scene.dynamic_bodies, states)),
        np.zeros(3),
    )


def angular_momentum(scene: SceneConfig, states: list[BodyState]) -> np.ndarray:
    """Total angular momentum about the world origin."""
    total = np.zeros(3)
    for body, state in zip(scene.dynamic_bodies, states):
        rot = state.pose.rotation()
        com = state.pose.translation + rot @ body.com_body
        spin = rot @ (body.inertia_com @ state.angular_velocity)
        total += np.cross(com, body.mass * state.linear_velocity) + spin
    return total


def kinetic_energy(scene: SceneConfig, states: list[BodyState]) -> float:
    total = 0.0
    for body, state in zip(scene.dynamic_bodies, states):
        omega = state.angular_velocity
        total += 0.5 * body.mass * float(state.linear_velocity @ state.linear_velocity)
        total += 0.5 * float(omega @ (body.inertia_com @ omega))
    return total
