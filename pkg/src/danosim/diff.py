"""Simulation-step Jacobians and rollout gradients by finite differences.

Each dynamic body contributes a 12-dimensional tangent block: 3 position,
3 rotation (body-frame axis-angle perturbation composed on the right of
the quaternion), 3 linear velocity, 3 angular velocity, in scene order.
Controls contribute 6 per actuated body.

The contact sums are piecewise smooth in the configuration: the density
weights are fixed offline, so a perturbation only changes the overlap when
a sample point crosses a membership boundary. Finite differences therefore
measure the derivative of the smooth branch; step sizes should keep the
probes on one branch. Coarser steps average across branches instead, which
is the robust choice inside optimization loops.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from danosim import rotations
from danosim.dynamics import (
    BodyState,
    ContactPair,
    DanoBody,
    SceneConfig,
    SphereBody,
    StaticBody,
    simulate,
    step,
)
from danosim.errors import DivergenceError, DomainError
from danosim.fields import Pose

DEFAULT_H_REL = 1e-5


@dataclass
class StateLayout:
    """Index map between body states and flat tangent coordinates."""

    body_names: list[str]
    actuated_names: list[str]

    @property
    def n_state(self) -> int:
        return 12 * len(self.body_names)

    @property
    def n_control(self) -> int:
        return 6 * len(self.actuated_names)

    def block(self, name: str) -> slice:
        i = self.body_names.index(name)
        return slice(12 * i, 12 * (i + 1))

    def coordinate_names(self) -> list[str]:
        names = []
        for body in self.body_names:
            for coord in ("px", "py", "pz", "rx", "ry", "rz", "vx", "vy", "vz", "wx", "wy", "wz"):
                names.append(f"{body}.{coord}")
        return names


def state_tangent_layout(scene: SceneConfig) -> StateLayout:
    return StateLayout(
        [b.name for b in scene.dynamic_bodies],
        [b.name for b in scene.actuated_bodies],
    )


def apply_state_tangent(states: list[BodyState], tangent: np.ndarray) -> list[BodyState]:
    """Right-perturb every body state by its 12-coordinate tangent block."""
    tangent = np.asarray(tangent, dtype=float)
    out = []
    for i, s in enumerate(states):
        d = tangent[12 * i : 12 * (i + 1)]
        q = rotations.quat_multiply(s.pose.quaternion, rotations.quat_from_rotvec(d[3:6]))
        out.append(
            BodyState(
                Pose(s.pose.translation + d[0:3], rotations.normalize_quat(q)),
                s.linear_velocity + d[6:9],
                s.angular_velocity + d[9:12],
            )
        )
    return out


def state_tangent_difference(a: list[BodyState], b: list[BodyState]) -> np.ndarray:
    """Tangent coordinates of (a minus b), rotation via relative axis-angle."""
    out = np.zeros(12 * len(a))
    for i, (sa, sb) in enumerate(zip(a, b)):
        d = out[12 * i : 12 * (i + 1)]
        d[0:3] = sa.pose.translation - sb.pose.translation
        d[3:6] = rotations.quat_difference_rotvec(sb.pose.quaternion, sa.pose.quaternion)
        d[6:9] = sa.linear_velocity - sb.linear_velocity
        d[9:12] = sa.angular_velocity - sb.angular_velocity
    return out


def state_tangent_values(states: list[BodyState]) -> np.ndarray:
    """Current coordinate magnitudes used for relative step sizing.

    Rotation coordinates are perturbations about zero, so their magnitude
    is zero and the relative step falls back to the absolute floor.
    """
    vals = np.zeros(12 * len(states))
    for i, s in enumerate(states):
        v = vals[12 * i : 12 * (i + 1)]
        v[0:3] = s.pose.translation
        v[6:9] = s.linear_velocity
        v[9:12] = s.angular_velocity
    return vals


@dataclass
class ParamEntry:
    """One named scalar of the dynamics parameter vector."""

    name: str
    kind: str  # "alpha" or a ContactParams field name
    target: str | int  # body name for alpha, contact pair index otherwise
    lower: float
    upper: float


@dataclass
class ParamVector:
    """Ordered, bounded dynamics parameters (mass scale and contact laws)."""

    entries: list[ParamEntry]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise DomainError("parameter names must be unique")
        if len(self.values) != len(self.entries):
            raise DomainError("parameter value count mismatch")
        for e, v in zip(self.entries, self.values):
            if not (e.lower <= v <= e.upper):
                raise DomainError(
                    f"parameter {e.name}={v:g} outside bounds [{e.lower:g}, {e.upper:g}]"
                )

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def lower(self) -> np.ndarray:
        return np.array([e.lower for e in self.entries])

    @property
    def upper(self) -> np.ndarray:
        return np.array([e.upper for e in self.entries])

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.entries, np.asarray(values, dtype=float))

    def apply(self, scene: SceneConfig, values: np.ndarray | None = None) -> SceneConfig:
        """Scene with these parameter values substituted."""
        values = self.values if values is None else np.asarray(values, dtype=float)
        out = scene
        for entry, value in zip(self.entries, values):
            if entry.kind == "alpha":
                body = out.body(str(entry.target))
                if not isinstance(body, DanoBody):
                    raise DomainError(f"alpha parameter targets non-dano body '{entry.target}'")
                out = out.replace_body(body.name, body.with_alpha(float(value)))
            else:
                index = int(entry.target)
                params = out.contacts[index].params.replace_value(entry.kind, float(value))
                out = out.replace_pair_params(index, params)
        return out


def parse_param_name(scene: SceneConfig, name: str) -> tuple[str, str | int]:
    """Resolve 'body.alpha' or 'bodyA:bodyB.param' to a ParamEntry target."""
    prefix, _, field = name.rpartition(".")
    if not prefix:
        raise DomainError(f"malformed parameter name '{name}'")
    if field == "alpha":
        scene.body(prefix)
        return "alpha", prefix
    if ":" not in prefix:
        raise DomainError(f"contact parameter '{name}' needs a 'bodyA:bodyB.' prefix")
    a, _, b = prefix.partition(":")
    for i, pair in enumerate(scene.contacts):
        if {pair.body_a, pair.body_b} == {a, b}:
            # validates the field name
            pair.params.replace_value(field, getattr(pair.params, field))
            return field, i
    raise DomainError(f"no contact pair ({a}, {b}) in scene")


def make_param_vector(scene: SceneConfig, specs: list[dict]) -> ParamVector:
    """Build a ParamVector from {name, init, min, max} dictionaries."""
    entries = []
    values = []
    for spec in specs:
        kind, target = parse_param_name(scene, spec["name"])
        entries.append(
            ParamEntry(spec["name"], kind, target, float(spec["min"]), float(spec["max"]))
        )
        values.append(float(spec["init"]))
    return ParamVector(entries, np.array(values))


@dataclass
class StepJacobians:
    """One-step derivatives in tangent coordinates.

    A: state x state, B: state x control, C: state x params (empty when no
    parameter vector was supplied). h_* record the per-column steps used.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    h_state: np.ndarray
    h_control: np.ndarray
    h_params: np.ndarray


def _named_step(scene, states, controls, column_name):
    try:
        return step(scene, states, controls)
    except DivergenceError as exc:
        raise DivergenceError(f"perturbed rollout diverged at column {column_name}: {exc}") from exc


def step_jacobians(
    scene: SceneConfig,
    states: list[BodyState],
    controls: np.ndarray | None = None,
    params: ParamVector | None = None,
    h_rel: float = DEFAULT_H_REL,
) -> StepJacobians:
    """Central-difference Jacobians of one simulation step.

    Per-column step h = h_rel * max(1, |value|). Parameter columns at a
    bound fall back to a one-sided difference on the feasible side.
    """
    if h_rel <= 0.0:
        raise DomainError(f"h_rel must be > 0, got {h_rel}")
    layout = state_tangent_layout(scene)
    names = layout.coordinate_names()
    actuated = scene.actuated_bodies
    if controls is None:
        controls = np.zeros((len(actuated), 6))
    controls = np.asarray(controls, dtype=float).reshape(len(actuated), 6)

    n_x, n_u = layout.n_state, layout.n_control
    A = np.zeros((n_x, n_x))
    B = np.zeros((n_x, n_u))
    values = state_tangent_values(states)
    h_state = h_rel * np.maximum(1.0, np.abs(values))
    for j in range(n_x):
        e = np.zeros(n_x)
        e[j] = h_state[j]
        plus = _named_step(scene, apply_state_tangent(states, e), controls, names[j])
        minus = _named_step(scene, apply_state_tangent(states, -e), controls, names[j])
        A[:, j] = state_tangent_difference(plus, minus) / (2.0 * h_state[j])

    flat_u = controls.reshape(-1)
    h_control = h_rel * np.maximum(1.0, np.abs(flat_u))
    for j in range(n_u):
        du = np.zeros(n_u)
        du[j] = h_control[j]
        plus = _named_step(scene, states, (flat_u + du).reshape(-1, 6), f"u[{j}]")
        minus = _named_step(scene, states, (flat_u - du).reshape(-1, 6), f"u[{j}]")
        B[:, j] = state_tangent_difference(plus, minus) / (2.0 * h_control[j])

    if params is None:
        C = np.zeros((n_x, 0))
        h_params = np.zeros(0)
    else:
        d = len(params.values)
        C = np.zeros((n_x, d))
        h_params = h_rel * np.maximum(1.0, np.abs(params.values))
        base_states = None
        for j in range(d):
            h = h_params[j]
            v_plus = params.values.copy()
            v_minus = params.values.copy()
            v_plus[j] += h
            v_minus[j] -= h
            name = params.names[j]
            if v_plus[j] > params.entries[j].upper:
                if base_states is None:
                    base_states = _named_step(params.apply(scene), states, controls, name)
                minus = _named_step(params.apply(scene, v_minus), states, controls, name)
                C[:, j] = state_tangent_difference(base_states, minus) / h
            elif v_minus[j] < params.entries[j].lower:
                if base_states is None:
                    base_states = _named_step(params.apply(scene), states, controls, name)
                plus = _named_step(params.apply(scene, v_plus), states, controls, name)
                C[:, j] = state_tangent_difference(plus, base_states) / h
            else:
                plus = _named_step(params.apply(scene, v_plus), states, controls, name)
                minus = _named_step(params.apply(scene, v_minus), states, controls, name)
                C[:, j] = state_tangent_difference(plus, minus) / (2.0 * h)

    return StepJacobians(A, B, C, h_state, h_control, h_params)


class QuadraticStateLoss:
    """0.5 * sum_t ||x_t (-) ref_t||^2 weighted per tangent coordinate.

    references maps step index (0-based into the rollout, 0 = initial
    state) to a reference state list; steps without a reference contribute
    nothing.
    """

    def __init__(self, references: dict[int, list[BodyState]], weights: np.ndarray):
        self.references = references
        self.weights = np.asarray(weights, dtype=float)

    def value(self, states_sequence: list[list[BodyState]]) -> float:
        total = 0.0
        for t, ref in self.references.items():
            d = state_tangent_difference(states_sequence[t], ref)
            total += 0.5 * float(d @ (self.weights * d))
        return total

    def state_gradient(self, t: int, states_sequence: list[list[BodyState]]) -> np.ndarray:
        if t not in self.references:
            return np.zeros(len(self.weights))
        d = state_tangent_difference(states_sequence[t], self.references[t])
        return self.weights * d


def rollout_gradient(
    scene: SceneConfig,
    initial_states: list[BodyState],
    controls: np.ndarray,
    loss,
    params: ParamVector | None = None,
    h_rel: float = DEFAULT_H_REL,
):
    """Gradient of a rollout loss over controls and parameters.

    Runs the discrete adjoint recursion backward over stored per-step
    Jacobians. loss must provide value(states_sequence) and
    state_gradient(t, states_sequence) in tangent coordinates.

    Returns (value, grad_u, grad_theta) with grad_u shaped like controls.
    """
    sim_scene = params.apply(scene) if params is not None else scene
    n_steps = len(controls) if controls is not None else scene.horizon
    actuated = scene.actuated_bodies
    if controls is None:
        controls = np.zeros((n_steps, len(actuated), 6))
    controls = np.asarray(controls, dtype=float)

    traj = simulate(sim_scene, initial_states, controls, n_steps)
    frames = traj.states
    jacs = [
        step_jacobians(sim_scene, frames[t], controls[t], params, h_rel)
        for t in range(n_steps)
    ]

    d = 0 if params is None else len(params.values)
    grad_u = np.zeros_like(controls.reshape(n_steps, -1))
    grad_theta = np.zeros(d)
    lam = loss.state_gradient(n_steps, frames)
    for t in range(n_steps - 1, -1, -1):
        grad_u[t] = jacs[t].B.T @ lam
        if d:
            grad_theta += jacs[t].C.T @ lam
        lam = loss.state_gradient(t, frames) + jacs[t].A.T @ lam
    return loss.value(frames), grad_u.reshape(controls.shape), grad_theta


def loss_gradient_fd(
    scene: SceneConfig,
    initial_states: list[BodyState],
    controls: np.ndarray,
    loss,
    params: ParamVector | None = None,
    h: float = 1e-7,
    control_columns: list[tuple[int, int]] | None = None,
):
    """End-to-end central finite differences of the scalar rollout loss.

    Independent verification path for rollout_gradient: every probe is a
    full re-simulation. control_columns selects (step, flat control index)
    pairs to probe; None probes all of them.

    Returns (grad_u_entries, grad_theta) where grad_u_entries maps the
    probed columns to their derivative.
    """
    controls = np.asarray(controls, dtype=float)
    n_steps = len(controls)
    sim_scene = params.apply(scene) if params is not None else scene

    def run(scn, u):
        return loss.value(simulate(scn, initial_states, u, n_steps).states)

    flat = controls.reshape(n_steps, -1)
    if control_columns is None:
        control_columns = [(t, j) for t in range(n_steps) for j in range(flat.shape[1])]
    grad_u_entries = {}
    for (t, j) in control_columns:
        hj = h * max(1.0, abs(flat[t, j]))
        up = flat.copy()
        um = flat.copy()
        up[t, j] += hj
        um[t, j] -= hj
        grad_u_entries[(t, j)] = (
            run(sim_scene, up.reshape(controls.shape)) - run(sim_scene, um.reshape(controls.shape))
        ) / (2.0 * hj)

    if params is None:
        return grad_u_entries, np.zeros(0)
    grad_theta = np.zeros(len(params.values))
    for j in range(len(params.values)):
        hj = h * max(1.0, abs(params.values[j]))
        v_plus = params.values.copy()
        v_minus = params.values.copy()
        v_plus[j] = min(v_plus[j] + hj, params.entries[j].upper)
        v_minus[j] = max(v_minus[j] - hj, params.entries[j].lower)
        span = v_plus[j] - v_minus[j]
        if span <= 0.0:
            raise DomainError(f"parameter {params.names[j]} has zero feasible span")
        grad_theta[j] = (
            run(params.apply(scene, v_plus), controls) - run(params.apply(scene, v_minus), controls)
        ) / span
    return grad_u_entries, grad_theta


def contact_membership_margin(scene: SceneConfig, states: list[BodyState]) -> float:
    """Smallest |signed distance| of any sample point to a primitive boundary.

    Finite-difference probes smaller than this margin cannot change any
    contact membership, so the dynamics is smooth within it. Only
    primitive-backed pairs contribute; dano-dano pairs have no sharp
    membership boundary unless their fields are indicators.
    """
    dyn_names = [b.name for b in scene.dynamic_bodies]
    margin = np.inf
    for pair in scene.contacts:
        body_a = scene.body(pair.body_a)
        body_b = scene.body(pair.body_b)
        if not isinstance(body_a, DanoBody):
            continue
        state_a = states[dyn_names.index(pair.body_a)]
        if isinstance(body_b, StaticBody):
            shape = body_b.shape
        elif isinstance(body_b, SphereBody):
            shape = body_b.world_shape(states[dyn_names.index(pair.body_b)])
        else:
            continue
        world = state_a.pose.transform_points(body_a.model.surface_points)
        live = body_a.model.surface_densities > 0.0
        if not live.any():
            continue
        margin = min(margin, float(np.min(np.abs(shape.signed_values(world[live])))))
    return margin
