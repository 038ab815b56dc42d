"""Trajectory optimization with an iterative LQR solver.

Costs are quadratic in the state tangent (relative to goal states) and in
the controls. Inequality constraints, control bounds and optional state
bounds, enter through quadratic penalties with a multiplicative outer
schedule. The backward pass quadratizes along the current rollout using
the diff module's finite-difference A/B Jacobians with adaptive
regularization; the forward pass line-searches the feedback policy through
the true simulator, so returned trajectories are always dynamically
feasible.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from danosim.diff import (
    apply_state_tangent,
    state_tangent_difference,
    state_tangent_layout,
    step_jacobians,
)
from danosim.dynamics import BodyState, SceneConfig, step
from danosim.errors import DanosimError, DomainError

logger = logging.getLogger(__name__)


@dataclass
class IlqrSettings:
    max_iterations: int = 50
    cost_tolerance: float = 1e-6
    regularization_init: float = 1e-6
    regularization_scale: float = 10.0
    regularization_max: float = 1e10
    line_search_steps: int = 10
    jacobian_step: float = 1e-3  # coarse: secant-averages the contact staircase


@dataclass
class PenaltySettings:
    initial_weight: float = 1e2
    scale: float = 10.0
    outer_iterations: int = 1
    violation_tolerance: float = 1e-3


@dataclass
class TrajOptProblem:
    """Quadratic tracking problem over a fixed horizon.

    stage_state_weights / final_state_weights are diagonals over the state
    tangent; goal_states supplies the reference point of the quadratics.
    Control bounds are elementwise over the flattened (n_act * 6) controls.
    """

    scene: SceneConfig
    horizon: int
    initial_states: list[BodyState]
    goal_states: list[BodyState]
    stage_state_weights: np.ndarray
    control_weights: np.ndarray
    final_state_weights: np.ndarray
    control_lower: np.ndarray | None = None
    control_upper: np.ndarray | None = None
    state_lower: np.ndarray | None = None
    state_upper: np.ndarray | None = None
    ilqr: IlqrSettings = dataclass_field(default_factory=IlqrSettings)
    penalty: PenaltySettings = dataclass_field(default_factory=PenaltySettings)

    def __post_init__(self):
        if self.horizon < 2:
            raise DomainError(f"horizon must be >= 2, got {self.horizon}")
        layout = state_tangent_layout(self.scene)
        self.stage_state_weights = np.asarray(self.stage_state_weights, dtype=float)
        self.control_weights = np.asarray(self.control_weights, dtype=float)
        self.final_state_weights = np.asarray(self.final_state_weights, dtype=float)
        if len(self.stage_state_weights) != layout.n_state:
            raise DomainError("stage state weight size mismatch")
        if len(self.final_state_weights) != layout.n_state:
            raise DomainError("final state weight size mismatch")
        if len(self.control_weights) != layout.n_control:
            raise DomainError("control weight size mismatch")
        for w in (self.stage_state_weights, self.control_weights, self.final_state_weights):
            if np.any(w < 0.0):
                raise DomainError("cost weights must be >= 0")
        for bound in (self.control_lower, self.control_upper):
            if bound is not None and not np.isfinite(bound).all():
                raise DomainError("control bounds must be finite")

    @property
    def n_controls(self) -> int:
        return len(self.control_weights)


def _penalty_terms(problem: TrajOptProblem, x_diff: np.ndarray, u: np.ndarray, rho: float):
    """Penalty value plus gradient/Hessian diagonals for one stage."""
    value = 0.0
    grad_u = np.zeros_like(u)
    hess_u = np.zeros_like(u)
    if problem.control_upper is not None:
        over = np.maximum(0.0, u - problem.control_upper)
        value += 0.5 * rho * float(over @ over)
        grad_u += rho * over
        hess_u += rho * (over > 0.0)
    if problem.control_lower is not None:
        under = np.maximum(0.0, problem.control_lower - u)
        value += 0.5 * rho * float(under @ under)
        grad_u -= rho * under
        hess_u += rho * (under > 0.0)
    grad_x = np.zeros_like(x_diff)
    hess_x = np.zeros_like(x_diff)
    if problem.state_upper is not None:
        over = np.maximum(0.0, x_diff - problem.state_upper)
        value += 0.5 * rho * float(over @ over)
        grad_x += rho * over
        hess_x += rho * (over > 0.0)
    if problem.state_lower is not None:
        under = np.maximum(0.0, problem.state_lower - x_diff)
        value += 0.5 * rho * float(under @ under)
        grad_x -= rho * under
        hess_x += rho * (under > 0.0)
    return value, grad_u, hess_u, grad_x, hess_x


def evaluate_cost(
    problem: TrajOptProblem,
    states: list[list[BodyState]],
    controls: np.ndarray,
    penalty_weight: float | None = None,
) -> float:
    """Total quadratic cost plus the current constraint penalties."""
    if len(states) != problem.horizon or len(controls) != problem.horizon - 1:
        raise DomainError(
            f"horizon {problem.horizon} needs {problem.horizon} states and "
            f"{problem.horizon - 1} controls, got {len(states)} and {len(controls)}"
        )
    rho = problem.penalty.initial_weight if penalty_weight is None else penalty_weight
    controls = np.asarray(controls, dtype=float).reshape(problem.horizon - 1, -1)
    total = 0.0
    for t in range(problem.horizon - 1):
        d = state_tangent_difference(states[t], problem.goal_states)
        u = controls[t]
        total += 0.5 * float(d @ (problem.stage_state_weights * d))
        total += 0.5 * float(u @ (problem.control_weights * u))
        total += _penalty_terms(problem, d, u, rho)[0]
    d = state_tangent_difference(states[-1], problem.goal_states)
    total += 0.5 * float(d @ (problem.final_state_weights * d))
    total += _penalty_terms(problem, d, np.zeros(problem.n_controls), rho)[0]
    return total


def _rollout(problem: TrajOptProblem, controls: np.ndarray) -> list[list[BodyState]]:
    states = [problem.initial_states]
    for t in range(problem.horizon - 1):
        states.append(step(problem.scene, states[-1], controls[t].reshape(-1, 6)))
    return states


def _closed_loop_rollout(problem, states_ref, controls_ref, k_seq, K_seq, alpha):
    controls = np.zeros_like(controls_ref)
    states = [problem.initial_states]
    for t in range(problem.horizon - 1):
        dx = state_tangent_difference(states[t], states_ref[t])
        controls[t] = controls_ref[t] + alpha * k_seq[t] + K_seq[t] @ dx
        states.append(step(problem.scene, states[-1], controls[t].reshape(-1, 6)))
    return states, controls


@dataclass
class CostRecord:
    outer: int
    iteration: int
    cost: float
    accepted: bool
    regularization: float
    max_violation: float


@dataclass
class IlqrResult:
    states: list[list[BodyState]]
    controls: np.ndarray
    history: list[CostRecord]
    status: str
    iterations: int
    final_cost: float
    elapsed: float

    def accepted_costs(self) -> list[float]:
        return [r.cost for r in self.history if r.accepted]


def _constraint_violation(problem: TrajOptProblem, controls: np.ndarray) -> float:
    v = 0.0
    if problem.control_upper is not None:
        v = max(v, float(np.max(np.maximum(0.0, controls - problem.control_upper))))
    if problem.control_lower is not None:
        v = max(v, float(np.max(np.maximum(0.0, problem.control_lower - controls))))
    return v


def ilqr_solve(problem: TrajOptProblem, initial_controls: np.ndarray) -> IlqrResult:
    """Constrained iLQR: penalty outer loop around a line-searched solver.

    Returns the best trajectory found. Cost history is non-increasing over
    accepted iterations within each penalty stage.
    """
    t_start = time.perf_counter()
    n_u = problem.n_controls
    controls = np.asarray(initial_controls, dtype=float).reshape(problem.horizon - 1, n_u)
    if not np.isfinite(controls).all():
        raise DomainError("initial controls must be finite")
    settings = problem.ilqr
    history: list[CostRecord] = []
    status = "max_iterations"
    total_iters = 0
    rho = problem.penalty.initial_weight
    states = _rollout(problem, controls)

    for outer in range(problem.penalty.outer_iterations):
        cost = evaluate_cost(problem, states, controls, rho)
        reg = settings.regularization_init
        history.append(CostRecord(outer, 0, cost, True, reg, _constraint_violation(problem, controls)))
        for iteration in range(1, settings.max_iterations + 1):
            total_iters += 1
            backward = None
            while backward is None:
                backward = _backward_pass(problem, states, controls, rho, reg)
                if backward is None:
                    reg *= settings.regularization_scale
                    if reg > settings.regularization_max:
                        break
            if backward is None:
                status = "ill_conditioned"
                logger.warning("backward pass failed below regularization cap")
                break
            k_seq, K_seq = backward

            improved = False
            alpha = 1.0
            for _ in range(settings.line_search_steps):
                try:
                    trial_states, trial_controls = _closed_loop_rollout(
                        problem, states, controls, k_seq, K_seq, alpha
                    )
                    trial_cost = evaluate_cost(problem, trial_states, trial_controls, rho)
                except DanosimError:
                    trial_cost = np.inf
                if np.isfinite(trial_cost) and trial_cost < cost:
                    improvement = cost - trial_cost
                    states, controls, cost = trial_states, trial_controls, trial_cost
                    improved = True
                    break
                alpha *= 0.5
            if improved:
                reg = max(reg / settings.regularization_scale, settings.regularization_init)
                history.append(
                    CostRecord(outer, iteration, cost, True, reg,
                               _constraint_violation(problem, controls))
                )
                if improvement < settings.cost_tolerance * max(1.0, abs(cost)):
                    status = "converged"
                    break
            else:
                reg *= settings.regularization_scale
                history.append(
                    CostRecord(outer, iteration, cost, False, reg,
                               _constraint_violation(problem, controls))
                )
                if reg > settings.regularization_max:
                    status = "ill_conditioned"
                    logger.warning("no acceptable step below regularization cap")
                    break
        violation = _constraint_violation(problem, controls)
        if violation <= problem.penalty.violation_tolerance:
            if status == "max_iterations" and outer == problem.penalty.outer_iterations - 1:
                pass
            break
        rho *= problem.penalty.scale

    return IlqrResult(
        states=states,
        controls=controls,
        history=history,
        status=status,
        iterations=total_iters,
        final_cost=evaluate_cost(problem, states, controls, rho),
        elapsed=time.perf_counter() - t_start,
    )


def _backward_pass(problem, states, controls, rho, reg):
    """Riccati sweep on the quadratized cost; None when Q_uu is not PD."""
    n_x = len(problem.stage_state_weights)
    n_u = problem.n_controls
    T = problem.horizon
    k_seq = np.zeros((T - 1, n_u))
    K_seq = np.zeros((T - 1, n_u, n_x))

    d = state_tangent_difference(states[-1], problem.goal_states)
    _, _, _, pen_gx, pen_hx = _penalty_terms(problem, d, np.zeros(n_u), rho)
    v_x = problem.final_state_weights * d + pen_gx
    v_xx = np.diag(problem.final_state_weights + pen_hx)

    for t in range(T - 2, -1, -1):
        jac = step_jacobians(
            problem.scene, states[t], controls[t].reshape(-1, 6),
            h_rel=problem.ilqr.jacobian_step,
        )
        A, B = jac.A, jac.B
        d = state_tangent_difference(states[t], problem.goal_states)
        u = controls[t]
        pen_v, pen_gu, pen_hu, pen_gx, pen_hx = _penalty_terms(problem, d, u, rho)
        l_x = problem.stage_state_weights * d + pen_gx
        l_u = problem.control_weights * u + pen_gu
        l_xx = problem.stage_state_weights + pen_hx
        l_uu = problem.control_weights + pen_hu

        q_x = l_x + A.T @ v_x
        q_u = l_u + B.T @ v_x
        q_xx = np.diag(l_xx) + A.T @ v_xx @ A
        q_ux = B.T @ v_xx @ A
        q_uu = np.diag(l_uu) + B.T @ v_xx @ B + reg * np.eye(n_u)

        try:
            chol = np.linalg.cholesky(q_uu)
        except np.linalg.LinAlgError:
            return None
        rhs = np.concatenate([q_u[:, None], q_ux], axis=1)
        solved = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        k = -solved[:, 0]
        K = -solved[:, 1:]
        k_seq[t] = k
        K_seq[t] = K

        v_x = q_x + K.T @ q_uu @ k + K.T @ q_u + q_ux.T @ k
        v_xx = q_xx + K.T @ q_uu @ K + K.T @ q_ux + q_ux.T @ K
        v_xx = 0.5 * (v_xx + v_xx.T)
    return k_seq, K_seq


def goal_states_from(
    initial_states: list[BodyState], positions: dict[int, np.ndarray]
) -> list[BodyState]:
    """Goal state list: initial poses with selected positions replaced and
    velocities zeroed."""
    out = []
    for i, s in enumerate(initial_states):
        position = positions.get(i, s.pose.translation)
        out.append(BodyState.at_rest(position, s.pose.quaternion.copy()))
    return out


def save_cost_history(result: IlqrResult, path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write("outer,iteration,cost,accepted,regularization,max_violation\n")
        for rec in result.history:
            fh.write(
                f"{rec.outer},{rec.iteration},{rec.cost:.17g},{int(rec.accepted)},"
                f"{rec.regularization:.17g},{rec.max_violation:.17g}\n"
            )
