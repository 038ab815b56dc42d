"""Parameter recovery from observed trajectories by bounded Gauss-Newton.

The fit minimizes the weighted tangent-space distance between observed and
simulated states over one or more rollouts that share a scene template.
Parameters enter through the diff module's ParamVector (mass scale and
contact coefficients), the residual Jacobian is finite-differenced over
the parameters only (single shooting), and steps are clamped to the bounds
with Levenberg damping adapting on acceptance.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from danosim.diff import ParamVector, state_tangent_difference
from danosim.dynamics import BodyState, SceneConfig, simulate
from danosim.errors import DanosimError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = {"position": 1.0, "rotation": 0.1, "velocity": 0.0, "angular_velocity": 0.0}


def expand_weights(scene: SceneConfig, weights: dict[str, float] | None = None) -> np.ndarray:
    """Per-tangent-coordinate diagonal of W from per-block scalars.

    Defaults weight positions 1, rotations 0.1, and velocities 0 (pose-only
    observations).
    """
    w = dict(DEFAULT_WEIGHTS)
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise DomainError(f"unknown weight keys {sorted(unknown)}")
        w.update(weights)
    if any(v < 0.0 for v in w.values()):
        raise DomainError("weights must be >= 0")
    block = np.concatenate(
        [
            np.full(3, w["position"]),
            np.full(3, w["rotation"]),
            np.full(3, w["velocity"]),
            np.full(3, w["angular_velocity"]),
        ]
    )
    return np.tile(block, len(scene.dynamic_bodies))


@dataclass
class ObservedTrajectory:
    """Ground-truth states (and the controls that produced them)."""

    states: list[list[BodyState]]
    controls: np.ndarray | None = None

    def __post_init__(self):
        if len(self.states) < 2:
            raise DomainError("observed trajectory needs at least 2 frames")
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float)
            if len(self.controls) != len(self.states) - 1:
                raise DomainError(
                    f"{len(self.states)} frames need {len(self.states) - 1} control frames, "
                    f"got {len(self.controls)}"
                )

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


@dataclass
class GaussNewtonSettings:
    max_iterations: int = 30
    initial_damping: float = 1e-4
    min_damping: float = 1e-12
    max_damping: float = 1e8
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    fd_step: float = 1e-3  # coarse on purpose: averages over sample-membership steps


@dataclass
class SysIdProblem:
    """Trajectory-matching problem over a bounded parameter vector."""

    scene: SceneConfig
    observations: list[ObservedTrajectory]
    params: ParamVector
    weights: np.ndarray | None = None
    settings: GaussNewtonSettings = dataclass_field(default_factory=GaussNewtonSettings)

    def __post_init__(self):
        if not self.observations:
            raise DomainError("need at least one observed trajectory")
        if self.weights is None:
            self.weights = expand_weights(self.scene)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0.0):
            raise DomainError("weight diagonal must be >= 0")
        self._sqrt_w = np.sqrt(self.weights)


def trajectory_residuals(problem: SysIdProblem, values: np.ndarray) -> np.ndarray:
    """Stacked weighted residuals W^(1/2) (observed (-) simulated).

    Each observation is re-simulated from its own first frame under the
    given parameter values; frames 2..T contribute.
    """
    values = problem.params.clamp(np.asarray(values, dtype=float))
    scene = problem.params.apply(problem.scene, values)
    blocks = []
    for obs in problem.observations:
        traj = simulate(scene, obs.states[0], obs.controls, obs.n_steps)
        for t in range(1, obs.n_steps + 1):
            d = state_tangent_difference(obs.states[t], traj.states[t])
            blocks.append(problem._sqrt_w * d)
    return np.concatenate(blocks)


def residual_jacobian(problem: SysIdProblem, values: np.ndarray) -> np.ndarray:
    """Finite-difference Jacobian of the stacked residual over parameters.

    Central differences with per-parameter relative step; one-sided at the
    bounds.
    """
    values = np.asarray(values, dtype=float)
    h_rel = problem.settings.fd_step
    lower, upper = problem.params.lower, problem.params.upper
    cols = []
    for j in range(len(values)):
        h = h_rel * max(1.0, abs(values[j]))
        v_plus, v_minus = values.copy(), values.copy()
        v_plus[j] = min(values[j] + h, upper[j])
        v_minus[j] = max(values[j] - h, lower[j])
        span = v_plus[j] - v_minus[j]
        if span <= 0.0:
            raise DomainError(f"parameter {problem.params.names[j]} has no feasible span")
        cols.append(
            (trajectory_residuals(problem, v_plus) - trajectory_residuals(problem, v_minus)) / span
        )
    return np.stack(cols, axis=1)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    damping: float
    accepted: bool
    values: tuple


@dataclass
class FitReport:
    values: np.ndarray
    names: list[str]
    history: list[IterationRecord]
    status: str
    iterations: int
    final_loss: float
    elapsed: float

    def accepted_losses(self) -> list[float]:
        return [r.loss for r in self.history if r.accepted]


def gauss_newton_fit(problem: SysIdProblem, initial: np.ndarray | None = None) -> FitReport:
    """Levenberg-damped Gauss-Newton with bound clamping.

    Accepted steps strictly decrease the loss; rejected trials raise the
    damping tenfold and retry. Stops on a small gradient, a small step, the
    iteration cap, or when no step is acceptable below the damping cap
    (status "stalled").
    """
    t_start = time.perf_counter()
    settings = problem.settings
    theta = problem.params.clamp(
        problem.params.values.copy() if initial is None else np.asarray(initial, dtype=float)
    )

    def loss_of(residual):
        return float(residual @ residual)

    try:
        r = trajectory_residuals(problem, theta)
    except DanosimError as exc:
        raise DomainError(f"residual evaluation failed at the initial point: {exc}") from exc
    loss = loss_of(r)
    history = [IterationRecord(0, loss, settings.initial_damping, True, tuple(theta))]
    damping = settings.initial_damping
    status = "max_iterations"
    iteration = 0

    for iteration in range(1, settings.max_iterations + 1):
        J = residual_jacobian(problem, theta)
        gradient = J.T @ r
        if np.linalg.norm(gradient, ord=np.inf) < settings.gradient_tolerance:
            status = "converged"
            iteration -= 1
            break
        jtj = J.T @ J
        accepted = False
        while damping <= settings.max_damping:
            try:
                delta = np.linalg.solve(jtj + damping * np.eye(len(theta)), -gradient)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            trial = problem.params.clamp(theta + delta)
            try:
                r_trial = trajectory_residuals(problem, trial)
                trial_loss = loss_of(r_trial)
            except DanosimError:
                trial_loss = np.inf
            if np.isfinite(trial_loss) and trial_loss < loss:
                step_norm = float(np.linalg.norm(trial - theta))
                theta, r, loss = trial, r_trial, trial_loss
                damping = max(damping / 10.0, settings.min_damping)
                history.append(IterationRecord(iteration, loss, damping, True, tuple(theta)))
                accepted = True
                if step_norm < settings.step_tolerance:
                    status = "converged"
                break
            history.append(IterationRecord(iteration, trial_loss, damping, False, tuple(trial)))
            damping *= 10.0
        if not accepted:
            status = "stalled"
            logger.warning("gauss-newton stalled at damping %.3g", damping)
            break
        if status == "converged":
            break

    return FitReport(
        values=theta,
        names=problem.params.names,
        history=history,
        status=status,
        iterations=iteration,
        final_loss=loss,
        elapsed=time.perf_counter() - t_start,
    )


def save_loss_history(report: FitReport, path, header_comment: str = "") -> None:
    """Comma-separated fit history suitable for plotting."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write("iteration,loss,damping,accepted," + ",".join(report.names) + "\n")
        for rec in report.history:
            vals = ",".join(f"{v:.17g}" for v in rec.values)
            fh.write(
                f"{rec.iteration},{rec.loss:.17g},{rec.damping:.17g},{int(rec.accepted)},{vals}\n"
            )
