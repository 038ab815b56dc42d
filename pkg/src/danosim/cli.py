"""Command-line interface.

Subcommands: build-dano, mass-props, simulate, sysid, trajopt, gradcheck.
Every run writes its fully resolved configuration next to its outputs and
embeds it as comment lines in the delimited files; re-running a command
with the same inputs produces byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from danosim import __version__
from danosim.contact import TABLE_RANGES
from danosim.dano import save_dano
from danosim.diff import (
    QuadraticStateLoss,
    loss_gradient_fd,
    make_param_vector,
    rollout_gradient,
)
from danosim.dynamics import DanoBody, save_controls, save_trajectory
from danosim.errors import DanosimError, DivergenceError, DomainError, ParseError
from danosim.scenefile import (
    build_controls,
    build_sysid_problem,
    build_trajopt_problem,
    parse_scene,
)
from danosim.sysid import expand_weights, gauss_newton_fit, save_loss_history
from danosim.trajopt import ilqr_solve, save_cost_history


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="danosim",
        description="Rigid-body simulation of volumetric density-field objects.",
    )
    parser.add_argument("--version", action="version", version=f"danosim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scene", required=True, help="scene configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scene seed")
        p.add_argument("--dt", type=float, default=None, help="override the time step")
        p.add_argument("--horizon", type=int, default=None, help="override the horizon")
        p.add_argument(
            "--set",
            dest="sets",
            action="append",
            default=[],
            metavar="NAME=VALUE",
            help="override a physical parameter, e.g. soap:ground.sliding_friction=0.61",
        )
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")

    common(sub.add_parser("build-dano", help="preprocess density fields into model files"))
    common(sub.add_parser("mass-props", help="report mass, center of mass, and inertia"))
    common(sub.add_parser("simulate", help="roll the scene forward and write the trajectory"))
    common(sub.add_parser("sysid", help="fit dynamics parameters to observed trajectories"))
    common(sub.add_parser("trajopt", help="optimize controls for the configured task"))
    gc = sub.add_parser("gradcheck", help="verify rollout gradients against finite differences")
    common(gc)
    gc.add_argument("--tolerance", type=float, default=None, help="override the error tolerance")
    return parser


def _prepare(args):
    parsed = parse_scene(args.scene, dt=args.dt, horizon=args.horizon, seed=args.seed, sets=args.sets)
    for warning in parsed.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = parsed.echo_yaml()
    (out_dir / "resolved_config.yaml").write_text(echo)
    return parsed, out_dir, "resolved configuration:\n" + echo


def _cmd_build_dano(args) -> int:
    parsed, out_dir, _ = _prepare(args)
    danos = [b for b in parsed.scene.bodies if isinstance(b, DanoBody)]
    if not danos:
        raise ParseError("scene has no density-field bodies to build")
    for body in danos:
        path = out_dir / f"{body.name}.dano.txt"
        save_dano(body.model, path)
        print(
            f"{body.name}: {body.model.n_points} surface points, "
            f"mass {body.model.mass:.6g} kg -> {path}"
        )
    return 0


def _cmd_mass_props(args) -> int:
    parsed, out_dir, echo = _prepare(args)
    danos = [b for b in parsed.scene.bodies if isinstance(b, DanoBody)]
    if not danos:
        raise ParseError("scene has no density-field bodies")
    path = out_dir / "mass_properties.csv"
    with open(path, "w", newline="") as fh:
        for line in echo.splitlines():
            fh.write(f"# {line}\n")
        fh.write(
            "body,mass,com_x,com_y,com_z,"
            + ",".join(f"J_{i}{j}" for i in "xyz" for j in "xyz")
            + ",J_com_eig_1,J_com_eig_2,J_com_eig_3\n"
        )
        for body in danos:
            m = body.model
            eigs = np.sort(np.linalg.eigvalsh(body.inertia_com))
            row = [body.name, f"{m.mass:.17g}"]
            row += [f"{v:.17g}" for v in m.com]
            row += [f"{v:.17g}" for v in m.inertia.reshape(-1)]
            row += [f"{v:.17g}" for v in eigs]
            fh.write(",".join(row) + "\n")
            print(
                f"{body.name}: mass {m.mass:.6g} kg, com [{m.com[0]:.4g} {m.com[1]:.4g} "
                f"{m.com[2]:.4g}] m, principal inertia {eigs[0]:.6g} {eigs[1]:.6g} {eigs[2]:.6g}"
            )
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    parsed, out_dir, echo = _prepare(args)
    from danosim.dynamics import simulate

    n_steps = parsed.scene.horizon
    controls = build_controls(parsed, parsed.resolved["scene"]["controls"], n_steps)
    traj = simulate(parsed.scene, parsed.initial_states, controls, n_steps)
    traj_path = out_dir / "trajectory.csv"
    save_trajectory(traj, traj_path, echo)
    print(f"simulated {n_steps} steps -> {traj_path}")
    if parsed.scene.actuated_bodies:
        controls_path = out_dir / "controls.csv"
        save_controls(parsed.scene, controls, controls_path, echo)
        print(f"controls -> {controls_path}")
    if not args.no_plot:
        from danosim import report

        fig_path = out_dir / "trajectory.png"
        report.save_trajectory_figure(traj, fig_path)
        print(f"figure -> {fig_path}")
    return 0


def _cmd_sysid(args) -> int:
    parsed, out_dir, echo = _prepare(args)
    problem = build_sysid_problem(parsed)
    fit = gauss_newton_fit(problem)
    result_path = out_dir / "fitted_parameters.csv"
    with open(result_path, "w", newline="") as fh:
        for line in echo.splitlines():
            fh.write(f"# {line}\n")
        fh.write("name,value,initial,lower,upper\n")
        for entry, value, init in zip(problem.params.entries, fit.values, problem.params.values):
            fh.write(f"{entry.name},{value:.17g},{init:.17g},{entry.lower:.17g},{entry.upper:.17g}\n")
    history_path = out_dir / "loss_history.csv"
    save_loss_history(fit, history_path, echo)
    print(f"status: {fit.status} after {fit.iterations} iterations ({fit.elapsed:.2f} s)")
    for name, value in zip(fit.names, fit.values):
        print(f"  {name} = {value:.8g}")
    print(f"final loss {fit.final_loss:.6g} -> {result_path}, {history_path}")
    if not args.no_plot:
        from danosim import report

        fig_path = out_dir / "loss_history.png"
        report.save_fit_history_figure(fit, fig_path)
        print(f"figure -> {fig_path}")
    return 0


def _cmd_trajopt(args) -> int:
    parsed, out_dir, echo = _prepare(args)
    problem, initial_controls = build_trajopt_problem(parsed)
    result = ilqr_solve(problem, initial_controls)
    scene = parsed.scene
    from danosim.dynamics import StaticBody, Trajectory

    traj = Trajectory(
        np.arange(problem.horizon) * scene.dt,
        [b.name for b in scene.dynamic_bodies],
        result.states,
        [b for b in scene.bodies if isinstance(b, StaticBody)],
    )
    states_path = out_dir / "states.csv"
    save_trajectory(traj, states_path, echo)
    controls_path = out_dir / "controls.csv"
    save_controls(scene, result.controls.reshape(problem.horizon - 1, -1, 6), controls_path, echo)
    history_path = out_dir / "cost_history.csv"
    save_cost_history(result, history_path, echo)
    print(
        f"status: {result.status} after {result.iterations} iterations "
        f"({result.elapsed:.2f} s), final cost {result.final_cost:.6g}"
    )
    print(f"wrote {states_path}, {controls_path}, {history_path}")
    if not args.no_plot:
        from danosim import report

        report.save_cost_history_figure(result, out_dir / "cost_history.png")
        report.save_trajectory_figure(traj, out_dir / "states.png")
        print(f"figures -> {out_dir / 'cost_history.png'}, {out_dir / 'states.png'}")
    return 0


def _default_gradcheck_parameters(scene) -> list[dict]:
    """All contact coefficients of the first pair plus the first mass scale."""
    specs = []
    for body in scene.bodies:
        if isinstance(body, DanoBody):
            alpha = body.model.alpha
            specs.append(
                {"name": f"{body.name}.alpha", "init": alpha, "min": 0.5 * alpha, "max": 2.0 * alpha}
            )
            break
    if scene.contacts:
        pair = scene.contacts[0]
        for field, (lo, hi) in TABLE_RANGES.items():
            value = getattr(pair.params, field)
            specs.append(
                {
                    "name": f"{pair.body_a}:{pair.body_b}.{field}",
                    "init": value,
                    "min": 0.0,
                    "max": max(2.0 * value, hi),
                }
            )
    if not specs:
        raise ParseError("gradcheck: scene has no parameters to check")
    return specs


def _cmd_gradcheck(args) -> int:
    parsed, out_dir, echo = _prepare(args)
    scene = parsed.scene
    section = parsed.gradcheck or {
        "horizon": min(50, scene.horizon),
        "tolerance": 1e-3,
        "fd_step": 1e-7,
        "jacobian_step": 1e-8,
        "loss_weights": {"position": 1.0, "rotation": 0.1, "velocity": 0.1, "angular_velocity": 0.1},
        "controls": {"type": "none"},
        "parameters": None,
    }
    tolerance = args.tolerance if args.tolerance is not None else section["tolerance"]
    n_steps = section["horizon"]
    specs = section["parameters"] or _default_gradcheck_parameters(scene)
    params = make_param_vector(scene, specs)
    controls = build_controls(parsed, section["controls"], n_steps)
    weights = expand_weights(scene, section["loss_weights"])
    # quadratic tracking of the initial configuration over the whole rollout
    references = {t: parsed.initial_states for t in range(1, n_steps + 1)}
    loss = QuadraticStateLoss(references, weights)

    _, grad_u, grad_theta = rollout_gradient(
        scene, parsed.initial_states, controls, loss, params, h_rel=section["jacobian_step"]
    )
    flat_u = controls.reshape(n_steps, -1)
    if flat_u.shape[1]:
        probe_steps = sorted({0, n_steps // 2, n_steps - 2})
        control_columns = [(t, j) for t in probe_steps for j in range(flat_u.shape[1])]
    else:
        control_columns = []
    fd_u, fd_theta = loss_gradient_fd(
        scene, parsed.initial_states, controls, loss, params,
        h=section["fd_step"], control_columns=control_columns,
    )

    names, adjoint, reference = list(params.names), list(grad_theta), list(fd_theta)
    for (t, j) in control_columns:
        names.append(f"u[t={t},{j}]")
        adjoint.append(grad_u.reshape(n_steps, -1)[t, j])
        reference.append(fd_u[(t, j)])
    adjoint = np.asarray(adjoint)
    reference = np.asarray(reference)
    scale = max(float(np.max(np.abs(reference), initial=0.0)), 1e-12)
    errors = np.abs(adjoint - reference) / np.maximum(np.abs(reference), 1e-6 * scale)
    errors[(np.abs(adjoint) < 1e-12 * scale) & (np.abs(reference) < 1e-12 * scale)] = 0.0

    table_path = out_dir / "gradcheck.csv"
    with open(table_path, "w", newline="") as fh:
        for line in echo.splitlines():
            fh.write(f"# {line}\n")
        fh.write("column,adjoint,finite_difference,relative_error\n")
        for name, a, b, e in zip(names, adjoint, reference, errors):
            fh.write(f"{name},{a:.17g},{b:.17g},{e:.17g}\n")
    width = max(len(n) for n in names)
    print(f"{'column':<{width}}  {'adjoint':>14}  {'finite diff':>14}  {'rel error':>10}")
    for name, a, b, e in zip(names, adjoint, reference, errors):
        flag = "" if e < tolerance else "  <-- FAIL"
        print(f"{name:<{width}}  {a:>14.6g}  {b:>14.6g}  {e:>10.3g}{flag}")
    worst = float(errors.max(initial=0.0))
    print(f"worst relative error {worst:.3g} (tolerance {tolerance:g}) -> {table_path}")
    if not args.no_plot:
        from danosim import report

        report.save_gradcheck_figure(names, errors, tolerance, out_dir / "gradcheck.png")
    return 0 if worst < tolerance else 1


_COMMANDS = {
    "build-dano": _cmd_build_dano,
    "mass-props": _cmd_mass_props,
    "simulate": _cmd_simulate,
    "sysid": _cmd_sysid,
    "trajopt": _cmd_trajopt,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"simulate error: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DanosimError as exc:
        print(f"optimize error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
