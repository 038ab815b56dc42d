"""Figure rendering for the command-line report paths.

Each subcommand that writes delimited output can render a companion PNG
next to it. Figures are file artifacts like everything else: the Agg
backend is forced and the PNG metadata is pinned so repeated runs produce
identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# pinned so PNG bytes do not change across matplotlib versions
PNG_METADATA = {"Software": "danosim"}

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 4.5),
        "figure.dpi": 130,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def _save(fig, path):
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)


def save_trajectory_figure(traj, path) -> None:
    """Body positions and speeds over time."""
    fig, (ax_pos, ax_speed) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 6.0))
    times = traj.times
    for name in traj.body_names:
        states = traj.body_states(name)
        positions = np.array([s.pose.translation for s in states])
        speeds = np.array([np.linalg.norm(s.linear_velocity) for s in states])
        for axis, label in enumerate("xyz"):
            ax_pos.plot(times, positions[:, axis], label=f"{name}.{label}", lw=1.2)
        ax_speed.plot(times, speeds, label=name, lw=1.2)
    ax_pos.set_ylabel("position [m]")
    ax_pos.legend(fontsize=8, ncol=3)
    ax_speed.set_ylabel("speed [m/s]")
    ax_speed.set_xlabel("time [s]")
    ax_speed.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_fit_history_figure(report, path) -> None:
    """Loss over Gauss-Newton iterations; accepted steps highlighted."""
    fig, ax = plt.subplots()
    accepted = [(r.iteration, r.loss) for r in report.history if r.accepted]
    rejected = [(r.iteration, r.loss) for r in report.history if not r.accepted and np.isfinite(r.loss)]
    if accepted:
        it, loss = zip(*accepted)
        ax.semilogy(it, loss, "o-", label="accepted", color="tab:blue")
    if rejected:
        it, loss = zip(*rejected)
        ax.semilogy(it, loss, "x", label="rejected", color="tab:red", alpha=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(f"fit: {report.status} in {report.iterations} iterations")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_cost_history_figure(result, path) -> None:
    """Cost over iLQR iterations; accepted steps highlighted."""
    fig, ax = plt.subplots()
    steps = list(range(len(result.history)))
    accepted = [(i, r.cost) for i, r in zip(steps, result.history) if r.accepted]
    rejected = [(i, r.cost) for i, r in zip(steps, result.history) if not r.accepted]
    if accepted:
        it, cost = zip(*accepted)
        ax.semilogy(it, cost, "o-", label="accepted", color="tab:blue")
    if rejected:
        it, cost = zip(*rejected)
        ax.semilogy(it, cost, "x", label="rejected", color="tab:red", alpha=0.6)
    ax.set_xlabel("solver step")
    ax.set_ylabel("cost")
    ax.set_title(f"trajectory optimization: {result.status}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_gradcheck_figure(names, errors, tolerance, path) -> None:
    """Per-column relative gradient error as a bar chart."""
    fig, ax = plt.subplots(figsize=(7.0, max(3.0, 0.3 * len(names))))
    y = np.arange(len(names))
    floor = 1e-18
    ax.barh(y, np.maximum(np.asarray(errors), floor), color="tab:blue")
    ax.axvline(tolerance, color="tab:red", ls="--", label=f"tolerance {tolerance:g}")
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("relative error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
