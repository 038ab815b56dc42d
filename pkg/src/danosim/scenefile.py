"""Scene and problem configuration files.

One YAML document configures a scene (bodies, contact pairs, stepping) and
optionally the system-identification, trajectory-optimization, and
gradient-check problems built on it. Parsing is strict: unknown keys are
hard errors, silent typos in physical parameters being the dominant user
mistake. Contact parameters outside their nominal ranges produce warnings,
not errors.

parse_scene returns the fully resolved configuration; writing it back out
and re-parsing yields an identical resolution, which is the reproducibility
contract every artifact embeds.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from danosim.contact import ContactParams, PARAM_FIELDS
from danosim.dano import DanoBuildConfig, build_dano, load_dano
from danosim.diff import make_param_vector
from danosim.dynamics import (
    BodyState,
    ContactPair,
    DanoBody,
    SceneConfig,
    SphereBody,
    StaticBody,
    load_controls,
    load_trajectory,
)
from danosim.errors import DomainError, ParseError
from danosim.fields import (
    HalfSpace,
    Pose,
    Sphere,
    SphereIndicatorField,
    box_field,
    load_grid_field,
)
from danosim.sysid import (
    GaussNewtonSettings,
    ObservedTrajectory,
    SysIdProblem,
    expand_weights,
)
from danosim.trajopt import (
    IlqrSettings,
    PenaltySettings,
    TrajOptProblem,
    goal_states_from,
)


def _check_keys(mapping: dict, allowed, context: str) -> None:
    if not isinstance(mapping, dict):
        raise ParseError(f"{context}: expected a mapping, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ParseError(f"{context}: unknown keys {unknown}")


def _as_float(value, context: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ParseError(f"{context}: malformed value {value!r}") from None


def _as_int(value, context: str) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ParseError(f"{context}: malformed value {value!r}") from None
    if out != float(value):
        raise ParseError(f"{context}: expected an integer, got {value!r}")
    return out


def _as_vec(value, n: int, context: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ParseError(f"{context}: expected {n} numbers")
    return [_as_float(v, context) for v in value]


def _as_bool(value, context: str) -> bool:
    if not isinstance(value, bool):
        raise ParseError(f"{context}: expected true/false")
    return value


_INITIAL_KEYS = ("position", "quaternion", "linear_velocity", "angular_velocity")


def _resolve_initial(raw: dict | None, context: str) -> dict:
    raw = raw or {}
    _check_keys(raw, _INITIAL_KEYS, context)
    return {
        "position": _as_vec(raw.get("position", [0.0, 0.0, 0.0]), 3, f"{context}.position"),
        "quaternion": _as_vec(
            raw.get("quaternion", [1.0, 0.0, 0.0, 0.0]), 4, f"{context}.quaternion"
        ),
        "linear_velocity": _as_vec(
            raw.get("linear_velocity", [0.0, 0.0, 0.0]), 3, f"{context}.linear_velocity"
        ),
        "angular_velocity": _as_vec(
            raw.get("angular_velocity", [0.0, 0.0, 0.0]), 3, f"{context}.angular_velocity"
        ),
    }


def _resolve_field(raw: dict, base_dir: Path, context: str) -> dict:
    if not isinstance(raw, dict) or "type" not in raw:
        raise ParseError(f"{context}: field needs a 'type'")
    kind = raw["type"]
    if kind == "grid":
        _check_keys(raw, ("type", "path"), context)
        if "path" not in raw:
            raise ParseError(f"{context}: grid field needs 'path'")
        path = Path(raw["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ParseError(f"{context}: field file not found: {path}")
        return {"type": "grid", "path": str(path)}
    if kind == "sphere":
        _check_keys(raw, ("type", "center", "radius", "margin"), context)
        return {
            "type": "sphere",
            "center": _as_vec(raw.get("center", [0.0, 0.0, 0.0]), 3, f"{context}.center"),
            "radius": _as_float(raw.get("radius", 0.1), f"{context}.radius"),
            "margin": _as_float(raw.get("margin", 0.0), f"{context}.margin"),
        }
    if kind == "box":
        _check_keys(raw, ("type", "center", "half_extents"), context)
        return {
            "type": "box",
            "center": _as_vec(raw.get("center", [0.0, 0.0, 0.0]), 3, f"{context}.center"),
            "half_extents": _as_vec(raw["half_extents"], 3, f"{context}.half_extents")
            if "half_extents" in raw
            else [0.1, 0.1, 0.1],
        }
    raise ParseError(f"{context}: unknown field type '{kind}'")


_BUILD_KEYS = ("samples", "seed", "band", "band_absolute", "gradient_step", "alpha", "mass_samples")


def _resolve_build(raw: dict | None, default_seed: int, context: str) -> dict:
    raw = raw or {}
    _check_keys(raw, _BUILD_KEYS, context)
    gradient_step = raw.get("gradient_step")
    mass_samples = raw.get("mass_samples")
    return {
        "samples": _as_int(raw.get("samples", 5000), f"{context}.samples"),
        "seed": _as_int(raw.get("seed", default_seed), f"{context}.seed"),
        "band": _as_vec(raw.get("band", [0.05, 0.95]), 2, f"{context}.band"),
        "band_absolute": _as_bool(raw.get("band_absolute", False), f"{context}.band_absolute"),
        "gradient_step": None
        if gradient_step is None
        else _as_float(gradient_step, f"{context}.gradient_step"),
        "alpha": _as_float(raw.get("alpha", 1.0), f"{context}.alpha"),
        "mass_samples": None
        if mass_samples is None
        else _as_int(mass_samples, f"{context}.mass_samples"),
    }


def _resolve_body(raw: dict, index: int, scene_seed: int, base_dir: Path) -> dict:
    context = f"scene.bodies[{index}]"
    if "name" not in raw or "kind" not in raw:
        raise ParseError(f"{context}: body needs 'name' and 'kind'")
    kind = raw["kind"]
    name = str(raw["name"])
    if kind == "dano":
        _check_keys(raw, ("name", "kind", "actuated", "field", "build", "model_file", "initial"), context)
        if "field" not in raw:
            raise ParseError(f"{context}: dano body needs a 'field'")
        model_file = raw.get("model_file")
        if model_file is not None:
            path = Path(model_file)
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ParseError(f"{context}: model file not found: {path}")
            model_file = str(path)
        return {
            "name": name,
            "kind": "dano",
            "actuated": _as_bool(raw.get("actuated", False), f"{context}.actuated"),
            "field": _resolve_field(raw["field"], base_dir, f"{context}.field"),
            "build": _resolve_build(raw.get("build"), scene_seed + index, f"{context}.build"),
            "model_file": model_file,
            "initial": _resolve_initial(raw.get("initial"), f"{context}.initial"),
        }
    if kind == "sphere":
        _check_keys(raw, ("name", "kind", "actuated", "radius", "mass", "initial"), context)
        return {
            "name": name,
            "kind": "sphere",
            "actuated": _as_bool(raw.get("actuated", False), f"{context}.actuated"),
            "radius": _as_float(raw.get("radius", 0.05), f"{context}.radius"),
            "mass": _as_float(raw.get("mass", 1.0), f"{context}.mass"),
            "initial": _resolve_initial(raw.get("initial"), f"{context}.initial"),
        }
    if kind == "static_halfspace":
        _check_keys(raw, ("name", "kind", "normal", "offset"), context)
        return {
            "name": name,
            "kind": "static_halfspace",
            "normal": _as_vec(raw.get("normal", [0.0, 0.0, 1.0]), 3, f"{context}.normal"),
            "offset": _as_float(raw.get("offset", 0.0), f"{context}.offset"),
        }
    if kind == "static_sphere":
        _check_keys(raw, ("name", "kind", "center", "radius"), context)
        return {
            "name": name,
            "kind": "static_sphere",
            "center": _as_vec(raw.get("center", [0.0, 0.0, 0.0]), 3, f"{context}.center"),
            "radius": _as_float(raw.get("radius", 0.1), f"{context}.radius"),
        }
    raise ParseError(f"{context}: unknown body kind '{kind}'")


def _resolve_contact(raw: dict, index: int, warnings: list[str]) -> dict:
    context = f"scene.contacts[{index}]"
    _check_keys(raw, ("pair",) + PARAM_FIELDS, context)
    if "pair" not in raw:
        raise ParseError(f"{context}: contact needs 'pair'")
    pair = raw["pair"]
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise ParseError(f"{context}: pair must list two body names")
    resolved = {"pair": [str(pair[0]), str(pair[1])]}
    kwargs = {}
    for field in PARAM_FIELDS:
        if field in raw:
            kwargs[field] = _as_float(raw[field], f"{context}.{field}")
    params = ContactParams(**kwargs)
    for field in PARAM_FIELDS:
        resolved[field] = getattr(params, field)
    for message in params.out_of_range():
        warnings.append(f"{context}: {message}")
    return resolved


_CONTROLS_KEYS = {
    "none": ("type",),
    "constant": ("type", "body", "wrench", "gravity_compensation"),
    "push": ("type", "body", "force", "start", "duration", "gravity_compensation"),
    "file": ("type", "path"),
}


def _resolve_controls(raw: dict | None, base_dir: Path, context: str) -> dict:
    if raw is None:
        return {"type": "none"}
    if not isinstance(raw, dict) or "type" not in raw:
        raise ParseError(f"{context}: controls need a 'type'")
    kind = raw["type"]
    if kind not in _CONTROLS_KEYS:
        raise ParseError(f"{context}: unknown controls type '{kind}'")
    _check_keys(raw, _CONTROLS_KEYS[kind], context)
    if kind == "none":
        return {"type": "none"}
    if kind == "constant":
        return {
            "type": "constant",
            "body": str(raw.get("body", "")),
            "wrench": _as_vec(raw.get("wrench", [0.0] * 6), 6, f"{context}.wrench"),
            "gravity_compensation": _as_bool(
                raw.get("gravity_compensation", False), f"{context}.gravity_compensation"
            ),
        }
    if kind == "push":
        return {
            "type": "push",
            "body": str(raw.get("body", "")),
            "force": _as_vec(raw.get("force", [0.0] * 3), 3, f"{context}.force"),
            "start": _as_float(raw.get("start", 0.0), f"{context}.start"),
            "duration": _as_float(raw.get("duration", 0.1), f"{context}.duration"),
            "gravity_compensation": _as_bool(
                raw.get("gravity_compensation", True), f"{context}.gravity_compensation"
            ),
        }
    path = Path(raw.get("path", ""))
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ParseError(f"{context}: controls file not found: {path}")
    return {"type": "file", "path": str(path)}


def _resolve_parameters(raw, context: str) -> list[dict]:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{context}: needs a non-empty list of parameters")
    out = []
    for i, spec in enumerate(raw):
        ctx = f"{context}[{i}]"
        _check_keys(spec, ("name", "init", "min", "max"), ctx)
        for key in ("name", "init", "min", "max"):
            if key not in spec:
                raise ParseError(f"{ctx}: missing '{key}'")
        out.append(
            {
                "name": str(spec["name"]),
                "init": _as_float(spec["init"], f"{ctx}.init"),
                "min": _as_float(spec["min"], f"{ctx}.min"),
                "max": _as_float(spec["max"], f"{ctx}.max"),
            }
        )
    return out


_WEIGHT_KEYS = ("position", "rotation", "velocity", "angular_velocity")


def _resolve_weights(raw: dict | None, defaults: dict, context: str) -> dict:
    raw = raw or {}
    _check_keys(raw, _WEIGHT_KEYS, context)
    return {k: _as_float(raw.get(k, defaults[k]), f"{context}.{k}") for k in _WEIGHT_KEYS}


def _resolve_sysid(raw: dict | None, base_dir: Path) -> dict | None:
    if raw is None:
        return None
    context = "sysid"
    _check_keys(raw, ("trajectories", "parameters", "weights", "gauss_newton"), context)
    if "trajectories" not in raw or not isinstance(raw["trajectories"], list) or not raw["trajectories"]:
        raise ParseError(f"{context}: needs a non-empty 'trajectories' list")
    trajectories = []
    for i, entry in enumerate(raw["trajectories"]):
        ctx = f"{context}.trajectories[{i}]"
        _check_keys(entry, ("states", "controls"), ctx)
        if "states" not in entry:
            raise ParseError(f"{ctx}: missing 'states'")
        spath = Path(entry["states"])
        if not spath.is_absolute():
            spath = base_dir / spath
        if not spath.exists():
            raise ParseError(f"{ctx}: trajectory file not found: {spath}")
        cpath = entry.get("controls")
        if cpath is not None:
            cpath = Path(cpath)
            if not cpath.is_absolute():
                cpath = base_dir / cpath
            if not cpath.exists():
                raise ParseError(f"{ctx}: controls file not found: {cpath}")
            cpath = str(cpath)
        trajectories.append({"states": str(spath), "controls": cpath})
    gn_raw = raw.get("gauss_newton") or {}
    gn_defaults = GaussNewtonSettings()
    gn_keys = (
        "max_iterations", "initial_damping", "min_damping", "max_damping",
        "gradient_tolerance", "step_tolerance", "fd_step",
    )
    _check_keys(gn_raw, gn_keys, f"{context}.gauss_newton")
    gauss_newton = {
        "max_iterations": _as_int(
            gn_raw.get("max_iterations", gn_defaults.max_iterations), "gauss_newton.max_iterations"
        ),
    }
    for key in gn_keys[1:]:
        gauss_newton[key] = _as_float(
            gn_raw.get(key, getattr(gn_defaults, key)), f"gauss_newton.{key}"
        )
    return {
        "trajectories": trajectories,
        "parameters": _resolve_parameters(raw.get("parameters"), f"{context}.parameters"),
        "weights": _resolve_weights(
            raw.get("weights"),
            {"position": 1.0, "rotation": 0.1, "velocity": 0.0, "angular_velocity": 0.0},
            f"{context}.weights",
        ),
        "gauss_newton": gauss_newton,
    }


def _resolve_trajopt(raw: dict | None, base_dir: Path) -> dict | None:
    if raw is None:
        return None
    context = "trajopt"
    _check_keys(
        raw,
        ("horizon", "goals", "stage", "control_bounds", "initial_controls", "ilqr", "penalty"),
        context,
    )
    if "goals" not in raw or not isinstance(raw["goals"], list) or not raw["goals"]:
        raise ParseError(f"{context}: needs a non-empty 'goals' list")
    goals = []
    for i, goal in enumerate(raw["goals"]):
        ctx = f"{context}.goals[{i}]"
        _check_keys(goal, ("body", "position", "weight", "velocity_weight"), ctx)
        if "body" not in goal or "position" not in goal:
            raise ParseError(f"{ctx}: goal needs 'body' and 'position'")
        goals.append(
            {
                "body": str(goal["body"]),
                "position": _as_vec(goal["position"], 3, f"{ctx}.position"),
                "weight": _as_float(goal.get("weight", 100.0), f"{ctx}.weight"),
                "velocity_weight": _as_float(
                    goal.get("velocity_weight", 0.0), f"{ctx}.velocity_weight"
                ),
            }
        )
    stage_raw = raw.get("stage") or {}
    _check_keys(stage_raw, ("control_weight", "torque_weight", "state_weight", "velocity_weight"), f"{context}.stage")
    control_weight = _as_float(stage_raw.get("control_weight", 1e-4), "stage.control_weight")
    stage = {
        "control_weight": control_weight,
        "torque_weight": _as_float(stage_raw.get("torque_weight", control_weight), "stage.torque_weight"),
        "state_weight": _as_float(stage_raw.get("state_weight", 0.0), "stage.state_weight"),
        "velocity_weight": _as_float(stage_raw.get("velocity_weight", 0.0), "stage.velocity_weight"),
    }
    bounds_raw = raw.get("control_bounds") or {}
    _check_keys(bounds_raw, ("force", "torque"), f"{context}.control_bounds")
    control_bounds = {
        "force": _as_float(bounds_raw.get("force", 100.0), "control_bounds.force"),
        "torque": _as_float(bounds_raw.get("torque", 10.0), "control_bounds.torque"),
    }
    ilqr_raw = raw.get("ilqr") or {}
    ilqr_defaults = IlqrSettings()
    ilqr_keys = (
        "max_iterations", "cost_tolerance", "regularization_init", "regularization_scale",
        "regularization_max", "line_search_steps", "jacobian_step",
    )
    _check_keys(ilqr_raw, ilqr_keys, f"{context}.ilqr")
    ilqr = {
        "max_iterations": _as_int(
            ilqr_raw.get("max_iterations", ilqr_defaults.max_iterations), "ilqr.max_iterations"
        ),
        "line_search_steps": _as_int(
            ilqr_raw.get("line_search_steps", ilqr_defaults.line_search_steps),
            "ilqr.line_search_steps",
        ),
    }
    for key in ("cost_tolerance", "regularization_init", "regularization_scale",
                "regularization_max", "jacobian_step"):
        ilqr[key] = _as_float(ilqr_raw.get(key, getattr(ilqr_defaults, key)), f"ilqr.{key}")
    penalty_raw = raw.get("penalty") or {}
    penalty_defaults = PenaltySettings()
    _check_keys(
        penalty_raw,
        ("initial_weight", "scale", "outer_iterations", "violation_tolerance"),
        f"{context}.penalty",
    )
    penalty = {
        "initial_weight": _as_float(
            penalty_raw.get("initial_weight", penalty_defaults.initial_weight),
            "penalty.initial_weight",
        ),
        "scale": _as_float(penalty_raw.get("scale", penalty_defaults.scale), "penalty.scale"),
        "outer_iterations": _as_int(
            penalty_raw.get("outer_iterations", penalty_defaults.outer_iterations),
            "penalty.outer_iterations",
        ),
        "violation_tolerance": _as_float(
            penalty_raw.get("violation_tolerance", penalty_defaults.violation_tolerance),
            "penalty.violation_tolerance",
        ),
    }
    return {
        "horizon": _as_int(raw.get("horizon", 100), f"{context}.horizon"),
        "goals": goals,
        "stage": stage,
        "control_bounds": control_bounds,
        "initial_controls": _resolve_controls(
            raw.get("initial_controls"), base_dir, f"{context}.initial_controls"
        ),
        "ilqr": ilqr,
        "penalty": penalty,
    }


def _resolve_gradcheck(raw: dict | None, base_dir: Path) -> dict | None:
    if raw is None:
        return None
    context = "gradcheck"
    _check_keys(
        raw,
        ("horizon", "parameters", "loss_weights", "tolerance", "fd_step", "jacobian_step", "controls"),
        context,
    )
    out = {
        "horizon": _as_int(raw.get("horizon", 50), f"{context}.horizon"),
        "tolerance": _as_float(raw.get("tolerance", 1e-3), f"{context}.tolerance"),
        "fd_step": _as_float(raw.get("fd_step", 1e-7), f"{context}.fd_step"),
        "jacobian_step": _as_float(raw.get("jacobian_step", 1e-8), f"{context}.jacobian_step"),
        "loss_weights": _resolve_weights(
            raw.get("loss_weights"),
            {"position": 1.0, "rotation": 0.1, "velocity": 0.1, "angular_velocity": 0.1},
            f"{context}.loss_weights",
        ),
        "controls": _resolve_controls(raw.get("controls"), base_dir, f"{context}.controls"),
    }
    if "parameters" in raw:
        out["parameters"] = _resolve_parameters(raw["parameters"], f"{context}.parameters")
    else:
        out["parameters"] = None
    return out


@dataclass
class ParsedScene:
    """Fully resolved configuration plus the constructed scene objects."""

    scene: SceneConfig
    initial_states: list[BodyState]
    resolved: dict
    warnings: list[str]
    base_dir: Path

    @property
    def sysid(self) -> dict | None:
        return self.resolved.get("sysid")

    @property
    def trajopt(self) -> dict | None:
        return self.resolved.get("trajopt")

    @property
    def gradcheck(self) -> dict | None:
        return self.resolved.get("gradcheck")

    def echo_yaml(self) -> str:
        return yaml.safe_dump(self.resolved, sort_keys=False)


def _build_field(resolved: dict):
    if resolved["type"] == "grid":
        return load_grid_field(resolved["path"])
    if resolved["type"] == "sphere":
        return SphereIndicatorField(resolved["center"], resolved["radius"], resolved["margin"])
    return box_field(resolved["center"], resolved["half_extents"])


def _build_body(resolved: dict):
    kind = resolved["kind"]
    if kind == "dano":
        field = _build_field(resolved["field"])
        if resolved["model_file"] is not None:
            model = load_dano(resolved["model_file"])
        else:
            b = resolved["build"]
            model = build_dano(
                field,
                DanoBuildConfig(
                    samples=b["samples"],
                    seed=b["seed"],
                    band=tuple(b["band"]),
                    band_absolute=b["band_absolute"],
                    gradient_step=b["gradient_step"],
                    alpha=b["alpha"],
                    mass_samples=b["mass_samples"],
                ),
            )
        return DanoBody(resolved["name"], model, field, resolved["actuated"])
    if kind == "sphere":
        return SphereBody(resolved["name"], resolved["radius"], resolved["mass"], resolved["actuated"])
    if kind == "static_halfspace":
        return StaticBody(resolved["name"], HalfSpace(resolved["normal"], resolved["offset"]))
    return StaticBody(resolved["name"], Sphere(resolved["center"], resolved["radius"]))


def _initial_state(resolved: dict) -> BodyState:
    init = resolved["initial"]
    return BodyState(
        Pose(np.array(init["position"]), np.array(init["quaternion"])),
        np.array(init["linear_velocity"]),
        np.array(init["angular_velocity"]),
    )


def apply_overrides(
    resolved: dict,
    dt: float | None = None,
    horizon: int | None = None,
    seed: int | None = None,
    sets: list[str] | None = None,
) -> dict:
    """Apply command-line overrides to a resolved configuration dict.

    --set accepts 'body.alpha=VALUE' and 'bodyA:bodyB.param=VALUE'.
    """
    scene = resolved["scene"]
    if dt is not None:
        scene["dt"] = float(dt)
    if horizon is not None:
        scene["horizon"] = int(horizon)
    if seed is not None:
        scene["seed"] = int(seed)
        for i, body in enumerate(scene["bodies"]):
            if body["kind"] == "dano" and body["model_file"] is None:
                body["build"]["seed"] = int(seed) + i
    for assignment in sets or []:
        name, sep, value = assignment.partition("=")
        if not sep:
            raise ParseError(f"--set needs name=value, got '{assignment}'")
        value = _as_float(value, f"--set {name}")
        prefix, _, field = name.rpartition(".")
        if not prefix:
            raise ParseError(f"--set: malformed parameter name '{name}'")
        if field == "alpha":
            for body in scene["bodies"]:
                if body["name"] == prefix and body["kind"] == "dano":
                    body["build"]["alpha"] = value
                    break
            else:
                raise ParseError(f"--set: no dano body named '{prefix}'")
        elif ":" in prefix:
            a, _, b = prefix.partition(":")
            if field not in PARAM_FIELDS:
                raise ParseError(f"--set: unknown contact parameter '{field}'")
            for contact in scene["contacts"]:
                if {contact["pair"][0], contact["pair"][1]} == {a, b}:
                    contact[field] = value
                    break
            else:
                raise ParseError(f"--set: no contact pair ({a}, {b})")
        else:
            raise ParseError(f"--set: cannot resolve '{name}'")
    return resolved


def resolve_config(raw: dict, base_dir: Path) -> tuple[dict, list[str]]:
    """Validate a raw YAML document and fill every default."""
    warnings: list[str] = []
    _check_keys(raw, ("scene", "sysid", "trajopt", "gradcheck"), "config")
    if "scene" not in raw:
        raise ParseError("config: missing 'scene' section")
    scene_raw = raw["scene"]
    _check_keys(
        scene_raw,
        ("seed", "gravity", "dt", "horizon", "bodies", "contacts", "controls"),
        "scene",
    )
    if "bodies" not in scene_raw or not isinstance(scene_raw["bodies"], list) or not scene_raw["bodies"]:
        raise ParseError("scene: needs a non-empty 'bodies' list")
    seed = _as_int(scene_raw.get("seed", 0), "scene.seed")
    resolved_scene = {
        "seed": seed,
        "gravity": _as_vec(scene_raw.get("gravity", [0.0, 0.0, -9.81]), 3, "scene.gravity"),
        "dt": _as_float(scene_raw.get("dt", 0.01), "scene.dt"),
        "horizon": _as_int(scene_raw.get("horizon", 100), "scene.horizon"),
        "bodies": [
            _resolve_body(b, i, seed, base_dir) for i, b in enumerate(scene_raw["bodies"])
        ],
        "contacts": [
            _resolve_contact(c, i, warnings)
            for i, c in enumerate(scene_raw.get("contacts") or [])
        ],
        "controls": _resolve_controls(scene_raw.get("controls"), base_dir, "scene.controls"),
    }
    resolved = {"scene": resolved_scene}
    for key, resolver in (
        ("sysid", _resolve_sysid),
        ("trajopt", _resolve_trajopt),
        ("gradcheck", _resolve_gradcheck),
    ):
        section = resolver(raw.get(key), base_dir)
        if section is not None:
            resolved[key] = section
    return resolved, warnings


def build_parsed(resolved: dict, warnings: list[str], base_dir: Path) -> ParsedScene:
    """Construct scene objects from a resolved configuration dict."""
    scene_dict = resolved["scene"]
    bodies = []
    initial_states = []
    for body_dict in scene_dict["bodies"]:
        try:
            body = _build_body(body_dict)
        except DomainError as exc:
            raise ParseError(f"body '{body_dict['name']}': {exc}") from exc
        bodies.append(body)
        if body.is_dynamic:
            initial_states.append(_initial_state(body_dict))
    contacts = []
    by_name = {b.name: b for b in bodies}
    for contact in scene_dict["contacts"]:
        a, b = contact["pair"]
        for name in (a, b):
            if name not in by_name:
                raise ParseError(f"contact pair references unknown body '{name}'")
        # the density-field body carries the sample sums and goes first
        if not isinstance(by_name[a], DanoBody) and isinstance(by_name[b], DanoBody):
            a, b = b, a
        params = ContactParams(**{f: contact[f] for f in PARAM_FIELDS})
        contacts.append(ContactPair(a, b, params))
    try:
        scene = SceneConfig(
            bodies=bodies,
            contacts=contacts,
            gravity=np.array(scene_dict["gravity"]),
            dt=scene_dict["dt"],
            horizon=scene_dict["horizon"],
            seed=scene_dict["seed"],
        )
    except DomainError as exc:
        raise ParseError(str(exc)) from exc
    return ParsedScene(scene, initial_states, resolved, warnings, base_dir)


def parse_scene(
    path,
    dt: float | None = None,
    horizon: int | None = None,
    seed: int | None = None,
    sets: list[str] | None = None,
) -> ParsedScene:
    """Parse, validate, resolve, and build a scene configuration file."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"scene file not found: {path}")
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    resolved, warnings = resolve_config(raw, path.parent.resolve())
    resolved = apply_overrides(resolved, dt, horizon, seed, sets)
    return build_parsed(resolved, warnings, path.parent.resolve())


def build_controls(parsed: ParsedScene, spec: dict, n_steps: int) -> np.ndarray:
    """Materialize a controls recipe into the (n_steps, n_act, 6) layout."""
    scene = parsed.scene
    actuated = scene.actuated_bodies
    controls = np.zeros((n_steps, len(actuated), 6))
    kind = spec["type"]
    if kind == "none":
        return controls
    if kind == "file":
        loaded = load_controls(scene, spec["path"])
        if len(loaded) < n_steps:
            raise ParseError(f"controls file has {len(loaded)} steps, need {n_steps}")
        return loaded[:n_steps]
    names = [b.name for b in actuated]
    if spec["body"] not in names:
        raise ParseError(f"controls target '{spec['body']}' is not an actuated body")
    i = names.index(spec["body"])
    body = actuated[i]
    if spec.get("gravity_compensation"):
        controls[:, i, 0:3] -= body.mass * scene.gravity
    if kind == "constant":
        controls[:, i, :] += np.asarray(spec["wrench"], dtype=float)
    else:  # push
        t = np.arange(n_steps) * scene.dt
        window = (t >= spec["start"]) & (t < spec["start"] + spec["duration"])
        controls[window, i, 0:3] += np.asarray(spec["force"], dtype=float)
    return controls


def build_sysid_problem(parsed: ParsedScene) -> SysIdProblem:
    """Load observations and assemble the fitting problem."""
    section = parsed.sysid
    if section is None:
        raise ParseError("configuration has no 'sysid' section")
    scene = parsed.scene
    dyn_names = [b.name for b in scene.dynamic_bodies]
    observations = []
    for entry in section["trajectories"]:
        _, by_body = load_trajectory(entry["states"])
        missing = [n for n in dyn_names if n not in by_body]
        if missing:
            raise ParseError(f"{entry['states']}: missing bodies {missing}")
        n_frames = len(by_body[dyn_names[0]])
        states = [[by_body[name][t] for name in dyn_names] for t in range(n_frames)]
        controls = None
        if entry["controls"] is not None:
            controls = load_controls(scene, entry["controls"])
            controls = controls[: n_frames - 1]
        observations.append(ObservedTrajectory(states, controls))
    params = make_param_vector(scene, section["parameters"])
    gn = section["gauss_newton"]
    settings = GaussNewtonSettings(
        max_iterations=gn["max_iterations"],
        initial_damping=gn["initial_damping"],
        min_damping=gn["min_damping"],
        max_damping=gn["max_damping"],
        gradient_tolerance=gn["gradient_tolerance"],
        step_tolerance=gn["step_tolerance"],
        fd_step=gn["fd_step"],
    )
    weights = expand_weights(scene, section["weights"])
    return SysIdProblem(scene, observations, params, weights, settings)


def build_trajopt_problem(parsed: ParsedScene) -> tuple[TrajOptProblem, np.ndarray]:
    """Assemble the trajectory-optimization problem and its initial controls."""
    section = parsed.trajopt
    if section is None:
        raise ParseError("configuration has no 'trajopt' section")
    scene = parsed.scene
    dyn_names = [b.name for b in scene.dynamic_bodies]
    n_x = 12 * len(dyn_names)
    horizon = section["horizon"]

    final_weights = np.zeros(n_x)
    goal_positions = {}
    for goal in section["goals"]:
        if goal["body"] not in dyn_names:
            raise ParseError(f"trajopt goal body '{goal['body']}' is not dynamic")
        i = dyn_names.index(goal["body"])
        final_weights[12 * i : 12 * i + 3] = goal["weight"]
        final_weights[12 * i + 6 : 12 * i + 12] = goal["velocity_weight"]
        goal_positions[i] = np.asarray(goal["position"], dtype=float)
    goal_states = goal_states_from(parsed.initial_states, goal_positions)

    stage = section["stage"]
    stage_weights = np.zeros(n_x)
    stage_weights += stage["state_weight"] * (final_weights > 0.0)
    for i in range(len(dyn_names)):
        stage_weights[12 * i + 6 : 12 * i + 12] += stage["velocity_weight"]
    n_u = 6 * len(scene.actuated_bodies)
    if n_u == 0:
        raise ParseError("trajopt needs at least one actuated body")
    control_weights = np.tile(
        np.concatenate([np.full(3, stage["control_weight"]), np.full(3, stage["torque_weight"])]),
        len(scene.actuated_bodies),
    )
    bound = np.tile(
        np.concatenate(
            [
                np.full(3, section["control_bounds"]["force"]),
                np.full(3, section["control_bounds"]["torque"]),
            ]
        ),
        len(scene.actuated_bodies),
    )
    ilqr_cfg = section["ilqr"]
    penalty_cfg = section["penalty"]
    problem = TrajOptProblem(
        scene=scene,
        horizon=horizon,
        initial_states=parsed.initial_states,
        goal_states=goal_states,
        stage_state_weights=stage_weights,
        control_weights=control_weights,
        final_state_weights=final_weights,
        control_lower=-bound,
        control_upper=bound,
        ilqr=IlqrSettings(
            max_iterations=ilqr_cfg["max_iterations"],
            cost_tolerance=ilqr_cfg["cost_tolerance"],
            regularization_init=ilqr_cfg["regularization_init"],
            regularization_scale=ilqr_cfg["regularization_scale"],
            regularization_max=ilqr_cfg["regularization_max"],
            line_search_steps=ilqr_cfg["line_search_steps"],
            jacobian_step=ilqr_cfg["jacobian_step"],
        ),
        penalty=PenaltySettings(
            initial_weight=penalty_cfg["initial_weight"],
            scale=penalty_cfg["scale"],
            outer_iterations=penalty_cfg["outer_iterations"],
            violation_tolerance=penalty_cfg["violation_tolerance"],
        ),
    )
    initial_controls = build_controls(parsed, section["initial_controls"], horizon - 1)
    return problem, initial_controls.reshape(horizon - 1, -1)
