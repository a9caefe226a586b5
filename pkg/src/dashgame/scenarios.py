"""Declarative scenario files and the shipped presets.

A scenario document has four blocks::

    {
      "name": "...",
      "params": {"mu": ..., "nu": ..., "p": ...},
      "users": [
        {"video": {"alpha": ..., "beta": ..., "ladder": [...]},
         "theta": ..., "b_ref": ..., "policy": "game",
         "cap_profile": null | 1.5 | {"kind": "random", "lo":.., "hi":.., "dwell":..}
                         | {"kind": "breakpoints", "breakpoints": [[t, cap], ...]},
         ... optional adaptation overrides ...},
        ...
      ],
      "server": {"kind": "fixed|persistent|staged|short_term|custom",
                 "base": 6.0, "breakpoints": [[t, bw], ...]},
      "sim": {"segment_duration": 2, "total_segments": ..., "initial_buffer": 2,
              "quantize": false, "seed": 0}
    }

Validation errors name the offending field.  Presets covering the
experimental cases ship with the package and load by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from .adapt import AdaptConfig
from .model import GameParams, VideoQualityModel
from .netsim import BandwidthProfile, CapSpec, SimConfig, calibrate_nu, make_profile

__all__ = [
    "ScenarioError",
    "UserSpec",
    "Scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_scenario",
    "list_presets",
    "load_preset",
    "apply_override",
]

POLICIES = ("game", "qf", "bf")


class ScenarioError(ValueError):
    """Scenario validation failure, pointing at the offending field."""

    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"{fieldname}: {message}")


@dataclass(frozen=True)
class UserSpec:
    """One user's video, adaptation settings, policy, and channel cap."""

    video: VideoQualityModel
    theta: float
    b_ref: float
    policy: str = "game"
    cap: CapSpec = field(default_factory=CapSpec)
    r_init: float = 0.1
    r_min: float = 0.05
    r_max: Optional[float] = None
    max_step_fraction: float = 0.25
    epsilon: float = 1e-4
    estimator_weight: float = 0.2
    qf_startup: float = 10.0
    bf_gain: float = 0.5

    def adapt_config(self) -> AdaptConfig:
        r_max = self.r_max if self.r_max is not None else self.video.ladder[-1]
        return AdaptConfig(
            theta=self.theta,
            r_max=r_max,
            epsilon=self.epsilon,
            r_init=self.r_init,
            r_min=self.r_min,
            max_step_fraction=self.max_step_fraction,
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    params: GameParams
    users: tuple[UserSpec, ...]
    server: BandwidthProfile
    sim: SimConfig


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}.{key}", "missing required field")
    return d[key]


def _positive(value, where: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(where, f"must be a number, got {value!r}") from None
    if not value > 0:
        raise ScenarioError(where, f"must be > 0, got {value!r}")
    return value


def _parse_cap(raw, where: str) -> CapSpec:
    if raw is None:
        return CapSpec(kind="none")
    if isinstance(raw, (int, float)):
        return CapSpec(kind="fixed", cap=_positive(raw, where))
    if isinstance(raw, dict):
        kind = raw.get("kind")
        try:
            if kind == "fixed":
                return CapSpec(kind="fixed", cap=float(raw["cap"]))
            if kind == "random":
                choices = raw.get("choices")
                return CapSpec(
                    kind="random",
                    lo=float(raw.get("lo", 1.0)),
                    hi=float(raw.get("hi", 2.0)),
                    dwell=float(raw.get("dwell", 40.0)),
                    choices=(tuple(float(c) for c in choices) if choices else None),
                )
            if kind == "breakpoints":
                return CapSpec(
                    kind="breakpoints",
                    breakpoints=tuple((float(t), float(c)) for t, c in raw["breakpoints"]),
                )
            if kind == "none":
                return CapSpec(kind="none")
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(where, f"invalid cap profile: {exc}") from exc
        raise ScenarioError(where, f"unknown cap kind {kind!r}")
    raise ScenarioError(where, f"expected null, number, or object, got {raw!r}")


def _parse_user(raw: dict, where: str) -> UserSpec:
    video_raw = _require(raw, "video", where)
    try:
        video = VideoQualityModel(
            alpha=float(_require(video_raw, "alpha", f"{where}.video")),
            beta=float(_require(video_raw, "beta", f"{where}.video")),
            ladder=tuple(float(r) for r in _require(video_raw, "ladder", f"{where}.video")),
            metric_label=str(video_raw.get("metric_label", "")),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"{where}.video", str(exc)) from exc
    theta = _positive(_require(raw, "theta", where), f"{where}.theta")
    b_ref = _positive(_require(raw, "b_ref", where), f"{where}.b_ref")
    policy = raw.get("policy", "game")
    if policy not in POLICIES:
        raise ScenarioError(f"{where}.policy", f"must be one of {POLICIES}, got {policy!r}")
    spec = UserSpec(
        video=video,
        theta=theta,
        b_ref=b_ref,
        policy=policy,
        cap=_parse_cap(raw.get("cap_profile"), f"{where}.cap_profile"),
        r_init=float(raw.get("r_init", 0.1)),
        r_min=float(raw.get("r_min", 0.05)),
        r_max=(float(raw["r_max"]) if raw.get("r_max") is not None else None),
        max_step_fraction=float(raw.get("max_step_fraction", 0.25)),
        epsilon=float(raw.get("epsilon", 1e-4)),
        estimator_weight=float(raw.get("estimator_weight", 0.2)),
        qf_startup=float(raw.get("qf_startup", 10.0)),
        bf_gain=float(raw.get("bf_gain", 0.5)),
    )
    try:
        spec.adapt_config()
    except ValueError as exc:
        raise ScenarioError(where, str(exc)) from exc
    return spec


def scenario_from_dict(doc: dict, name: str = "") -> Scenario:
    """Validate a scenario document and resolve it into typed objects."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario", "document must be a JSON object")
    sim_raw = _require(doc, "sim", "scenario")
    try:
        sim = SimConfig(
            total_segments=int(_require(sim_raw, "total_segments", "sim")),
            segment_duration=float(sim_raw.get("segment_duration", 2.0)),
            initial_buffer=float(sim_raw.get("initial_buffer", 2.0)),
            quantize=bool(sim_raw.get("quantize", False)),
            rng_seed=int(sim_raw.get("seed", 0)),
            resume_policy=str(sim_raw.get("resume_policy", "next-segment")),
            exchange_latency=float(sim_raw.get("exchange_latency", 0.0)),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("sim", str(exc)) from exc

    params_raw = _require(doc, "params", "scenario")
    try:
        params = GameParams(
            mu=float(_require(params_raw, "mu", "params")),
            nu=float(_require(params_raw, "nu", "params")),
            p=float(_require(params_raw, "p", "params")),
            segment_duration=sim.segment_duration,
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("params", str(exc)) from exc

    users_raw = _require(doc, "users", "scenario")
    if not isinstance(users_raw, list) or not users_raw:
        raise ScenarioError("users", "must be a nonempty list")
    users = tuple(
        _parse_user(u, f"users[{i}]") for i, u in enumerate(users_raw)
    )

    server_raw = _require(doc, "server", "scenario")
    try:
        server = make_profile(
            kind=str(_require(server_raw, "kind", "server")),
            base=float(server_raw.get("base", 6.0)),
            breakpoints=server_raw.get("breakpoints"),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("server", str(exc)) from exc

    return Scenario(
        name=str(doc.get("name", name)),
        params=params,
        users=users,
        server=server,
        sim=sim,
    )


def scenario_to_dict(sc: Scenario) -> dict:
    """Serialise a resolved scenario back into its document form."""
    users = []
    for u in sc.users:
        cap = None
        if u.cap.kind == "fixed":
            cap = {"kind": "fixed", "cap": u.cap.cap}
        elif u.cap.kind == "random":
            cap = {"kind": "random", "lo": u.cap.lo, "hi": u.cap.hi, "dwell": u.cap.dwell}
            if u.cap.choices is not None:
                cap["choices"] = list(u.cap.choices)
        elif u.cap.kind == "breakpoints":
            cap = {"kind": "breakpoints", "breakpoints": [list(bp) for bp in u.cap.breakpoints]}
        users.append({
            "video": {
                "alpha": u.video.alpha,
                "beta": u.video.beta,
                "ladder": list(u.video.ladder),
                "metric_label": u.video.metric_label,
            },
            "theta": u.theta,
            "b_ref": u.b_ref,
            "policy": u.policy,
            "cap_profile": cap,
            "r_init": u.r_init,
            "r_min": u.r_min,
            "r_max": u.r_max,
            "max_step_fraction": u.max_step_fraction,
            "epsilon": u.epsilon,
            "estimator_weight": u.estimator_weight,
            "qf_startup": u.qf_startup,
            "bf_gain": u.bf_gain,
        })
    return {
        "name": sc.name,
        "params": {"mu": sc.params.mu, "nu": sc.params.nu, "p": sc.params.p},
        "users": users,
        "server": {
            "kind": "custom",
            "breakpoints": [list(bp) for bp in sc.server.breakpoints],
        },
        "sim": {
            "segment_duration": sc.sim.segment_duration,
            "total_segments": sc.sim.total_segments,
            "initial_buffer": sc.sim.initial_buffer,
            "quantize": sc.sim.quantize,
            "seed": sc.sim.rng_seed,
            "resume_policy": sc.sim.resume_policy,
            "exchange_latency": sc.sim.exchange_latency,
        },
    }


def load_scenario(path: str) -> Scenario:
    """Load a scenario (or run-manifest, which embeds one) from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "scenario" in doc and "users" not in doc:
        doc = doc["scenario"]  # run manifests embed the resolved scenario
    return scenario_from_dict(doc, name=path)


def list_presets() -> list[str]:
    names = []
    for entry in resources.files("dashgame.presets").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[:-5])
    return sorted(names)


def load_preset(name: str) -> Scenario:
    ref = resources.files("dashgame.presets").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ScenarioError("preset", f"unknown preset {name!r}; available: {list_presets()}")
    doc = json.loads(ref.read_text(encoding="utf-8"))
    return scenario_from_dict(doc, name=name)


def recalibrate_nu(sc: Scenario, r_target: Optional[float] = None) -> Scenario:
    """Return the scenario with nu recomputed from the calibration helper.

    Uses the first user's video curve and the profile's initial bandwidth;
    the target rate defaults to an equal split of that bandwidth.
    """
    video = sc.users[0].video
    bw0 = sc.server.breakpoints[0][1]
    nu = calibrate_nu(
        alpha=video.alpha,
        beta=video.beta,
        mu=sc.params.mu,
        segment_duration=sc.params.segment_duration,
        export_bw=bw0,
        n_users=len(sc.users),
        r_target=r_target,
    )
    params = GameParams(
        mu=sc.params.mu, nu=nu, p=sc.params.p,
        segment_duration=sc.params.segment_duration,
    )
    return replace(sc, params=params)


def apply_override(doc: dict, dotted_key: str, value) -> None:
    """Set ``dotted_key`` (e.g. ``sim.seed`` or ``users.*.theta``) in a document.

    A ``*`` component fans out over every element of a list.  Used by the
    CLI for sweep grids and one-off overrides.
    """
    parts = dotted_key.split(".")
    targets = [doc]
    for part in parts[:-1]:
        spread = []
        for tgt in targets:
            if part == "*":
                if not isinstance(tgt, list):
                    raise ScenarioError(dotted_key, f"cannot fan out over non-list at {part!r}")
                spread.extend(tgt)
            elif isinstance(tgt, list):
                try:
                    spread.append(tgt[int(part)])
                except (ValueError, IndexError) as exc:
                    raise ScenarioError(dotted_key, f"bad list index {part!r}") from exc
            elif isinstance(tgt, dict):
                if part not in tgt:
                    tgt[part] = {}
                spread.append(tgt[part])
            else:
                raise ScenarioError(dotted_key, f"cannot descend into {type(tgt).__name__}")
        targets = spread
    leaf = parts[-1]
    for tgt in targets:
        if isinstance(tgt, dict):
            tgt[leaf] = value
        elif isinstance(tgt, list):
            try:
                tgt[int(leaf)] = value
            except (ValueError, IndexError) as exc:
                raise ScenarioError(dotted_key, f"bad list index {leaf!r}") from exc
        else:
            raise ScenarioError(dotted_key, f"cannot assign into {type(tgt).__name__}")
