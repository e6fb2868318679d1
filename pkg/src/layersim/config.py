"""Run configuration: one JSON document with scene, model, train and eval sections."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .model.config import SimulatorConfig
from .oracle.scene import SceneConfig
from .training.losses import LossConfig
from .training.trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    d_pen: float = 0.0
    garment_radius_scale: float = 3.0  # garment anchors count within this many thicknesses
    start: int | None = None  # first conditioning frame; default is the history length
    steps: int | None = None  # rollout length; default runs to the last frame
    rollout_seed: int = 0


_num = {"type": "number"}
_int = {"type": "integer"}
_nullable_num = {"type": ["number", "null"]}
_nullable_int = {"type": ["integer", "null"]}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scene": _section({
            "grids": {"type": "array", "minItems": 1, "maxItems": 2,
                      "items": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                "minItems": 2, "maxItems": 2}},
            "spacing": {"type": "number", "exclusiveMinimum": 0},
            "inner_scale": _num,
            "layer_gap": _num,
            "clearance": _num,
            "attributes": {"type": ["array", "null"], "items": _section({
                "mass_density": _num, "bend_stiffness": _num, "stretch_stiffness": _num,
                "friction": _num, "layer": _int})},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "substeps": {"type": "integer", "minimum": 1},
            "frames": {"type": "integer", "minimum": 1},
            "gravity": _vec3,
            "wind_intervals": {"type": ["array", "null"], "items": _section({
                "start": _int, "end": _int,
                "quaternion": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "strength": {"type": "number", "minimum": 0}})},
            "random_wind_intervals": {"type": "integer", "minimum": 0},
            "max_wind_strength": {"type": "number", "minimum": 0},
            "capsules": {"type": "array", "minItems": 1, "items": _section({
                "a": _vec3, "b": _vec3, "radius": {"type": "number", "exclusiveMinimum": 0}})},
            "body_velocity": {"oneOf": [_vec3, {"type": "null"}]},
            "body_spin": _num,
            "body_samples": {"type": "integer", "minimum": 0},
            "thickness": {"type": "number", "exclusiveMinimum": 0},
            "damping": {"type": "number", "minimum": 0},
            "spring_damping": {"type": "number", "minimum": 0},
            "patch_size": {"type": "integer", "minimum": 1},
            "seed": _int,
        }),
        "model": _section({
            "history": {"type": "integer", "minimum": 1},
            "layers": {"type": "integer", "minimum": 1},
            "hidden": {"type": "integer", "minimum": 3},
            "patch_size": {"type": "integer", "minimum": 1},
            "radius_patch": _nullable_num,
            "radius_body": _nullable_num,
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "use_ret": {"type": "boolean"},
            "accel_scale": {"type": "number", "exclusiveMinimum": 0},
            "seed": _int,
        }),
        "train": _section({
            "noise_steps": {"type": "integer", "minimum": 0},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "epochs": {"type": "integer", "minimum": 1},
            "batch_size": {"type": "integer", "minimum": 1},
            "seed": _int,
            "max_steps": _nullable_int,
            "beta1": _num,
            "beta2": _num,
            "loss": _section({
                "mse_weight": _num, "normal_weight": _num, "body_weight": _num,
                "garment_weight": _num, "d_eps": {"type": "number", "exclusiveMinimum": 0},
                "garment_anchor_radius": _nullable_num}),
        }),
        "eval": _section({
            "d_pen": {"type": "number", "minimum": 0},
            "garment_radius_scale": {"type": "number", "exclusiveMinimum": 0},
            "start": _nullable_int,
            "steps": _nullable_int,
            "rollout_seed": _int,
        }),
    },
}


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: SimulatorConfig = field(default_factory=SimulatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {e.message}") from None
        train = dict(doc.get("train", {}))
        loss = train.pop("loss", {})
        try:
            return cls(SceneConfig.from_dict(doc.get("scene", {})),
                       SimulatorConfig.from_dict(doc.get("model", {})),
                       TrainConfig.from_dict(train),
                       LossConfig(**loss),
                       EvalConfig(**doc.get("eval", {})))
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train["loss"] = dataclasses.asdict(self.loss)
        return {"scene": self.scene.to_dict(), "model": self.model.to_dict(), "train": train,
                "eval": dataclasses.asdict(self.eval)}


def load_config(path=None) -> RunConfig:
    """Read and validate a run config; no path gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(doc)
