"""Run configuration files (JSON) and their validation."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .engine import EngineConfig
from .errors import ConfigError
from .head import TrainConfig
from .ingest import SyntheticSpec
from .kde import MeanShiftConfig

_NUM = {"type": "number"}
_INT = {"type": "integer"}

SYNTH_SCHEMA = {
    "type": "object",
    "properties": {
        "num_classes": _INT,
        "dim": _INT,
        "class_centers": {"type": ["array", "null"], "items": {"type": "array", "items": _NUM}},
        "separation": _NUM,
        "centers_seed": _INT,
        "class_stddev": _NUM,
        "tasks": _INT,
        "examples_per_task": _INT,
        "classes_per_task_schedule": {
            "type": ["array", "null"], "items": {"type": "array", "items": _INT}
        },
        "seed": _INT,
        "test_examples_per_class": _INT,
    },
    "required": ["num_classes", "dim", "class_stddev", "tasks"],
    "additionalProperties": False,
}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "variant": {"enum": ["kde", "kde_rbf"]},
        "bandwidth": _NUM,
        "theta2": _NUM,
        "buffer_capacity": _INT,
        "seed": _INT,
        "eval_each_task": {"type": "boolean"},
        "support_gate": {"type": "boolean"},
        "record_timing": {"type": "boolean"},
        "train": {
            "type": "object",
            "properties": {
                "epochs": _INT, "batch_size": _INT, "learning_rate": _NUM, "gamma": _NUM,
                "beta1": _NUM, "beta2": _NUM, "adam_eps": _NUM, "patience": _INT,
                "tolerance": _NUM, "warm_start": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "meanshift": {
            "type": "object",
            "properties": {
                "max_iterations": _INT,
                "convergence_eps": {"type": ["number", "null"]},
                "merge_samples": _INT,
                "seed_strategy": {"enum": ["every-point", "subsample"]},
                "subsample_fraction": _NUM,
                "merge_tolerance": _NUM,
            },
            "additionalProperties": False,
        },
        "manifest": {"type": "string"},
        "synthetic": SYNTH_SCHEMA,
        "folds": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "test": {"type": "string"},
        "out": {"type": "string"},
        "ablation": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _NUM},
        },
    },
    "required": ["bandwidth"],
    "additionalProperties": False,
}

ABLATION_AXES = {"bandwidth": "bandwidth", "theta2": "theta2", "buffer": "buffer_capacity"}


@dataclass
class RunConfigFile:
    engine: EngineConfig
    manifest: Path | None = None
    synthetic: SyntheticSpec | None = None
    folds: list[Path] = field(default_factory=list)
    test: Path | None = None
    out: Path | None = None
    ablation: dict[str, list] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _validate(doc, schema, what):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {where}: {exc.message}") from None


def _read_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from None


def seed_override(default: int | None) -> int | None:
    env = os.environ.get("UVCL_SEED")
    if env is None or env.strip() == "":
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"UVCL_SEED must be an integer, got {env!r}") from None


def load_synthetic_spec(path: str | os.PathLike) -> SyntheticSpec:
    doc = _read_json(Path(path), "synthetic spec")
    _validate(doc, SYNTH_SCHEMA, "synthetic spec")
    seed = seed_override(doc.get("seed"))
    if seed is not None:
        doc["seed"] = seed
    return SyntheticSpec.from_dict(doc)


def parse_run_config(doc: dict, base_dir: Path = Path(".")) -> RunConfigFile:
    _validate(doc, RUN_SCHEMA, "config")
    sources = [k for k in ("manifest", "synthetic", "folds") if k in doc]
    if len(sources) != 1:
        raise ConfigError("config needs exactly one of 'manifest', 'synthetic' or 'folds'")
    try:
        train = TrainConfig(**doc.get("train", {}))
        meanshift = MeanShiftConfig(**doc.get("meanshift", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    engine = EngineConfig(
        bandwidth=doc["bandwidth"],
        variant=doc.get("variant", "kde_rbf"),
        theta2=doc.get("theta2", 0.3),
        buffer_capacity=doc.get("buffer_capacity", 20),
        train=train,
        meanshift=meanshift,
        seed=seed_override(doc.get("seed", 0)),
        eval_each_task=doc.get("eval_each_task", True),
        support_gate=doc.get("support_gate", True),
        record_timing=doc.get("record_timing", False),
    )

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    ablation = doc.get("ablation", {})
    for axis, values in ablation.items():
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}; use {sorted(ABLATION_AXES)}")
        if not values:
            raise ConfigError(f"ablation axis {axis!r} has no values")
    synth = doc.get("synthetic")
    return RunConfigFile(
        engine=engine,
        manifest=rel(doc["manifest"]) if "manifest" in doc else None,
        synthetic=SyntheticSpec.from_dict(synth) if synth is not None else None,
        folds=[rel(p) for p in doc.get("folds", [])],
        test=rel(doc["test"]) if "test" in doc else None,
        out=rel(doc["out"]) if "out" in doc else None,
        ablation=ablation,
        raw=doc,
    )


def load_run_config(path: str | os.PathLike) -> RunConfigFile:
    path = Path(path)
    return parse_run_config(_read_json(path, "config"), path.parent)
