"""Experiment configuration: one YAML file, validated completely before anything runs."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .env import PHASES, SCHEMATIC, ExternalSimConfig, OpAmpModelConfig
from .policy import PolicyUpdateConfig
from .reward import ConfigError, ConstraintSpec, default_constraints
from .space import ParameterSpace, ParamSpec, default_opamp_space
from .surrogate import PER_METRIC, SCALAR, RegressionConfig
from .trainer import MODES, TrainerConfig

TOP_KEYS = {"seed", "mode", "output_dir", "space", "constraints", "env", "trainer", "transfer", "model_based"}


@dataclass
class EnvSpec:
    kind: str = "analytic"
    phase: str = SCHEMATIC
    opamp: OpAmpModelConfig = field(default_factory=OpAmpModelConfig)
    c_par: Optional[float] = None
    external: Optional[ExternalSimConfig] = None


@dataclass
class ExperimentConfig:
    space: ParameterSpace
    constraints: list[ConstraintSpec]
    env: EnvSpec
    trainer: TrainerConfig
    output_dir: str = "runs/default"
    pretrained_policy: Optional[str] = None
    schematic_buffer: Optional[str] = None
    pretrained_model: Optional[str] = None
    source: Optional[str] = None


class _Errors:
    def __init__(self):
        self.items: list[str] = []

    def add(self, path: str, msg: str) -> None:
        self.items.append(f"{path}: {msg}")

    def raise_if_any(self) -> None:
        if self.items:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(self.items))


def _scalar_type(tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if len(args) == 1 else None
    return tp


def _build_dataclass(cls, data: Any, path: str, errors: _Errors, skip=()):
    """Instantiate ``cls`` from a mapping, reporting unknown keys and bad types."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.add(path, f"expected a mapping, got {type(data).__name__}")
        return None
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            errors.add(f"{path}.{key}", "unknown key")
            continue
        tp = _scalar_type(hints[key])
        if value is None:
            kwargs[key] = None
        elif tp is bool:
            if not isinstance(value, bool):
                errors.add(f"{path}.{key}", f"expected true/false, got {value!r}")
                continue
            kwargs[key] = value
        elif tp is int:
            if isinstance(value, bool) or not isinstance(value, int):
                errors.add(f"{path}.{key}", f"expected an integer, got {value!r}")
                continue
            kwargs[key] = value
        elif tp is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.add(f"{path}.{key}", f"expected a number, got {value!r}")
                continue
            kwargs[key] = float(value)
        elif tp is str:
            if not isinstance(value, str):
                errors.add(f"{path}.{key}", f"expected a string, got {value!r}")
                continue
            kwargs[key] = value
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.add(path, str(exc))
        return None


def _parse_space(data, errors: _Errors) -> ParameterSpace | None:
    if data is None:
        return default_opamp_space()
    if not isinstance(data, list) or not data:
        errors.add("space", "expected a non-empty list of parameters")
        return None
    params = []
    allowed = {"name", "min", "max", "count", "scale", "unit"}
    for i, p in enumerate(data):
        path = f"space[{i}]"
        if not isinstance(p, dict):
            errors.add(path, "expected a mapping")
            continue
        for k in set(p) - allowed:
            errors.add(f"{path}.{k}", "unknown key")
        missing = {"name", "min", "max", "count"} - set(p)
        if missing:
            errors.add(path, f"missing {sorted(missing)}")
            continue
        try:
            params.append(
                ParamSpec.build(str(p["name"]), float(p["min"]), float(p["max"]), int(p["count"]),
                                p.get("scale", "log"), p.get("unit", ""))
            )
        except (TypeError, ValueError) as exc:
            errors.add(path, str(exc))
    try:
        return ParameterSpace(params) if params else None
    except ValueError as exc:
        errors.add("space", str(exc))
        return None


def _parse_constraints(data, errors: _Errors) -> list[ConstraintSpec]:
    if data is None:
        return default_constraints()
    if not isinstance(data, list) or not data:
        errors.add("constraints", "expected a non-empty list")
        return []
    out = []
    for i, c in enumerate(data):
        spec = _build_dataclass(ConstraintSpec, c, f"constraints[{i}]", errors)
        if spec is not None:
            out.append(spec)
    names = [c.metric for c in out]
    if len(set(names)) != len(names):
        errors.add("constraints", f"duplicate metrics in {names}")
    return out


def _parse_env(data, errors: _Errors, constraints) -> EnvSpec:
    if data is not None and not isinstance(data, dict):
        errors.add("env", "expected a mapping")
        return EnvSpec()
    data = dict(data or {})
    opamp = _build_dataclass(OpAmpModelConfig, data.pop("opamp", None), "env.opamp", errors) or OpAmpModelConfig()
    ext_data = data.pop("external", None)
    spec = _build_dataclass(EnvSpec, data, "env", errors, skip=("opamp", "external")) or EnvSpec()
    spec.opamp = opamp
    if spec.kind not in ("analytic", "external"):
        errors.add("env.kind", f"expected analytic or external, got {spec.kind!r}")
    if spec.phase not in PHASES:
        errors.add("env.phase", f"expected one of {PHASES}, got {spec.phase!r}")
    if spec.kind == "external":
        if ext_data is None:
            errors.add("env.external", "required when env.kind is external")
        else:
            ext = _build_dataclass(ExternalSimConfig, ext_data, "env.external", errors, skip=("required",))
            if ext is not None:
                ext.required = tuple(c.metric for c in constraints)
            spec.external = ext
    elif ext_data is not None:
        errors.add("env.external", "only valid when env.kind is external")
    return spec


def _parse_trainer(data, errors: _Errors, seed, mode) -> TrainerConfig | None:
    if data is not None and not isinstance(data, dict):
        errors.add("trainer", "expected a mapping")
        return None
    data = dict(data or {})
    policy = _build_dataclass(PolicyUpdateConfig, data.pop("policy", None), "trainer.policy", errors)
    regression = _build_dataclass(RegressionConfig, data.pop("regression", None), "trainer.regression", errors)
    for k in ("mode", "seed"):
        if k in data:
            errors.add(f"trainer.{k}", "set at the top level")
            data.pop(k)
    if seed is not None:
        data["seed"] = seed
    if mode is not None:
        data["mode"] = mode
    cfg = _build_dataclass(TrainerConfig, data, "trainer", errors, skip=("policy", "regression"))
    if cfg is None:
        return None
    if cfg.head_mode not in (SCALAR, PER_METRIC):
        errors.add("trainer.head_mode", f"expected scalar or per_metric, got {cfg.head_mode!r}")
    cfg.policy = policy or PolicyUpdateConfig()
    cfg.regression = regression or RegressionConfig()
    return cfg


def parse_config(data: Any, source: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a loaded config mapping; raise ConfigError listing every problem."""
    errors = _Errors()
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    for key in set(data) - TOP_KEYS:
        errors.add(key, "unknown key")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.add("seed", f"expected a non-negative integer, got {seed!r}")
        seed = 0
    mode = data.get("mode", "dyna")
    if mode not in MODES:
        errors.add("mode", f"expected one of {MODES}, got {mode!r}")
        mode = "dyna"
    space = _parse_space(data.get("space"), errors)
    constraints = _parse_constraints(data.get("constraints"), errors)
    env = _parse_env(data.get("env"), errors, constraints)
    trainer = _parse_trainer(data.get("trainer"), errors, seed, mode)
    output_dir = data.get("output_dir", "runs/default")
    if not isinstance(output_dir, str):
        errors.add("output_dir", "expected a path string")

    extra = {}
    for section, keys in (("transfer", ("pretrained_policy", "schematic_buffer", "pretrained_model")),
                          ("model_based", ("pretrained_policy", "pretrained_model"))):
        sec = data.get(section)
        if sec is None:
            continue
        if not isinstance(sec, dict):
            errors.add(section, "expected a mapping")
            continue
        for k, v in sec.items():
            if k not in keys:
                errors.add(f"{section}.{k}", "unknown key")
            elif not isinstance(v, str):
                errors.add(f"{section}.{k}", "expected a path string")
            elif section == mode:
                extra[k] = _resolve(v, source)
    if mode == "transfer":
        for k in ("pretrained_policy", "schematic_buffer"):
            if k not in extra:
                errors.add(f"transfer.{k}", "required in transfer mode")
    if mode == "model_based" and "pretrained_model" not in extra:
        errors.add("model_based.pretrained_model", "required in model_based mode")
    if env.kind == "analytic" and space is not None:
        missing = [n for n in ("w_in", "w_load", "w_tail", "w_out", "w_sink", "w_bias", "cc") if n not in space.names]
        if missing:
            errors.add("space", f"analytic op-amp needs parameters {missing}")
    errors.raise_if_any()
    return ExperimentConfig(space, constraints, env, trainer, output_dir, source=source, **extra)


def _resolve(p: str, source: str | None) -> str:
    path = Path(p)
    if path.is_absolute() or source is None:
        return str(path)
    return str(Path(source).parent / path)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(data or {}, source=str(path), overrides=overrides)
