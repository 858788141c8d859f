"""Run configuration: strict JSON <-> nested dataclasses."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .distill import DistillConfig
from .env import EnvConfig
from .policy import PolicyConfig
from .ppo import PPOConfig

VARIANTS = {
    "ours": (True, True, True),
    "ts": (True, False, False),
    "blind": (False, True, False),
    "no_moe": (True, False, True),
    "no_barlow": (True, True, False),
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass(frozen=True)
class AblationConfig:
    use_depth: bool = True
    use_moe: bool = True
    use_barlow: bool = True

    @classmethod
    def variant(cls, name: str) -> "AblationConfig":
        if name not in VARIANTS:
            raise ConfigError("ablation", f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return cls(*VARIANTS[name])

    @property
    def name(self) -> str:
        for k, v in VARIANTS.items():
            if v == (self.use_depth, self.use_moe, self.use_barlow):
                return k
        return "custom"


@dataclass(frozen=True)
class EvalConfig:
    n_envs: int = 128
    duration: float = 100.0
    level: int = 4
    seed: int = 12345
    terrain_proportions: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)


@dataclass(frozen=True)
class RenderConfig:
    terrain_type: str = "stair"
    difficulty: float = 0.5
    base_pose: tuple[float, ...] = (0.0, 0.0, 0.66, 1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    teacher_iterations: int = 1000
    student_iterations: int = 1000
    checkpoint_interval: int = 100
    metrics_window: int = 100
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    render: RenderConfig = field(default_factory=RenderConfig)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(path, f"unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin is typing.Union or origin is types.UnionType:
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        args = typing.get_args(hint)
        item = args[0] if args else float
        if len(args) > 1 and args[1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(path, f"expected {len(args)} entries, got {len(value)}")
            return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
        return tuple(_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value))
    if origin is dict or hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, "expected an object")
        return {k: _coerce(float, v, f"{path}.{k}") for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def config_from_dict(data: dict) -> RunConfig:
    """Partial configs are merged over the defaults; unknown keys are rejected."""
    full = _merge(config_to_dict(RunConfig()), data)
    cfg = _build(RunConfig, full, "")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
