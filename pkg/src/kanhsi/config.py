"""Run configuration: a closed key=value schema shared by file and CLI flags.

Config files are line-based ``key = value`` with ``#`` comments, UTF-8.
Unknown keys are rejected; CLI flags override file values. The resolved
configuration serializes back to the same format, so a persisted run config
re-executes bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .train import ConfigError, StepSchedule

__all__ = ["RunConfig", "ConfigError", "parse_config_file", "parse_scheduler"]


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s or s == "none":
        return ()
    try:
        return tuple(int(p) for p in s.split(","))
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from e


@dataclass
class RunConfig:
    arch: str = "mlp"
    plan: str = "vanilla"
    grid_size: int = 2
    spline_order: int = 3
    basis: str = "default"  # default | spline | rbf
    base_fn: str = "prelu"
    scale: float = 1.0
    hidden: tuple[int, ...] = ()
    batch_norm: bool = False
    heads: int = 1
    patch: int = 0  # 0 = architecture default
    pca: int = 0  # 0 = off
    fraction: float = 0.1
    lr: float = 0.01
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    scheduler: str = "none"
    precision: int = 32
    force_lr: bool = False
    cube: str = ""
    labels: str = ""
    dataset_name: str = ""
    out: str = ""
    synth_h: int = 32
    synth_w: int = 32
    synth_bands: int = 16
    synth_classes: int = 4
    synth_noise: float = 0.05
    synth_seed: int = 7

    def validate(self) -> "RunConfig":
        if self.basis not in ("default", "spline", "rbf"):
            raise ConfigError(f"basis must be default, spline or rbf, got {self.basis!r}")
        if bool(self.cube) != bool(self.labels):
            raise ConfigError("cube and labels must be given together")
        parse_scheduler(self.scheduler)
        return self

    def to_text(self) -> str:
        lines = ["# kanhsi run configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_DEFAULTS = RunConfig()


def _field_parser(cfg_field):
    default = getattr(_DEFAULTS, cfg_field.name)
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, tuple):
        return _parse_int_tuple
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_SCHEMA = {f.name: f for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """key = value lines into a typed dict; unknown keys rejected."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            try:
                out[key] = _field_parser(_SCHEMA[key])(val)
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return out


def parse_scheduler(text: str) -> StepSchedule | None:
    """'none', or 'step:<period>:<gamma>'."""
    text = text.strip()
    if text in ("", "none"):
        return None
    parts = text.split(":")
    if len(parts) != 3 or parts[0] != "step":
        raise ConfigError(f"scheduler must be 'none' or 'step:<period>:<gamma>', got {text!r}")
    try:
        return StepSchedule(period=int(parts[1]), gamma=float(parts[2]))
    except ValueError as e:
        raise ConfigError(f"bad scheduler {text!r}: {e}") from e


def resolve(file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults <- config file <- explicit CLI flags."""
    merged = {}
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    unknown = set(merged) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return RunConfig(**merged).validate()
