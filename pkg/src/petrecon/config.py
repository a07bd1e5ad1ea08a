"""Run configuration files.

A run config is a ``key = value`` text file mirroring the training and model
options plus dataset/output paths. Command-line flags override file values,
and the effective configuration is echoed into the run directory so a run
can be reproduced by feeding the echo back in. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["RunConfig", "ConfigError", "read_config_file", "write_config_file"]


class ConfigError(ValueError):
    """A config file contains unknown keys or unparsable values."""


@dataclass
class RunConfig:
    data: str = ""
    out: str = ""
    epochs: int = 30
    lr: float = 2e-4
    batch_size: int = 8
    beta: float = 1.0
    seed: int = 0
    shuffle: bool = True
    detach_residual_target: bool = True
    lambda_fixed: float | None = None
    freeze_encoder: bool = False
    base_channels: int = 16
    num_classes: int = 3
    pretrained: str | None = None

    def merged_with_flags(self, args) -> "RunConfig":
        """New config with any non-None attribute of ``args`` overriding."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in values:
            flag = getattr(args, name, None)
            if flag is not None:
                values[name] = flag
        return RunConfig(**values)


_BOOL_KEYS = {"shuffle", "detach_residual_target", "freeze_encoder"}
_INT_KEYS = {"epochs", "batch_size", "seed", "base_channels", "num_classes"}
_FLOAT_KEYS = {"lr", "beta"}
_OPT_FLOAT_KEYS = {"lambda_fixed"}
_STR_KEYS = {"data", "out"}
_OPT_STR_KEYS = {"pretrained"}
_ALL_KEYS = (_BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _OPT_FLOAT_KEYS
             | _STR_KEYS | _OPT_STR_KEYS)


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")


def read_config_file(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _BOOL_KEYS:
                values[key] = _parse_bool(value, key)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _OPT_FLOAT_KEYS:
                values[key] = None if value.lower() == "none" else float(value)
            elif key in _OPT_STR_KEYS:
                values[key] = None if value.lower() == "none" else value
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


def write_config_file(config: RunConfig, path: str | Path) -> None:
    """Echo a config with stable key order."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            rendered = "none"
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
