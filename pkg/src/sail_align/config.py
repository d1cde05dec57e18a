"""Training configuration files.

The format is a flat TOML-style key/value file with optional sections:

    preset = "sail"
    epochs = 30
    [image_head]
    kind = "glu"

Values are quoted strings, integers, floats, or true/false; ``#`` starts
a comment. Exact key names are documented in the README.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .heads import HeadConfig
from .losses import LossConfig
from .trainer import TrainConfig


def parse_kv_file(text: str) -> dict:
    """Parse the TOML-style subset into nested dicts (one level of sections)."""
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            current = root.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        current[key] = _parse_value(value, lineno)
    return root


def _parse_value(value: str, lineno: int):
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    if value == "true":
        return True
    if value == "false":
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {value!r}") from None


_TOP_LEVEL_KEYS = {
    "preset", "epochs", "batch_size", "seed", "eval_every", "multi_positive",
    "lr", "beta1", "beta2", "weight_decay", "checkpoint_path",
}
_SECTIONS = {"image_head", "text_head", "loss"}


def train_config_from_file(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from a config file plus flat CLI overrides."""
    data = parse_kv_file(Path(path).read_text(encoding="utf-8"))
    for key in data:
        if key not in _TOP_LEVEL_KEYS | _SECTIONS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    for section in ("image_head", "text_head"):
        if section not in data:
            raise ConfigError(f"{path}: missing [{section}] section")
    kwargs = {k: v for k, v in data.items() if k in _TOP_LEVEL_KEYS}
    kwargs.update(overrides or {})
    try:
        kwargs["image_head"] = HeadConfig(**data["image_head"])
        kwargs["text_head"] = HeadConfig(**data["text_head"])
        kwargs["loss"] = LossConfig(**data.get("loss", {}))
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
