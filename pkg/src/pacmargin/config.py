"""Flat ``key = value`` run configuration files.

One assignment per line; ``#`` starts a comment. Values are parsed by the
type declared in the command's schema, and unknown keys are rejected.
"""

from __future__ import annotations

from pathlib import Path

from .numcore import DomainError, ParseError

__all__ = ["parse_config", "load_config", "validate_paths", "TRAIN_SCHEMA", "SWEEP_SCHEMA"]

_TRUE = {"true", "yes", "1"}
_FALSE = {"false", "no", "0"}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(item):
    def parse(text: str):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return [item(p) for p in parts]

    return parse


PARSERS = {
    "float": float,
    "int": int,
    "str": str,
    "bool": _bool,
    "in_path": str,
    "out_path": str,
    "floats": _list(float),
    "ints": _list(int),
}

_DATA_KEYS = {
    "train_data": "in_path",
    "test_data": "in_path",
    "train_images": "in_path",
    "train_labels": "in_path",
    "test_images": "in_path",
    "test_labels": "in_path",
    "synth_classes": "int",
    "synth_dim": "int",
    "synth_separation": "float",
    "synth_train_per_class": "int",
    "synth_test_per_class": "int",
    "synth_seed": "int",
}

_TRAIN_KEYS = {
    "batch_size": "int",
    "momentum": "float",
    "target_ce": "float",
    "max_epochs": "int",
    "seed": "int",
    "model_kind": "str",
    "target_margin_loss": "float",
    "feature_width": "int",
    "repeats": "int",
    "out": "out_path",
}

TRAIN_SCHEMA = {
    **_DATA_KEYS,
    **_TRAIN_KEYS,
    "learning_rate": "float",
    "width": "int",
    "train_size": "int",
    "model_out": "out_path",
}

SWEEP_SCHEMA = {
    **_DATA_KEYS,
    **_TRAIN_KEYS,
    "learning_rates": "floats",
    "widths": "ints",
    "train_sizes": "ints",
    "workers": "int",
}


def parse_config(text: str, schema: dict) -> dict:
    """Parse config text against ``{key: type name}``; errors name the line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        try:
            out[key] = PARSERS[schema[key]](value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {exc}", lineno) from None
    return out


def validate_paths(config: dict, schema: dict) -> None:
    """Inputs must exist; outputs must have an existing parent directory."""
    for key, value in config.items():
        kind = schema.get(key)
        if kind == "in_path" and not Path(value).is_file():
            raise DomainError(f"{key}: no such file {value!r}")
        if kind == "out_path" and not Path(value).resolve().parent.is_dir():
            raise DomainError(f"{key}: directory of {value!r} does not exist")


def load_config(path, schema: dict) -> dict:
    config = parse_config(Path(path).read_text(), schema)
    validate_paths(config, schema)
    return config
