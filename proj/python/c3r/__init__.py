"""Context-concept encoders for multi-channel microscopy."""

import json
from typing import Any, Mapping, Optional

from ._c3r import (
    ConfigError,
    NumericError,
    ShapeError,
    average_precision,
    mcd_loss,
    parity_entropy,
)
from ._c3r import parameter_count as _parameter_count
from ._c3r import run_command as _run_command

__all__ = [
    "ConfigError",
    "NumericError",
    "ShapeError",
    "analyze",
    "average_precision",
    "embed",
    "evaluate",
    "generate",
    "mcd_loss",
    "parameter_count",
    "parity_entropy",
    "train",
]


def _run(command: str, config: Mapping[str, Any], out: str, seed: Optional[int]) -> dict:
    return json.loads(_run_command(command, json.dumps(dict(config)), str(out), seed))


def generate(config: Mapping[str, Any], out: str, seed: Optional[int] = None) -> dict:
    return _run("gen", config, out, seed)


def train(config: Mapping[str, Any], out: str, seed: Optional[int] = None) -> dict:
    return _run("train", config, out, seed)


def embed(config: Mapping[str, Any], out: str, seed: Optional[int] = None) -> dict:
    return _run("embed", config, out, seed)


def evaluate(config: Mapping[str, Any], out: str, seed: Optional[int] = None) -> dict:
    return _run("eval", config, out, seed)


def analyze(config: Mapping[str, Any], out: str, seed: Optional[int] = None) -> dict:
    return _run("analyze", config, out, seed)


def parameter_count(encoder: Mapping[str, Any]) -> int:
    return _parameter_count(json.dumps(dict(encoder)))
