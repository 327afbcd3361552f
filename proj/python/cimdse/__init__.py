"""Compute-in-memory design-space exploration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional, Sequence

from . import _core
from ._core import CimdseError, count_valid, fit_power_law, restore_probability, table3_average_runtime, workloads

__all__ = [
    "CimdseError",
    "DATA_DIR",
    "adjust",
    "classify",
    "count_valid",
    "enumerate_space",
    "execute_plan",
    "fit_power_law",
    "make_plan",
    "optimize",
    "parse",
    "restore_probability",
    "run_experiment",
    "schema_path",
    "simulate",
    "table3_average_runtime",
    "workloads",
]


def _find_data() -> Path:
    here = Path(__file__).resolve().parent / "data"
    if here.is_dir():
        return here
    # source checkout
    return Path(__file__).resolve().parents[2] / "data"


DATA_DIR = _find_data()
_REQUEST_SCHEMA = DATA_DIR / "schemas" / "request_schema.json"


def schema_path(name: str) -> str:
    """Path of a shipped design-space schema, e.g. ``schema_path("resnet50_22nm")``."""
    p = DATA_DIR / "schemas" / f"{name}.json"
    if not p.is_file():
        raise FileNotFoundError(p)
    return str(p)


def enumerate_space(space_file: str) -> list[dict[str, Any]]:
    return json.loads(_core.enumerate_space(str(space_file)))


def simulate(point: dict[str, Any], model: str, dataset: str = "ImageNet",
             surrogate: Optional[dict[str, Any]] = None) -> dict[str, Any]:
    return json.loads(_core.simulate(json.dumps(point), model, dataset, json.dumps(surrogate or {})))


def optimize(space_file: str, model: str, *, objective: Optional[dict] = None,
             constraints: Sequence[dict] = (), optimizer: Optional[dict] = None,
             pruning: Optional[dict] = None, base_space: Optional[str] = None,
             base_model: Optional[str] = None) -> dict[str, Any]:
    req: dict[str, Any] = {
        "objective": objective or {},
        "constraints": list(constraints),
        "optimizer": optimizer or {},
    }
    if pruning is not None:
        if base_space is None or base_model is None:
            raise ValueError("pruning needs base_space and base_model")
        req.update(pruning=pruning, base_space=str(base_space), base_model=base_model)
    return json.loads(_core.optimize(str(space_file), model, json.dumps(req)))


def classify(text: str, schema_file: Optional[str] = None) -> dict[str, Any]:
    return json.loads(_core.classify(text, str(schema_file or _REQUEST_SCHEMA)))


def parse(text: str, schema_file: Optional[str] = None) -> dict[str, Any]:
    return json.loads(_core.parse(text, str(schema_file or _REQUEST_SCHEMA)))


def adjust(parsed: dict[str, Any], adjustment: dict[str, Any], schema_file: Optional[str] = None) -> dict[str, Any]:
    return json.loads(_core.adjust(json.dumps(parsed), json.dumps(adjustment), str(schema_file or _REQUEST_SCHEMA)))


def make_plan(parsed: dict[str, Any], schema_file: Optional[str] = None) -> dict[str, Any]:
    return json.loads(_core.make_plan(json.dumps(parsed), str(schema_file or _REQUEST_SCHEMA)))


def execute_plan(plan: dict[str, Any]) -> dict[str, Any]:
    return json.loads(_core.execute_plan(json.dumps(plan), str(DATA_DIR / "schemas")))


def run_experiment(config_file: str, seeds: int = 0) -> dict[str, Any]:
    return json.loads(_core.run_experiment(str(config_file), seeds))
