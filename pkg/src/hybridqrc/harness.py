"""Declarative experiment specs, sweep execution, and result persistence."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .experiments import TASK_DEFAULTS, child_seed, run_cell

OUTPUT_ENV = "HYBRIDQRC_OUTPUT_DIR"

_RESERVOIR_KEYS = (
    "n_sites",
    "multiplexity",
    "drive",
    "input_scale",
    "nonlinearity",
    "site_cutoff",
    "max_step",
    "tau",
    "t_init",
)

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hybridqrc experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {"enum": sorted(TASK_DEFAULTS)},
        "reservoir": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sites": {"type": "integer", "minimum": 1},
                "multiplexity": {"type": "integer", "minimum": 1},
                "drive": {"type": "number"},
                "input_scale": {"type": "number"},
                "nonlinearity": {"type": "number"},
                "site_cutoff": {"type": ["integer", "null"], "minimum": 2},
                "max_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.01},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "t_init": {"type": "number", "minimum": 0},
            },
        },
        "lengths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train": {"type": "integer", "minimum": 1},
                "eval": {"type": "integer", "minimum": 1},
            },
        },
        "params": {"type": "object"},
        "sweep": {
            "type": "object",
            "additionalProperties": {"type": "array", "minItems": 1},
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "paired": {"type": "boolean"},
        "output_dir": {"type": ["string", "null"]},
    },
}


class SpecError(ValueError):
    """Unreadable or invalid experiment spec; the message lists every problem found."""


@dataclass
class ExperimentSpec:
    task: str
    params: dict
    sweep: dict = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    paired: bool = False  # same seeds at every sweep point (common random numbers)
    output_dir: str | None = None

    def points(self) -> list[dict]:
        """Cartesian product of the sweep grids, first key varying slowest."""
        if not self.sweep:
            return [{}]
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]

    def cell_seed(self, point: int, trial: int) -> np.random.SeedSequence:
        return child_seed(self.seed, 0 if self.paired else point, trial)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "params": dict(self.params),
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "trials": self.trials,
            "seed": self.seed,
            "paired": self.paired,
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _length_keys(task: str) -> tuple[str, str]:
    return ("train_length", "closed_steps") if task == "cv-closed-loop" else ("train_length", "eval_length")


def spec_from_dict(raw) -> ExperimentSpec:
    """Validate a parsed document and fill every unspecified parameter from the task defaults."""
    if not isinstance(raw, dict):
        raise SpecError("spec must be a mapping with at least a 'task' key")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise SpecError("spec validation failed:\n" + "\n".join(lines))
    task = raw["task"]
    defaults = TASK_DEFAULTS[task]
    flat = {}
    problems = []
    for key, value in raw.get("reservoir", {}).items():
        if key not in defaults:
            problems.append(f"reservoir/{key}: not used by task {task}")
        flat[key] = value
    train_key, eval_key = _length_keys(task)
    lengths = raw.get("lengths", {})
    if "train" in lengths:
        flat[train_key] = lengths["train"]
    if "eval" in lengths:
        flat[eval_key] = lengths["eval"]
    for key, value in raw.get("params", {}).items():
        if key not in defaults:
            problems.append(f"params/{key}: unknown parameter for task {task}")
        flat[key] = value
    sweep = {k: list(v) for k, v in raw.get("sweep", {}).items()}
    for key in sweep:
        if key not in defaults:
            problems.append(f"sweep/{key}: unknown parameter for task {task}")
    params = {**defaults, **flat}
    problems += _check_values(params, sweep)
    if problems:
        raise SpecError("spec validation failed:\n" + "\n".join(f"  {p}" for p in problems))
    return ExperimentSpec(
        task=task,
        params=params,
        sweep=sweep,
        trials=int(raw.get("trials", 1)),
        seed=int(raw.get("seed", 0)),
        paired=bool(raw.get("paired", False)),
        output_dir=raw.get("output_dir"),
    )


def _check_values(params: dict, sweep: dict) -> list[str]:
    """Range checks on the base parameters and on every sweep value."""
    rules = {
        "multiplexity": lambda v: isinstance(v, int) and v >= 1,
        "n_sites": lambda v: isinstance(v, int) and v >= 1,
        "train_length": lambda v: isinstance(v, int) and v > 0,
        "eval_length": lambda v: isinstance(v, int) and v > 0,
        "closed_steps": lambda v: isinstance(v, int) and v > 0,
        "trials": lambda v: isinstance(v, int) and v >= 1,
        "nodes": lambda v: isinstance(v, int) and v >= 1,
        "d_eff": lambda v: isinstance(v, int) and v >= 2,
        "d_max": lambda v: isinstance(v, int) and v >= 0,
        "q_a": lambda v: 0 <= v <= 1,
        "q_b": lambda v: 0 <= v <= 1,
    }
    out = []
    for key, ok in rules.items():
        values = [(key, params[key])] if key in params else []
        values += [(f"sweep/{key}[{i}]", v) for i, v in enumerate(sweep.get(key, []))]
        for where, v in values:
            try:
                good = ok(v)
            except TypeError:
                good = False
            if not good:
                out.append(f"{where}: invalid value {v!r}")
    return out


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise SpecError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return spec_from_dict(raw)


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


# ---------------------------------------------------------------- execution


@dataclass
class ResultTable:
    """Long-form metric rows plus run metadata."""

    task: str
    param_names: list
    rows: list = field(default_factory=list)  # dicts: point, params, trial, metric, value
    failures: list = field(default_factory=list)  # dicts: point, params, trial, error
    diagnostics: list = field(default_factory=list)  # physicality reports per cell
    metadata: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)  # (point, trial) -> {name: array}

    def summary(self) -> list[dict]:
        """Mean and sample standard deviation per (sweep point, metric)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["point"], r["metric"]), (r["params"], []))[1].append(r["value"])
        out = []
        for (point, metric), (params, vals) in sorted(groups.items(), key=lambda kv: kv[0]):
            v = np.asarray(vals, dtype=float)
            out.append(
                {
                    "point": point,
                    "params": params,
                    "metric": metric,
                    "mean": float(np.mean(v)),
                    "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                    "n": len(v),
                }
            )
        return out

    def values(self, metric: str, **where) -> np.ndarray:
        """Per-trial values of ``metric`` at the sweep point matching ``where``."""
        return np.array(
            [
                r["value"]
                for r in sorted(self.rows, key=lambda r: r["trial"])
                if r["metric"] == metric and all(r["params"].get(k) == v for k, v in where.items())
            ]
        )

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "param_names": self.param_names,
            "rows": self.rows,
            "failures": self.failures,
            "diagnostics": self.diagnostics,
            "summary": self.summary(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ResultTable":
        return cls(
            task=doc["task"],
            param_names=list(doc["param_names"]),
            rows=list(doc["rows"]),
            failures=list(doc["failures"]),
            diagnostics=list(doc.get("diagnostics", [])),
            metadata=dict(doc["metadata"]),
        )


def _run_one(task: str, params: dict, seed: np.random.SeedSequence):
    """Worker body; never raises, so a failing cell cannot take others down."""
    try:
        res = run_cell(task, params, seed)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}
    report = asdict(res.report) if res.report is not None else None
    if report is not None:
        report = {k: float(v) for k, v in report.items()}
    return {"ok": True, "metrics": {k: float(v) for k, v in res.metrics.items()}, "report": report, "arrays": res.arrays}


def run_experiment(spec: ExperimentSpec, jobs: int = 1, keep_arrays: bool = True) -> ResultTable:
    """Evaluate every (sweep point, trial) cell; failed cells are recorded and skipped."""
    from . import __version__

    points = spec.points()
    cells = [(i, t) for i in range(len(points)) for t in range(spec.trials)]
    payload = [(spec.task, {**spec.params, **points[i]}, spec.cell_seed(i, t)) for i, t in cells]
    started = time.time()
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, *zip(*payload)))
    else:
        outcomes = [_run_one(*args) for args in payload]
    table = ResultTable(task=spec.task, param_names=list(spec.sweep))
    for (i, t), out in zip(cells, outcomes):
        point = _plain(points[i])
        if not out["ok"]:
            table.failures.append({"point": i, "params": point, "trial": t, "error": out["error"], "traceback": out["traceback"]})
            continue
        for metric, value in out["metrics"].items():
            table.rows.append({"point": i, "params": point, "trial": t, "metric": metric, "value": value})
        if out["report"] is not None:
            table.diagnostics.append({"point": i, "trial": t, **out["report"]})
        if keep_arrays and out["arrays"]:
            table.arrays[(i, t)] = out["arrays"]
    table.metadata = {
        "config_hash": spec.config_hash(),
        "code_version": __version__,
        "wall_time": time.time() - started,
        "cells": len(cells),
        "failed_cells": len(table.failures),
        "spec": spec.to_dict(),
    }
    return table


def _plain(d: dict) -> dict:
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in d.items()}


# ---------------------------------------------------------------- output


def write_grid(path, grid: np.ndarray) -> None:
    """One 61 x 61 Wigner grid as text: row i holds x_i, columns run over p."""
    np.savetxt(path, np.asarray(grid, dtype=float), fmt="%.10e")


def emit_outputs(table: ResultTable, out_dir, formats=("csv", "json", "grids")) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    written = []
    if "csv" in formats:
        path = out / "results.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", *table.param_names, "trial", "metric", "value"])
            for r in table.rows:
                w.writerow([table.task, *(r["params"][k] for k in table.param_names), r["trial"], r["metric"], repr(r["value"])])
        written.append(path)
    if "json" in formats:
        path = out / "results.json"
        path.write_text(json.dumps(table.to_json(), indent=2, default=_json_default))
        written.append(path)
    if "grids" in formats:
        for (i, t), arrays in sorted(table.arrays.items()):
            for name, arr in arrays.items():
                arr = np.asarray(arr)
                if arr.ndim == 3 and arr.shape[1:] == (61, 61):
                    gdir = out / "grids"
                    gdir.mkdir(exist_ok=True)
                    for k, g in enumerate(arr):
                        path = gdir / f"p{i}_t{t}_{name}_{k}.txt"
                        write_grid(path, g)
                        written.append(path)
            path = out / f"arrays_p{i}_t{t}.npz"
            np.savez(path, **{k: np.asarray(v) for k, v in arrays.items()})
            written.append(path)
    return written


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def resolve_output_dir(cli_value: str | None, spec: ExperimentSpec) -> Path:
    """Command line first, then the environment override, then the spec, then ./results."""
    return Path(cli_value or os.environ.get(OUTPUT_ENV) or spec.output_dir or "results")
