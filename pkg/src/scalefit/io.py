"""Dataset files and JSON report serialization.

The dataset format is a small CSV: header ``n_params,d_tokens,loss``
with optional trailing ``split`` and ``ray`` columns; numbers may use
decimal or scientific notation.  Reports are JSON objects with the four
sections ``fit``, ``diagnostics``, ``design``, and ``evaluation``; every
float is emitted with 17 significant digits so reports round-trip
losslessly and byte-identically, and non-finite sentinels are encoded
as the strings "inf", "-inf", and "nan".
"""

from __future__ import annotations

import csv
import io as _io
import math
from typing import Iterable

import numpy as np

from .dataset import ExperimentDataset, Observation, Split
from .errors import DatasetFormatError

SCHEMA_VERSION = "1"

_REQUIRED_COLUMNS = ("n_params", "d_tokens", "loss")
_OPTIONAL_COLUMNS = ("split", "ray")

_SPLIT_NAMES = {s.value: s for s in Split}


# Dataset CSV ---------------------------------------------------------------

def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"column {column!r} has malformed number {text!r}", line)
    if not math.isfinite(value):
        raise DatasetFormatError(f"column {column!r} must be finite, got {text!r}", line)
    return value


def parse_dataset(source) -> ExperimentDataset:
    """Read a dataset from a path or text stream.

    Rows keep file order; a missing split column defaults to train and a
    missing ray column is inferred as d/n.  Unknown columns and
    nonpositive values are rejected with the offending line number.
    """
    if hasattr(source, "read"):
        return _parse_stream(source)
    with open(source, "r", newline="") as handle:
        return _parse_stream(handle)


def _parse_stream(stream) -> ExperimentDataset:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file: header row is mandatory", 1)
    header = [h.strip() for h in header]
    if tuple(header[: len(_REQUIRED_COLUMNS)]) != _REQUIRED_COLUMNS:
        raise DatasetFormatError(
            f"header must start with {','.join(_REQUIRED_COLUMNS)}, got {','.join(header)}",
            1,
        )
    extras = header[len(_REQUIRED_COLUMNS):]
    allowed = [c for c in _OPTIONAL_COLUMNS if c in extras]
    if extras != allowed or len(set(extras)) != len(extras):
        unknown = [c for c in extras if c not in _OPTIONAL_COLUMNS]
        raise DatasetFormatError(
            f"unknown or misordered columns {unknown or extras}", 1
        )
    has_split = "split" in extras
    has_ray = "ray" in extras

    observations = []
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DatasetFormatError(
                f"expected {len(header)} fields, got {len(row)}", line
            )
        n = _parse_float(row[0], "n_params", line)
        d = _parse_float(row[1], "d_tokens", line)
        loss = _parse_float(row[2], "loss", line)
        for column, value in ("n_params", n), ("d_tokens", d), ("loss", loss):
            if value <= 0:
                raise DatasetFormatError(f"column {column!r} must be positive", line)
        idx = 3
        split = Split.TRAIN
        if has_split:
            name = row[idx].strip()
            idx += 1
            if name:
                if name not in _SPLIT_NAMES:
                    raise DatasetFormatError(
                        f"unknown split {name!r}; use one of {sorted(_SPLIT_NAMES)}", line
                    )
                split = _SPLIT_NAMES[name]
        ray = None
        if has_ray:
            text = row[idx].strip()
            if text:
                ray = _parse_float(text, "ray", line)
                if ray <= 0:
                    raise DatasetFormatError("column 'ray' must be positive", line)
        if ray is None:
            ray = d / n
        try:
            observations.append(Observation(n, d, loss, split, ray))
        except Exception as exc:
            raise DatasetFormatError(str(exc), line)
    if not observations:
        raise DatasetFormatError("at least one data row is required", 2)
    return ExperimentDataset(tuple(observations))


def _canon(value: float) -> str:
    return repr(float(value))


def dumps_dataset(ds: ExperimentDataset) -> str:
    """Canonical CSV text for a dataset (all five columns, shortest floats)."""
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(_REQUIRED_COLUMNS) + list(_OPTIONAL_COLUMNS))
    for o in ds.observations:
        writer.writerow(
            [_canon(o.n), _canon(o.d), _canon(o.loss), o.split.value,
             "" if o.ray is None else _canon(o.ray)]
        )
    return out.getvalue()


def write_dataset(ds: ExperimentDataset, dest) -> None:
    text = dumps_dataset(ds)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", newline="") as handle:
            handle.write(text)


# JSON reports --------------------------------------------------------------

def _format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _emit(value, pieces: list[str]) -> None:
    if value is None:
        pieces.append("null")
    elif isinstance(value, bool):
        pieces.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        pieces.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        pieces.append(_format_float(float(value)))
    elif isinstance(value, str):
        pieces.append('"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif isinstance(value, dict):
        pieces.append("{")
        for i, (key, item) in enumerate(value.items()):
            if i:
                pieces.append(",")
            _emit(str(key), pieces)
            pieces.append(":")
            _emit(item, pieces)
        pieces.append("}")
    elif isinstance(value, (list, tuple)) or isinstance(value, np.ndarray):
        seq = value.tolist() if isinstance(value, np.ndarray) else value
        pieces.append("[")
        for i, item in enumerate(seq):
            if i:
                pieces.append(",")
            _emit(item, pieces)
        pieces.append("]")
    else:
        raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_report(report: dict) -> str:
    """Serialize a report dict with 17-significant-digit floats."""
    pieces: list[str] = []
    _emit(report, pieces)
    return "".join(pieces) + "\n"


def report_skeleton(config: dict) -> dict:
    """Empty report with the standard sections and resolved configuration."""
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "fit": None,
        "diagnostics": None,
        "design": None,
        "evaluation": None,
    }


_NUMBER_OR_SENTINEL = {
    "oneOf": [
        {"type": "number"},
        {"type": "string", "enum": ["inf", "-inf", "nan", "unreliable"]},
        {"type": "null"},
    ]
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config", "fit", "diagnostics", "design", "evaluation"],
    "properties": {
        "schema_version": {"type": "string"},
        "config": {"type": "object"},
        "fit": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["law", "params", "objective", "converged", "restart_index"],
                    "properties": {
                        "law": {"type": "string"},
                        "params": {
                            "type": "object",
                            "additionalProperties": _NUMBER_OR_SENTINEL,
                        },
                        "objective": _NUMBER_OR_SENTINEL,
                        "converged": {"type": "boolean"},
                        "restart_index": {"type": "integer"},
                    },
                },
            ]
        },
        "diagnostics": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["eigenvalues", "kappa_full", "kappa_scale_pair",
                                  "kappa_full_equilibrated", "sloppy_vector"],
                    "properties": {
                        "eigenvalues": {"type": "array", "items": _NUMBER_OR_SENTINEL},
                        "kappa_full": _NUMBER_OR_SENTINEL,
                        "kappa_scale_pair": _NUMBER_OR_SENTINEL,
                        "kappa_full_equilibrated": _NUMBER_OR_SENTINEL,
                        "sloppy_vector": {"type": "array", "items": {"type": "number"}},
                        "epsilon": _NUMBER_OR_SENTINEL,
                        "ci": {"type": ["object", "null"]},
                    },
                },
            ]
        },
        "design": {"type": ["object", "null"]},
        "evaluation": {"type": ["object", "null"]},
    },
}


def _json_safe(x: float) -> float | str:
    if isinstance(x, float) and not math.isfinite(x):
        if math.isnan(x):
            return "nan"
        return "inf" if x > 0 else "-inf"
    return x


def fit_section(result) -> dict:
    return {
        "law": result.params.kind.value,
        "params": {k: _json_safe(v) for k, v in result.params.named().items()},
        "objective": _json_safe(float(result.objective)),
        "converged": bool(result.converged),
        "restart_index": int(result.restart_index),
        "residual_norm": _json_safe(float(np.linalg.norm(result.residuals))),
        "n_train": int(len(result.residuals)),
    }


def diagnostics_section(diag, ci=None) -> dict:
    out = {
        "eigenvalues": [_json_safe(float(v)) for v in diag.eigenvalues],
        "kappa_full": _json_safe(diag.kappa_full),
        "kappa_scale_pair": _json_safe(diag.kappa_scale_pair),
        "kappa_full_equilibrated": _json_safe(diag.kappa_full_equilibrated),
        "sloppy_vector": [float(v) for v in diag.sloppy_vector],
        "epsilon": diag.epsilon,
        "lambda_min_clamped": bool(diag.clamped),
        "ci": None,
    }
    if ci is not None:
        out["ci"] = {
            "sigma": ci.sigma,
            "half_widths": {
                name: _json_safe(float(w))
                for name, w in zip(ci.param_names, ci.half_widths)
            },
            "inflation_ratio": _json_safe(ci.inflation_ratio)
            if ci.inflation_ratio is not None
            else None,
            "inflation_ratio_relative": _json_safe(ci.inflation_ratio_relative)
            if ci.inflation_ratio_relative is not None
            else None,
            "unreliable": "unreliable" if ci.unreliable else False,
            "kappa": _json_safe(ci.kappa),
        }
    return out


def design_section(plan=None, diversity=None, regime=None) -> dict:
    out: dict = {}
    if plan is not None:
        out.update(
            {
                "ratios": list(plan.ratios),
                "sizes": list(plan.sizes),
                "allocation": list(plan.allocation),
                "r_min": _json_safe(plan.r_min),
                "feasible": plan.feasible,
                "predicted_kappa": _json_safe(plan.predicted_kappa),
                "measured_kappa": _json_safe(plan.measured_kappa),
                "kappa_one": _json_safe(plan.kappa_one),
                "verification_passed": plan.verification_passed,
                "note": plan.note,
            }
        )
        diversity = diversity or plan.diversity
    if diversity is not None:
        out["diversity"] = {
            "ratios": list(diversity.ratios),
            "beta_eff": diversity.beta_eff,
            "kappa_target": diversity.kappa_target,
            "s1": diversity.s1,
            "s2": diversity.s2,
            "v_k": diversity.v_k,
            "tau_k": diversity.tau_k,
            "passes": diversity.passes,
            "predicted_kappa": _json_safe(diversity.predicted_kappa),
        }
    if regime is not None:
        out["regime"] = regime.value
    return out


def evaluation_section(metrics: Iterable = (), sweep=None, win=None) -> dict:
    out: dict = {}
    split_metrics = {}
    for m in metrics:
        split_metrics[m.split] = {
            "r2": m.r2,
            "rmse": m.rmse,
            "count": m.count,
        }
    if split_metrics:
        out["splits"] = split_metrics
    if win is not None:
        out["win_rate"] = {
            "fraction": win.fraction,
            "wins": win.wins,
            "total": win.total,
            "wilson_low": win.wilson_low,
            "wilson_high": win.wilson_high,
        }
    if sweep is not None:
        out["sweep"] = sweep
    return out
