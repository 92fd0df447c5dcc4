"""Readers for the CSV/JSON files the evaluation pipeline emits.

Column layouts are validated up front so a schema drift fails loudly with
exit code 2 rather than producing an empty figure.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


class SchemaError(ValueError):
    pass


def _require_columns(path, fieldnames, required):
    missing = [c for c in required if c not in (fieldnames or [])]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")


def read_records(path: str | Path) -> dict[str, dict[str, list[float]]]:
    """records.csv -> {method: {"d_true": [...], "d_pred": [...]}}"""
    out: dict[str, dict[str, list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(path, reader.fieldnames, ["method", "d_true", "d_pred"])
        for row in reader:
            slot = out.setdefault(row["method"], {"d_true": [], "d_pred": []})
            slot["d_true"].append(float(row["d_true"]))
            slot["d_pred"].append(float(row["d_pred"]))
    if not out:
        raise SchemaError(f"{path}: no records")
    return out


def read_summary(path: str | Path) -> dict[str, dict]:
    summary = json.loads(Path(path).read_text())
    if not isinstance(summary, dict) or not summary:
        raise SchemaError(f"{path}: expected a method -> metrics mapping")
    return summary


def read_cdf(path: str | Path) -> dict[str, tuple[list[float], list[float]]]:
    """cdf.csv -> {method: (thresholds, cumulative_fractions)}"""
    out: dict[str, tuple[list[float], list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(
            path, reader.fieldnames, ["method", "threshold", "cumulative_fraction"]
        )
        for row in reader:
            thresholds, fractions = out.setdefault(row["method"], ([], []))
            thresholds.append(float(row["threshold"]))
            fractions.append(float(row["cumulative_fraction"]))
    if not out:
        raise SchemaError(f"{path}: no curves")
    return out


def read_timing(path: str | Path) -> dict[str, dict]:
    """timing.csv -> {method: {"N": [...], "seconds": [...], "slope": float}}"""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(
            path, reader.fieldnames, ["method", "N", "median_seconds", "slope"]
        )
        for row in reader:
            slot = out.setdefault(
                row["method"], {"N": [], "seconds": [], "slope": float(row["slope"])}
            )
            slot["N"].append(int(row["N"]))
            slot["seconds"].append(float(row["median_seconds"]))
    if not out:
        raise SchemaError(f"{path}: no timings")
    return out
