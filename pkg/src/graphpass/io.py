"""Machine-readable exports: solution records, energy table, diagnostics.

JSON is written with sorted keys and ``repr``-exact floats so identical runs
produce identical bytes; wall-clock data goes only to ``run_meta.json``.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import sys
import time

import numpy as np

from . import __version__
from .energy import StatePair, diagnostics_record
from .exceptions import MalformedFile
from .graph import TruncatedGraph, format_vertex_id

SCHEMA = "graphpass/1"

__all__ = [
    "SCHEMA",
    "solution_to_dict",
    "write_solutions",
    "read_solutions",
    "write_energy_table",
    "write_diagnostics",
    "write_json",
    "write_run_meta",
]


def _vertex_labels(g):
    base = g.interior if isinstance(g, TruncatedGraph) else g
    return [format_vertex_id(x) for x in base.vertex_ids]


def solution_to_dict(g, record) -> dict:
    return {
        "schema": SCHEMA,
        "id": record.id,
        "vertices": _vertex_labels(g),
        "u": [float(a) for a in record.state.u],
        "v": [float(a) for a in record.state.v],
        "energy": float(record.energy),
        "residual_sup": float(record.residual_sup),
        "method": record.method,
        "is_trivial": bool(record.is_trivial),
        "lineage": {
            "deflated_against": list(record.deflated_against),
            "antipode_of": record.antipode_of,
            "iterations": int(record.iterations),
        },
    }


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def write_solutions(path, g, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(solution_to_dict(g, rec)) + "\n")


def read_solutions(path, g) -> list:
    """Parse a solutions file for ``g``; returns ``[(id, StatePair, record_dict), ...]``.

    Values are matched to vertices by label, so the file may list them in any order.
    """
    labels = _vertex_labels(g)
    pos = {x: k for k, x in enumerate(labels)}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedFile(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(obj, dict):
                raise MalformedFile("expected a JSON object", path, lineno)
            if obj.get("schema") != SCHEMA:
                raise MalformedFile(f"schema must be {SCHEMA!r}, got {obj.get('schema')!r}", path, lineno)
            for key in ("vertices", "u", "v"):
                if not isinstance(obj.get(key), list):
                    raise MalformedFile(f"missing list field {key!r}", path, lineno)
            verts = obj["vertices"]
            if sorted(verts) != sorted(labels) or len(verts) != len(labels):
                raise MalformedFile("vertex labels do not match the graph", path, lineno)
            if len(obj["u"]) != len(verts) or len(obj["v"]) != len(verts):
                raise MalformedFile("u and v must have one value per vertex", path, lineno)
            u = np.zeros(len(labels))
            v = np.zeros(len(labels))
            try:
                for x, a, b in zip(verts, obj["u"], obj["v"]):
                    u[pos[x]] = float(a)
                    v[pos[x]] = float(b)
            except (TypeError, ValueError):
                raise MalformedFile("non-numeric solution value", path, lineno) from None
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise MalformedFile("non-finite solution value", path, lineno)
            out.append((obj.get("id", len(out)), StatePair(u, v), obj))
    return out


def write_energy_table(path, energies) -> None:
    """``k,energy`` rows, ``k`` counting from 1."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "energy"])
        for k, e in enumerate(energies, start=1):
            w.writerow([k, repr(float(e))])


def write_diagnostics(path, g, model, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {"id": rec.id}
            row.update(diagnostics_record(g, model, rec.state))
            row = {k: (float(v) if isinstance(v, (float, np.floating)) and math.isfinite(v) else v)
                   for k, v in row.items()}
            fh.write(_dumps(row) + "\n")


def write_run_meta(path, argv, extra=None) -> None:
    meta = {
        "schema": SCHEMA,
        "version": __version__,
        "argv": list(argv),
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    meta.update(extra or {})
    write_json(path, meta)
