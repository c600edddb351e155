"""Command-line front end.

::

    graphpass validate --graph G [--out DIR]
    graphpass audit    --graph G --model M [--out DIR] [--seed N]
    graphpass solve    --graph G --model M [--out DIR] [-K N] [--seed N] [--tol X] [--method newton|mp|both]
    graphpass verify   --graph G --model M --solutions FILE [--tol X]
    graphpass report   (--out DIR | --solutions FILE)

Exit codes: 0 success, 1 input error, 2 audit failure, 3 fewer solutions
than requested, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import io as gio
from .exceptions import (
    BadFarPoint,
    FoundFewer,
    NoConvergence,
    GraphpassError,
    MalformedFile,
    MissingInput,
    UnknownFlag,
)
from .graph import format_vertex_id, read_graph
from .model import audit, read_model
from .solver import SolverConfig, antipode, enumerate_solutions, mountain_pass, verify_state

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_AUDIT = 2
EXIT_FEWER = 3
EXIT_VERIFY = 4

COMMANDS = {
    "validate": ("graph", "out"),
    "audit": ("graph", "model", "out", "seed"),
    "solve": ("graph", "model", "out", "K", "seed", "tol", "method"),
    "verify": ("graph", "model", "solutions", "tol"),
    "report": ("out", "solutions"),
}
REQUIRED = {
    "validate": ("graph",),
    "audit": ("graph", "model"),
    "solve": ("graph", "model"),
    "verify": ("graph", "model", "solutions"),
    "report": (),
}
_FLAGS = {
    "graph": (("--graph",), {}),
    "model": (("--model",), {}),
    "solutions": (("--solutions",), {}),
    "out": (("--out",), {}),
    "K": (("-K",), {"type": int}),
    "seed": (("--seed",), {"type": int}),
    "tol": (("--tol",), {"type": float}),
    "method": (("--method",), {"choices": ("newton", "mp", "both")}),
}


@dataclasses.dataclass(frozen=True)
class RunManifest:
    command: str
    graph: str | None = None
    model: str | None = None
    solutions: str | None = None
    out: str | None = None
    K: int = 3
    seed: int | None = None
    tol: float = 1e-9
    method: str = "both"
    version: str = gio.SCHEMA


def parse_manifest(argv, files=None) -> RunManifest:
    """Resolve ``argv`` into a manifest.

    ``files`` is an optional predicate deciding whether an input path exists
    (default :func:`os.path.exists`).
    """
    exists = files or os.path.exists
    argv = list(argv)
    if not argv:
        raise MissingInput(f"no command given; expected one of {', '.join(COMMANDS)}")
    command, rest = argv[0], argv[1:]
    if command not in COMMANDS:
        raise UnknownFlag(f"unknown command {command!r}")
    parser = argparse.ArgumentParser(prog=f"graphpass {command}", add_help=False, exit_on_error=False,
                                     allow_abbrev=False)
    for key in COMMANDS[command]:
        flags, kw = _FLAGS[key]
        parser.add_argument(*flags, dest=key, default=None, **kw)
    try:
        ns, extra = parser.parse_known_args(rest)
    except argparse.ArgumentError as exc:
        raise UnknownFlag(str(exc)) from None
    if extra:
        raise UnknownFlag(f"unrecognised argument(s) for {command}: {' '.join(extra)}")
    values = {k: v for k, v in vars(ns).items() if v is not None}
    for key in REQUIRED[command]:
        if key not in values:
            raise MissingInput(f"{command} requires --{key}")
    if command == "report" and not ({"out", "solutions"} & values.keys()):
        raise MissingInput("report requires --out or --solutions")
    if command == "solve" and values.get("K", 1) < 1:
        raise UnknownFlag("-K must be a positive integer")
    if "tol" in values and not values["tol"] > 0:
        raise UnknownFlag("--tol must be positive")
    for key in ("graph", "model", "solutions"):
        if key in values and not exists(values[key]):
            raise MissingInput(f"--{key} path does not exist: {values[key]}")
    if command == "report" and "solutions" not in values:
        path = os.path.join(values["out"], "solutions.jsonl")
        if not exists(path):
            raise MissingInput(f"no solutions.jsonl in {values['out']}")
        values["solutions"] = path
    if command == "solve" and "out" not in values:
        values["out"] = "graphpass_out"
    return RunManifest(command=command, **values)


def _ensure_out(m: RunManifest):
    if m.out:
        os.makedirs(m.out, exist_ok=True)
    return m.out


def _validate(m, stdout):
    g = read_graph(m.graph)
    deg = g.degree
    info = {
        "schema": gio.SCHEMA,
        "n_vertices": g.n_vertices,
        "n_edges": g.n_edges,
        "connected": True,
        "mu_min": float(g.mu_min),
        "max_degree": int(deg.max()) if deg.size else 0,
        "tag": g.tag,
    }
    for k, v in info.items():
        print(f"{k:<12} {v}", file=stdout)
    if _ensure_out(m):
        gio.write_json(os.path.join(m.out, "validate.json"), info)
    return EXIT_OK


def _audit(m, stdout):
    g = read_graph(m.graph)
    model, plan = read_model(m.model, g)
    if m.seed is not None:
        plan = dataclasses.replace(plan, seed=m.seed)
    report = audit(g, model, plan)
    stdout.write(report.to_text())
    if _ensure_out(m):
        gio.write_json(os.path.join(m.out, "audit.json"), report.to_dict())
        with open(os.path.join(m.out, "audit.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
    return EXIT_OK if report.passed else EXIT_AUDIT


def _solve(m, stdout, argv):
    g = read_graph(m.graph)
    model, plan = read_model(m.model, g)
    seed = plan.seed if m.seed is None else m.seed
    report = audit(g, model, dataclasses.replace(plan, seed=seed))
    out = _ensure_out(m)
    gio.write_json(os.path.join(out, "audit.json"), report.to_dict())
    if not report.passed:
        stdout.write(report.to_text())
        return EXIT_AUDIT
    cfg = SolverConfig(tol_residual=m.tol, seed=seed)
    code = EXIT_OK
    if m.method == "mp":
        reps, antis = [], {}
        try:
            rec = mountain_pass(g, model, cfg, rid=1)
            reps.append(rec)
            if model.nonlinearity.claims_even:
                antis[1] = antipode(g, model, rec, tol=m.tol, rid=2)
        except (NoConvergence, BadFarPoint) as exc:
            print(f"mountain pass failed [{exc.reason}]: {exc}", file=stdout)
        if m.K > len(reps):
            code = EXIT_FEWER
    else:
        try:
            result = enumerate_solutions(g, model, cfg, m.K, run_mp=m.method == "both")
        except FoundFewer as exc:
            result = exc.records
            code = EXIT_FEWER
        reps, antis = list(result), result.antipodes
    ordered = []
    for r in reps:
        ordered.append(r)
        if r.id in antis:
            ordered.append(antis[r.id])
    gio.write_solutions(os.path.join(out, "solutions.jsonl"), g, ordered)
    gio.write_energy_table(os.path.join(out, "energies.csv"), [r.energy for r in reps])
    gio.write_diagnostics(os.path.join(out, "diagnostics.jsonl"), g, model, ordered)
    gio.write_run_meta(os.path.join(out, "run_meta.json"), argv, {"exit_code": code})
    for k, r in enumerate(reps, start=1):
        print(f"k={k} energy={r.energy!r} residual_sup={r.residual_sup:.3e} method={r.method}", file=stdout)
    if code == EXIT_FEWER:
        print(f"found {len(reps)} of {m.K} requested solution pairs", file=stdout)
    return code


def _verify(m, stdout):
    g = read_graph(m.graph)
    model, _ = read_model(m.model, g)
    sols = gio.read_solutions(m.solutions, g)
    if not sols:
        raise MalformedFile("no solutions in file", m.solutions)
    failed = False
    ids = g.vertex_ids
    for sid, state, _ in sols:
        res = verify_state(g, model, state, m.tol)
        if res["passed"]:
            print(f"solution {sid}: ok residual_sup={res['residual_sup']:.3e} energy={res['energy']!r}", file=stdout)
        else:
            failed = True
            vertex = format_vertex_id(ids[res["vertex_index"]])
            print(f"solution {sid}: FAIL residual_sup={res['residual_sup']:.3e} at vertex {vertex} "
                  f"(component {res['component']})", file=stdout)
    return EXIT_VERIFY if failed else EXIT_OK


def _report(m, stdout):
    import json

    rows = []
    with open(m.solutions, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                rows.append((obj["id"], float(obj["energy"]), float(obj["residual_sup"]), obj["method"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise MalformedFile("bad solution record", m.solutions, lineno) from None
    lines = [f"{'k':>3}  {'id':>4}  {'energy':>22}  {'residual_sup':>12}  method"]
    for k, (sid, e, r, meth) in enumerate(rows, start=1):
        lines.append(f"{k:>3}  {sid:>4}  {e:>22.15g}  {r:>12.3e}  {meth}")
    text = "\n".join(lines) + "\n"
    stdout.write(text)
    if m.out:
        _ensure_out(m)
        with open(os.path.join(m.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def run(manifest: RunManifest, stdout=None, argv=()) -> int:
    stdout = stdout or sys.stdout
    if manifest.command == "validate":
        return _validate(manifest, stdout)
    if manifest.command == "audit":
        return _audit(manifest, stdout)
    if manifest.command == "solve":
        return _solve(manifest, stdout, argv)
    if manifest.command == "verify":
        return _verify(manifest, stdout)
    return _report(manifest, stdout)


def main(argv=None, stdout=None, stderr=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    stderr = stderr or sys.stderr
    if argv and argv[0] in ("-h", "--help"):
        print(__doc__, file=stdout or sys.stdout)
        return EXIT_OK
    try:
        manifest = parse_manifest(argv)
        return run(manifest, stdout, argv)
    except GraphpassError as exc:
        print(f"error [{exc.reason}]: {exc}", file=stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error [io_error]: {exc}", file=stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
