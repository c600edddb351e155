import io
import json
import os
import subprocess
import sys

import pytest

from graphpass.cli import RunManifest, main, parse_manifest
from graphpass.exceptions import MalformedFile, MissingInput, UnknownFlag
from graphpass.graph import generate, read_graph
from graphpass.model import read_model

PATH5 = "graph 5\n" + "".join(f"v {i} 1\n" for i in range(5)) + "".join(f"e {i} {i + 1} 1\n" for i in range(4))
POLY = "a1 1\na2 1\nb1 1\nb2 1\npotential V1 const 1\npotential V2 const 1\nnonlinearity remark11_poly\n"
QUARTIC = "a1 1\na2 1\nb1 0\nb2 0\npotential V1 const 1\npotential V2 const 1\nnonlinearity power_pq p=4 q=none\n"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(map(str, argv)), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def files(tmp_path):
    (tmp_path / "g5.txt").write_text(PATH5)
    (tmp_path / "g1.txt").write_text("graph 1\nv 0 1.0\n")
    (tmp_path / "poly.txt").write_text(POLY)
    (tmp_path / "quartic.txt").write_text(QUARTIC)
    return tmp_path


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("solved")
    (d / "g5.txt").write_text(PATH5)
    (d / "poly.txt").write_text(POLY)
    code, out, _ = run("solve", "--graph", d / "g5.txt", "--model", d / "poly.txt", "--out", d / "out", "-K", 3)
    assert code == 0, out
    return d


class TestParse:
    def test_solve_flags(self):
        m = parse_manifest(["solve", "--graph", "g.txt", "--model", "m.txt", "-K", "3", "--seed", "7"],
                           files=lambda p: True)
        assert (m.command, m.K, m.seed, m.graph, m.model) == ("solve", 3, 7, "g.txt", "m.txt")
        assert m.tol == 1e-9 and m.method == "both" and m.version == "graphpass/1"

    def test_missing_model(self):
        with pytest.raises(MissingInput):
            parse_manifest(["solve", "--graph", "g.txt"], files=lambda p: True)

    def test_missing_path(self):
        with pytest.raises(MissingInput):
            parse_manifest(["validate", "--graph", "nope.txt"], files=lambda p: False)

    @pytest.mark.parametrize("argv", [
        ["solve", "--graph", "g", "--model", "m", "--bogus", "1"],
        ["frobnicate"],
        ["solve", "--graph", "g", "--model", "m", "--method", "bfgs"],
        ["solve", "--graph", "g", "--model", "m", "-K", "0"],
        ["verify", "--graph", "g", "--model", "m", "--solutions", "s", "-K", "2"],
        ["solve", "--graph", "g", "--model", "m", "--tol", "-1"],
    ])
    def test_unknown_or_invalid(self, argv):
        with pytest.raises(UnknownFlag):
            parse_manifest(argv, files=lambda p: True)

    def test_deterministic(self):
        argv = ["audit", "--graph", "g", "--model", "m"]
        assert parse_manifest(argv, files=lambda p: True) == parse_manifest(argv, files=lambda p: True)

    def test_report_resolves_solutions(self, tmp_path):
        m = parse_manifest(["report", "--out", str(tmp_path)], files=lambda p: True)
        assert m.solutions == os.path.join(str(tmp_path), "solutions.jsonl")
        assert isinstance(m, RunManifest)

    def test_model_duplicate_key(self, files):
        (files / "dup.txt").write_text(POLY + "b2 3\n")
        with pytest.raises(MalformedFile) as exc:
            read_model(files / "dup.txt", read_graph(files / "g5.txt"))
        assert exc.value.line == 8
        code, _, err = run("audit", "--graph", files / "g5.txt", "--model", files / "dup.txt")
        assert code == 1
        assert "malformed_file" in err and "dup.txt:8:" in err


class TestCommands:
    def test_validate(self, files):
        code, out, _ = run("validate", "--graph", files / "g5.txt", "--out", files / "v")
        assert code == 0
        info = json.loads((files / "v" / "validate.json").read_text())
        assert info["n_vertices"] == 5 and info["n_edges"] == 4

    def test_audit_pass_and_fail(self, files):
        assert run("audit", "--graph", files / "g5.txt", "--model", files / "poly.txt")[0] == 0
        code, out, _ = run("audit", "--graph", files / "g5.txt", "--model", files / "quartic.txt", "--out", files / "a")
        assert code == 0
        assert json.loads((files / "a" / "audit.json").read_text())["passed"] is True

    def test_scalar_energy_table(self, files):
        code, _, _ = run("solve", "--graph", files / "g1.txt", "--model", files / "quartic.txt", "--out", files / "s",
                         "-K", 1)
        assert code == 0
        assert (files / "s" / "energies.csv").read_text() == "k,energy\n1,0.25\n"

    def test_found_fewer_exit(self, files):
        code, out, _ = run("solve", "--graph", files / "g1.txt", "--model", files / "quartic.txt", "--out",
                           files / "s", "-K", 2)
        assert code == 3
        assert "found 1 of 2" in out
        assert (files / "s" / "energies.csv").read_text() == "k,energy\n1,0.25\n"

    def test_audit_failure_exit(self, files, monkeypatch):
        import graphpass.cli as cli
        from graphpass.model import AuditReport, HypothesisResult

        monkeypatch.setattr(cli, "audit", lambda *a, **k: AuditReport(
            {"F6": HypothesisResult("F6", "fails_with_witness", {"s": 1.0, "t": 0.0})}, {}, []))
        code, _, _ = run("solve", "--graph", files / "g1.txt", "--model", files / "quartic.txt", "--out", files / "x")
        assert code == 2

    def test_mp_method(self, files):
        code, out, _ = run("solve", "--graph", files / "g1.txt", "--model", files / "quartic.txt", "--out", files / "mp",
                           "--method", "mp", "-K", 1)
        assert code == 0
        assert "method=mountain_pass" in out

    def test_malformed_graph_exit(self, files):
        (files / "bad.txt").write_text("graph 2\nv 0 1\nv 0 1\n")
        code, _, err = run("validate", "--graph", files / "bad.txt")
        assert code == 1
        assert err.startswith("error [")


class TestRoundTrip:
    def test_verify_passes(self, solved):
        code, out, _ = run("verify", "--graph", solved / "g5.txt", "--model", solved / "poly.txt",
                           "--solutions", solved / "out" / "solutions.jsonl")
        assert code == 0
        assert out.count(": ok") == 6

    @pytest.mark.parametrize("vertex", range(5))
    @pytest.mark.parametrize("component", ["u", "v"])
    def test_perturbation_names_vertex(self, solved, tmp_path, vertex, component):
        lines = (solved / "out" / "solutions.jsonl").read_text().splitlines()
        obj = json.loads(lines[0])
        k = obj["vertices"].index(str(vertex))
        obj[component][k] += 0.1
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        code, out, _ = run("verify", "--graph", solved / "g5.txt", "--model", solved / "poly.txt", "--solutions", path)
        assert code == 4
        assert f"at vertex {vertex} (component {component})" in out

    def test_byte_stable(self, solved):
        d2 = solved / "out2"
        code, _, _ = run("solve", "--graph", solved / "g5.txt", "--model", solved / "poly.txt", "--out", d2, "-K", 3)
        assert code == 0
        for name in ("solutions.jsonl", "energies.csv", "diagnostics.jsonl", "audit.json"):
            assert (solved / "out" / name).read_bytes() == (d2 / name).read_bytes(), name
        meta = json.loads((d2 / "run_meta.json").read_text())
        assert "finished_at" in meta

    def test_exports(self, solved):
        recs = [json.loads(x) for x in (solved / "out" / "solutions.jsonl").read_text().splitlines()]
        assert len(recs) == 6
        assert all(r["schema"] == "graphpass/1" and r["residual_sup"] <= 1e-9 for r in recs)
        diags = [json.loads(x) for x in (solved / "out" / "diagnostics.jsonl").read_text().splitlines()]
        assert all(d["cerami_gap"] <= 1e-9 * (1 + abs(d["energy_total"])) for d in diags)
        assert all(d["evenness_gap"] <= 1e-10 * (1 + abs(d["energy_total"])) for d in diags)

    def test_report(self, solved):
        code, out, _ = run("report", "--out", solved / "out")
        assert code == 0
        rows = out.strip().splitlines()[1:]
        energies = [float(r.split()[2]) for r in rows]
        assert len(energies) == 6
        assert energies == sorted(energies)
        assert (solved / "out" / "report.txt").exists()

    def test_module_entry_point(self, solved):
        proc = subprocess.run([sys.executable, "-m", "graphpass", "report", "--solutions",
                               str(solved / "out" / "solutions.jsonl")], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "energy" in proc.stdout


def test_help():
    code, out, _ = run("--help")
    assert code == 0 and "Exit codes" in out


def test_no_command():
    code, _, err = run()
    assert code == 1 and "missing_input" in err


def test_generated_graph_file(tmp_path):
    from graphpass.graph import write_graph

    write_graph(generate("path", 3), tmp_path / "g.txt")
    assert run("validate", "--graph", tmp_path / "g.txt")[0] == 0
