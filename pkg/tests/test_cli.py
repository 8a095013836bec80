import csv
import io
import json
from pathlib import Path

import pytest

from ncwwlab.cli.main import bundled_scenarios, main
from ncwwlab.cli.runner import DISCLOSURES, run_scenario
from ncwwlab.cli.scenario import load_scenario, scenario_json_schema
from ncwwlab.errors import ParseError, ValidationError
from ncwwlab.harness import COLUMNS

SCENARIOS = bundled_scenarios()[0].parent


def write(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=1) if not isinstance(obj, str) else obj)
    return p


def minimal(**over):
    sc = json.loads((SCENARIOS / "identity_minimal.json").read_text())
    sc.update(over)
    return sc


def read_rows(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


class TestRun:
    def test_minimal_zero_cauchy(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", str(SCENARIOS / "identity_minimal.json"), "--out", str(out)]) == 0
        rows = read_rows(out / "rows.csv")
        assert rows and all(float(r["residual_cauchy_2"]) == 0 for r in rows)
        assert [int(r["n"]) for r in rows] == [2, 4, 8, 16]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["experiments"][0]["verdicts"] == {"one": "decayed"}

    def test_bit_identical(self, tmp_path):
        p = str(SCENARIOS / "unitary_rotation.json")
        assert main(["run", p, "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
        assert main(["run", p, "--out", str(tmp_path / "b"), "--seed", "3", "--threads", "4"]) == 0
        for f in ("rows.csv", "summary.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_seed_changes_random_output(self, tmp_path):
        p = str(write(tmp_path, minimal(initial_element={"kind": "random"}, seed=1,
                                        operator={"kind": "conjugation", "u": {"kind": "random_unitary"}})))
        main(["run", p, "--out", str(tmp_path / "a"), "--seed", "3"])
        main(["run", p, "--out", str(tmp_path / "b"), "--seed", "4"])
        assert (tmp_path / "a" / "rows.csv").read_bytes() != (tmp_path / "b" / "rows.csv").read_bytes()

    def test_csv_contract(self, tmp_path):
        out = tmp_path / "o"
        main(["run", str(SCENARIOS / "heat_torus.json"), "--out", str(out), "--n-max", "256"])
        raw = (out / "rows.csv").read_bytes()
        assert b"\r" not in raw
        rows = read_rows(out / "rows.csv")
        assert tuple(rows[0].keys()) == COLUMNS
        keys = [(r["experiment_id"], r["weight_id"], int(r["n"])) for r in rows]
        assert keys == sorted(keys)

    def test_header_disclosures(self, tmp_path):
        out = tmp_path / "o"
        main(["run", str(SCENARIOS / "heat_torus.json"), "--out", str(out), "--n-max", "64"])
        summary = json.loads((out / "summary.json").read_text())
        header = summary["header"]
        assert len(header["scenario_sha256"]) == 64
        assert header["csv_columns"] == list(COLUMNS)
        assert header["disclosures"] == list(DISCLOSURES)
        assert any("finite" in d for d in DISCLOSURES) and any("window" in d for d in DISCLOSURES)
        assert header["operator"]["disclosures"]
        assert "decay_threshold" in header["verdict_rule"]
        tol = header["tolerances"]
        for key in ("decay_threshold", "trace_budget", "unimodular_tol", "limsup_window"):
            assert key in tol

    def test_require_ds_failure(self, tmp_path, capsys):
        sc = minimal(operator={"kind": "matrix", "data": [[2, 0, 0, 0], [0, 2, 0, 0], [0, 0, 2, 0], [0, 0, 0, 2]]},
                     require_ds=True)
        p = write(tmp_path, sc)
        scenario, raw = load_scenario(p)
        with pytest.raises(ValidationError, match="l1_contraction"):
            run_scenario(scenario, raw)
        assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "l1_contraction" in capsys.readouterr().err

    def test_strict(self, tmp_path):
        p = str(SCENARIOS / "identity_minimal.json")
        assert main(["run", p, "--out", str(tmp_path / "a"), "--strict"]) == 0
        sc = minimal(weights=[{"id": "g", "kind": "random_phase", "seed": 1}],
                     experiments=[{"id": "w", "kind": "weighted", "weights": ["g"], "params": {"limit": "none"}}],
                     initial_element={"kind": "diag", "values": [1.0, 1.0]})
        assert main(["run", str(write(tmp_path, sc)), "--out", str(tmp_path / "b"), "--strict"]) == 3

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NCWWLAB_THREADS", "nope")
        assert main(["run", str(SCENARIOS / "identity_minimal.json"), "--out", str(tmp_path)]) == 2
        monkeypatch.setenv("NCWWLAB_THREADS", "3")
        assert main(["run", str(SCENARIOS / "identity_minimal.json"), "--out", str(tmp_path)]) == 0


class TestParseAndValidate:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_scenario(tmp_path / "nope.json")
        assert main(["describe", str(tmp_path / "nope.json")]) == 2

    def test_bad_json_reports_line(self, tmp_path):
        p = write(tmp_path, '{\n  "name": "x",\n  "n_max": ,\n}')
        with pytest.raises(ParseError, match="line 3"):
            load_scenario(p)

    def test_unknown_field_reports_path(self, tmp_path):
        sc = minimal(operator={"kind": "identity", "bogus": 1})
        with pytest.raises(ParseError, match="operator"):
            load_scenario(write(tmp_path, sc))

    def test_unknown_weight_reference(self, tmp_path):
        sc = minimal(experiments=[{"id": "e", "kind": "weighted", "weights": ["missing"]}])
        p = write(tmp_path, sc)
        assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_random_without_seed(self, tmp_path):
        sc = minimal(initial_element={"kind": "random"})
        scenario, raw = load_scenario(write(tmp_path, sc))
        with pytest.raises(ValidationError, match="seed"):
            run_scenario(scenario, raw)

    def test_schema(self, capsys):
        assert main(["schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert schema == json.loads(json.dumps(scenario_json_schema()))
        assert "operator" in schema["properties"]


class TestDescribe:
    def test_heat(self, capsys):
        assert main(["describe", str(SCENARIOS / "heat_torus.json")]) == 0
        out = capsys.readouterr().out
        assert "HS dimension 9" in out and "multiplier" in out

    def test_orbit_sharing_estimate(self, tmp_path, capsys):
        sc = minimal(weights=[{"id": "a", "kind": "constant", "value": 1.0},
                              {"id": "b", "kind": "rotation", "mu": {"turns": 0.25}},
                              {"id": "c", "kind": "von_mangoldt"}],
                     experiments=[{"id": "w", "kind": "weighted", "weights": ["a", "b", "c"]}],
                     n_max=2 ** 17)
        assert main(["describe", str(write(tmp_path, sc))]) == 0
        out = capsys.readouterr().out
        assert f"~{2 ** 17} T-applications (one shared orbit for 3 weights; {3 * 2 ** 17} without sharing)" in out


class TestSuite:
    def test_list(self, capsys):
        assert main(["suite", "--list"]) == 0
        names = capsys.readouterr().out.split()
        assert "heat_torus" in names and len(names) == len(list(SCENARIOS.glob("*.json")))

    def test_every_bundled_scenario_loads(self):
        for p in SCENARIOS.glob("*.json"):
            load_scenario(p)
