import json

import pytest

import app
from utils.report import read_csv


def _run(tmp_path, *args):
    return app.main(list(args) + ["--out", str(tmp_path), "--no-progress"])


def _json_from(out):
    return json.loads(out[out.index('{\n  "meta"'):])


def test_design_build_mub(tmp_path, capsys):
    assert _run(tmp_path, "design", "build", "--kind", "mub", "--d", "3", "--seed", "1", "--json") == 0
    doc = _json_from(capsys.readouterr().out)
    assert doc["meta"]["command"] == "design"
    assert doc["m"] == 12
    assert len(doc["bases"]) == 4
    assert doc["report"]["is_design"] is True
    assert (tmp_path / "latest_design.json").exists()


def test_design_check_rejects_computational_basis(tmp_path, capsys):
    f = tmp_path / "basis.json"
    f.write_text(json.dumps({"vectors": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}), encoding="utf-8")
    assert _run(tmp_path, "design", "check", "--file", str(f), "--seed", "1") == 1
    assert "❌" in capsys.readouterr().out


def test_design_check_needs_file(tmp_path):
    assert _run(tmp_path, "design", "check", "--seed", "1") == 2


def test_sic_without_fiducial_is_usage_error(tmp_path, capsys):
    assert _run(tmp_path, "design", "build", "--kind", "sic", "--d", "5", "--seed", "1") == 2
    assert "approx" in capsys.readouterr().err


def test_qfi_matches_closed_form(tmp_path, capsys):
    assert _run(tmp_path, "qfi", "--d", "2", "--n", "1", "2", "--state", "mub", "--seed", "1", "--json") == 0
    rows = _json_from(capsys.readouterr().out)["rows"]
    assert [r["trace_inverse"] for r in rows] == pytest.approx([1.5, 0.5625])
    assert rows[1]["defect"] == pytest.approx(0.0, abs=1e-10)
    df = read_csv(next(tmp_path.glob("qfi_*.csv")))
    assert list(df["n"]) == [1, 2]


def test_qfi_product_family(tmp_path, capsys):
    assert _run(tmp_path, "qfi", "--d", "2", "--n", "2", "--state", "product", "--seed", "1", "--json") == 0
    row = _json_from(capsys.readouterr().out)["rows"][0]
    assert row["trace_inverse"] == pytest.approx(1.125)
    assert row["gap"] > 0.5
    assert row["defect"] > 0.1


def test_approx_writes_histogram(tmp_path):
    assert _run(tmp_path, "approx", "--d", "2", "--n", "2", "--repeats", "10", "--seed", "3") == 0
    svg = next(tmp_path.glob("approx_*.svg")).read_text(encoding="utf-8")
    assert "<metadata>" in svg
    assert len(read_csv(next(tmp_path.glob("approx_*.csv")))) == 10


def test_simulate_twice_diffs_against_previous(tmp_path, capsys):
    args = ["simulate", "--d", "2", "--n", "1", "2", "--N", "300", "--trials", "4", "--seed", "5"]
    assert _run(tmp_path, *args) == 0
    assert "New: 2" in capsys.readouterr().out
    first = sorted(tmp_path.glob("simulate_*.csv"))
    assert _run(tmp_path, *args) == 0
    assert "Unchanged: 2" in capsys.readouterr().out
    tables = [read_csv(p) for p in sorted(tmp_path.glob("simulate_*.csv"))]
    assert len(first) >= 1
    assert tables[0].equals(tables[-1])
    assert list(tables[0].columns)[0] == "schema"


def test_simulate_rejects_optimal_product(tmp_path, capsys):
    code = _run(tmp_path, "simulate", "--state", "product", "--measurement", "optimal", "--trials", "1", "--seed", "1")
    assert code == 2
    assert "random" in capsys.readouterr().err


def test_verify_subset_and_fault(tmp_path, capsys):
    assert _run(tmp_path, "verify", "--quick", "--only", "qfi_closed_form", "bound_value", "--seed", "2") == 0
    assert "PASS" in capsys.readouterr().out
    code = _run(tmp_path, "verify", "--quick", "--only", "bound_value", "--inject-fault", "bound_value", "--seed", "2", "--json")
    assert code == 1
    doc = _json_from(capsys.readouterr().out)
    assert doc["passed"] is False
    assert doc["checks"][0]["name"] == "bound_value"


def test_verify_unknown_fault_name(tmp_path):
    assert _run(tmp_path, "verify", "--inject-fault", "nope", "--seed", "1") == 2


def test_negative_seed_is_usage_error(tmp_path):
    assert _run(tmp_path, "qfi", "--seed", "-1") == 2


def test_seed_zero_is_recorded(tmp_path, capsys):
    assert _run(tmp_path, "qfi", "--seed", "0", "--json") == 0
    doc = _json_from(capsys.readouterr().out)
    assert doc["meta"]["seed"] > 0


def test_simulate_json_keeps_estimates_out_of_snapshot(tmp_path, capsys):
    args = ["simulate", "--d", "2", "--n", "1", "--N", "300", "--trials", "3", "--seed", "8", "--json"]
    assert _run(tmp_path, *args) == 0
    report = _json_from(capsys.readouterr().out)["reports"][0]
    assert len(report["estimates"]) == report["trials"] - report["excluded"]
    snapshot = json.loads((tmp_path / "latest_simulate.json").read_text(encoding="utf-8"))
    assert "estimates" not in snapshot["rows"][0]
    assert "mse_matrix" not in snapshot["rows"][0]
