import json
import os

import pytest

from estimation.estimate import ExperimentConfig
from utils.config import load_config_file, resolve, resolve_seed
from utils.errors import ValidationError
from utils.records import compare_rows, format_diff, latest_path, load_previous, save_snapshot
from utils.report import read_csv, render_histogram_svg, render_line_svg, run_meta, to_json_text, write_csv


def _row(n, value, measurement="optimal"):
    return {"d": 2, "n": n, "N": 5000, "state": "mub", "measurement": measurement, "n_times_trace": value}


def test_compare_rows():
    previous = [_row(1, 1.50), _row(2, 0.56), _row(3, 0.30)]
    current = [_row(1, 1.50), _row(2, 0.58), _row(4, 0.20)]
    diff = compare_rows(current, previous)
    assert diff["summary"] == {"changed": 1, "new": 1, "removed": 1, "unchanged": 1}
    assert diff["changed"][0]["delta"] == pytest.approx(0.02)
    text = format_diff(diff)
    assert "Changed: 1" in text
    assert "+ d=2, n=4" in text
    assert "- d=2, n=3" in text


def test_compare_rows_key_is_case_insensitive():
    diff = compare_rows([_row(1, 1.0, "OPTIMAL")], [_row(1, 1.0, "optimal")])
    assert diff["summary"]["unchanged"] == 1


def test_snapshot_and_latest(tmp_path):
    meta = run_meta("simulate", {"d": 2}, 5, 0.1)
    path = save_snapshot([_row(1, 1.4)], "simulate", tmp_path, meta)
    assert path.exists()
    latest = latest_path(tmp_path, "simulate")
    assert latest.read_text(encoding="utf-8") == path.read_text(encoding="utf-8")
    rows = load_previous(latest)
    assert rows[0]["n_times_trace"] == 1.4


def test_load_previous_missing_or_broken(tmp_path):
    assert load_previous(tmp_path / "saknas.json") == []
    broken = tmp_path / "broken.json"
    broken.write_text("{inte json", encoding="utf-8")
    assert load_previous(broken) == []


def test_write_csv_preamble_and_schema(tmp_path):
    meta = run_meta("qfi", {"d": 2, "n": [1, 2]}, 42, 0.25)
    rows = [{"d": 2, "n": 1, "state": "mub", "trace_qfi": 6.0, "trace_inverse": 1.5, "bound": 1.5,
             "gap": 0.0, "defect": 0.0, "min_eig": 2.0, "max_eig": 2.0, "qfi": "ignored"}]
    path = write_csv(rows, tmp_path / "qfi.csv", "qfi/1", meta)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# version: ")
    assert "# seed: 42" in lines
    assert any(line.startswith('# config: {"d": 2') for line in lines)
    df = read_csv(path)
    assert list(df.columns)[:3] == ["schema", "d", "n"]
    assert "qfi" not in df.columns
    assert df.loc[0, "schema"] == "qfi/1"
    assert df.loc[0, "trace_inverse"] == 1.5


def test_write_csv_unknown_schema(tmp_path):
    with pytest.raises(KeyError):
        write_csv([], tmp_path / "x.csv", "nope/1", {})


def test_json_text_has_meta_first_and_encodes_inf():
    text = to_json_text({"value": float("inf")}, {"seed": 1})
    doc = json.loads(text)
    assert list(doc) == ["meta", "value"]
    assert doc["value"] == "inf"


def test_svg_metadata():
    meta = {"seed": 3, "command": "simulate"}
    svg = render_line_svg([1, 2, 3], [4.5, 4.4, 4.6], "scaling", "n", "value", meta, reference=4.5)
    assert "<svg" in svg
    assert "<metadata>" in svg and '"seed": 3' in svg
    assert "scaling" in svg and "sudest" in svg
    # samma indata -> samma fil (saltade id:n, inget datum)
    assert svg == render_line_svg([1, 2, 3], [4.5, 4.4, 4.6], "scaling", "n", "value", meta, reference=4.5)
    hist = render_histogram_svg([-0.1, 0.0, 0.2, 0.1], "spread", "eig", meta, bins=4, markers=(-0.5, 0.5))
    assert "<metadata>" in hist
    assert "spread" in hist and "count" in hist


def test_resolve_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SUDEST_WORKERS", "3")
    monkeypatch.setenv("SUDEST_SEED", "11")
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"seed": 22, "d": 3}), encoding="utf-8")
    cfg = resolve({"d": None, "n": 4}, cfg_file, {"d": 2, "n": 1, "state": "mub"})
    assert cfg["workers"] == 3  # env
    assert cfg["seed"] == 22  # fil slår env
    assert cfg["d"] == 3  # None-flaggor ignoreras
    assert cfg["n"] == 4  # flagga slår allt
    assert cfg["state"] == "mub"


def test_resolve_progress_from_env(monkeypatch):
    monkeypatch.setenv("SUDEST_PROGRESS", "no")
    assert resolve({})["progress"] is False


def test_resolve_seed():
    assert resolve_seed(5) == 5
    drawn = resolve_seed(0)
    assert 1 <= drawn < 2 ** 64
    with pytest.raises(ValidationError, match="64-bit"):
        resolve_seed(-1)
    with pytest.raises(ValidationError):
        resolve_seed(2 ** 64)


def test_config_file_must_be_object(tmp_path):
    f = tmp_path / "cfg.json"
    f.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ValidationError, match="JSON object"):
        load_config_file(f)


def test_workers_default_to_all_cores(monkeypatch):
    monkeypatch.delenv("SUDEST_WORKERS", raising=False)
    assert resolve({})["workers"] == (os.cpu_count() or 1)
    assert ExperimentConfig().workers == (os.cpu_count() or 1)
