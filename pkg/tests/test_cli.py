import csv
import io
import json
import subprocess
import sys

import pytest

from mechlab import cli, experiment

SINGLE_ITEM = {"system": {"type": "uniform", "n": 2, "k": 1},
               "distribution": {"type": "uniform", "lo": 0, "hi": 1},
               "mechanisms": ["greedy_spm", "vcg_reserves"]}


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def csv_rows(text):
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    return lines[0], list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_phi(capsys):
    code, out, _ = run_cli(capsys, "phi", "--n", "5", "--k", "1")
    assert code == 0 and float(out) == pytest.approx(0.67232, abs=1e-12)


def test_gap_lp_and_closed_form(capsys):
    system = json.dumps({"type": "uniform", "n": 5, "k": 1})
    code, out, _ = run_cli(capsys, "gap", "--system", system, "--method", "lp")
    assert code == 0 and float(out) == pytest.approx(1 / 0.67232, abs=1e-6)
    code, out, _ = run_cli(capsys, "gap", "--system", system, "--method", "closed_form", "--format", "json")
    data = json.loads(out)
    assert data["gap"] == pytest.approx(1 / 0.67232, abs=1e-12) and data["seed"] == 42


def test_lowerbound(capsys):
    code, out, _ = run_cli(capsys, "lowerbound", "--n", "2", "3")
    header, rows = csv_rows(out)
    assert code == 0 and "seed=42" in header
    assert float(rows[0]["dependent"]) == 2 and float(rows[0]["independent"]) == pytest.approx(1.375)


def test_run_single_item(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SINGLE_ITEM))
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg), "--samples", "100000")
    header, rows = csv_rows(out)
    assert code == 0 and "seed=42" in header
    assert list(rows[0]) == list(experiment.CSV_COLUMNS)
    by_name = {r["criterion"]: r for r in rows}
    assert float(by_name["estimate:myerson"]["estimate"]) == pytest.approx(5 / 12, abs=0.005)
    spm = by_name["ratio:myerson/greedy_spm"]
    assert float(spm["estimate"]) == pytest.approx(0.41667 / 0.380859, abs=0.02)
    assert float(spm["bound"]) == pytest.approx(4 / 3) and spm["pass"] == "true" and spm["kind"] == "uniform"


def test_run_is_byte_identical(tmp_path):
    cfg = json.dumps(SINGLE_ITEM)
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert cli.main(["run", "--config", cfg, "--samples", "3000", "--seed", "7", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] and b"seed=7" in outs[0]


def test_run_json_format(capsys):
    code, out, _ = run_cli(capsys, "run", "--config", json.dumps(SINGLE_ITEM), "--samples", "2000",
                           "--format", "json")
    data = json.loads(out)
    assert code == 0 and data["seed"] == 42 and data["beta"] == pytest.approx(4 / 3)
    assert {r["mechanism"] for r in data["ratios"]} == {"greedy_spm", "vcg_reserves"}


def test_single_sample_flags_infinite_stderr(capsys):
    code, out, _ = run_cli(capsys, "run", "--config", json.dumps(SINGLE_ITEM), "--samples", "1")
    header, rows = csv_rows(out)
    assert code == 0 and "stderr=inf" in header
    ratio_rows = [r for r in rows if r["criterion"].startswith("ratio:")]
    assert ratio_rows and all(r["pass"] == "" for r in ratio_rows)


@pytest.mark.parametrize("cfg,path", [
    ({**SINGLE_ITEM, "distribution": {"type": "uniform", "lo": 1, "hi": 0}}, "distribution"),
    ({"distribution": SINGLE_ITEM["distribution"]}, "system"),
    ({**SINGLE_ITEM, "mechanisms": ["magic"]}, "mechanisms[0]"),
    ({"system": SINGLE_ITEM["system"], "distributions": [SINGLE_ITEM["distribution"]]}, "distributions"),
])
def test_config_errors_report_field_path(capsys, cfg, path):
    code, _, err = run_cli(capsys, "run", "--config", json.dumps(cfg))
    assert code == 2 and f"config error at {path}" in err


def test_bad_samples_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--config", json.dumps(SINGLE_ITEM), "--samples", "0"])
    assert exc.value.code == 2


def test_bound(capsys):
    code, out, _ = run_cli(capsys, "bound", "--config", json.dumps(SINGLE_ITEM), "--format", "json")
    data = json.loads(out)
    assert code == 0 and data["cp_value"] == pytest.approx(0.5, abs=1e-6)


def test_reproduce_subset_is_deterministic(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert cli.main(["reproduce", "--only", "1,12", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    _, rows = csv_rows(outs[0].decode())
    assert [r["criterion"] for r in rows] == ["1", "12"] and all(r["pass"] == "true" for r in rows)


def test_corrupted_beta_table_fails(monkeypatch, capsys):
    monkeypatch.setitem(experiment.BETA_TABLE, "matroid", 1.0)
    code, out, _ = run_cli(capsys, "reproduce", "--only", "10")
    assert code != 0
    _, rows = csv_rows(out)
    assert rows[0]["pass"] == "false"


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "mechlab.cli", "phi", "--n", "10", "--k", "2"],
                         capture_output=True, text=True, check=True)
    assert float(res.stdout) == pytest.approx(1.516816, abs=1e-6)
