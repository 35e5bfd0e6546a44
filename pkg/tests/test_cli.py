import json

from aircorrect.cli import main


def _config(tmp_path, **kw):
    raw = {"data": {"synthetic": {"seed": 3, "n_hours": 700}}, "pollutants": ["pm25"],
           "training": {"epochs": 2, "patience": 1}, "gbt": {"n_estimators": 10}}
    raw.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_train_report_inspect(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", _config(tmp_path), "--out", str(out), "--seed", "1"]) == 0
    assert main(["report", "--out", str(out)]) == 0
    assert "manifest verified" in capsys.readouterr().out
    assert main(["inspect-bundle", str(out / "bundles" / "S1_pm25_h24_ptc.json")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["stages"][0] == "importance_pruning"


def test_report_detects_tampering(tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", _config(tmp_path), "--out", str(out)])
    (out / "metrics.csv").write_text("tampered\n")
    assert main(["report", "--out", str(out)]) == 1


def test_config_error_exit_one(tmp_path, capsys):
    assert main(["train", "--config", _config(tmp_path, horizons=[36])]) == 1
    assert "6,12,24,48,72" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1


def test_partial_failure_exit_two(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--out", str(out), "--hours", "300", "--stations", "2", "--seed", "4"]) == 0
    text = (out / "synthetic.csv").read_text().splitlines()
    # make station S2's so2 constant so that its cell fails
    header = text[0].split(",")
    k = header.index("so2")
    fixed = [text[0]]
    for line in text[1:]:
        cells = line.split(",")
        if cells[1] == "S2":
            cells[k] = "5.0"
        fixed.append(",".join(cells))
    (out / "synthetic.csv").write_text("\n".join(fixed) + "\n")
    cfg = _config(tmp_path, data=str(out / "synthetic.csv"), pollutants=["so2"])
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) == 2


def test_bad_bundle_exit_one(tmp_path):
    bad = tmp_path / "b.json"
    bad.write_text('{"magic": "AIRCORRECT-BUNDLE-v0"}')
    assert main(["inspect-bundle", str(bad)]) == 1
