import csv
import json
import subprocess
import sys

import pytest

from npbdaa import cli, experiment
from npbdaa.io import read_manifest, read_model_snapshot


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "d"
    assert run("generate", "--sigma2", 0.1, "--seed", 1, "--out", out) == 0
    return out


def _tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_layout(dataset):
    files = sorted(p.name for p in dataset.iterdir())
    assert sum(f.endswith(".labels.csv") for f in files) == 40
    assert sum(f.endswith(".csv") and not f.endswith(".labels.csv") for f in files) == 40
    assert "manifest.json" in files and "truth.snapshot" in files
    man = read_manifest(dataset / "manifest.json")
    assert man.dim == 1 and len(man.entries) == 40
    assert json.loads((dataset / "manifest.json").read_text())["dim"] == 1


def test_generate_is_byte_identical(dataset, tmp_path):
    out = tmp_path / "again"
    assert run("generate", "--sigma2", 0.1, "--seed", 1, "--out", out) == 0
    assert _tree_bytes(out) == _tree_bytes(dataset)


def test_generate_other_seed_keeps_structure(dataset, tmp_path):
    out = tmp_path / "other"
    assert run("generate", "--sigma2", 0.1, "--seed", 2, "--out", out) == 0
    a = read_model_snapshot(dataset / "truth.snapshot")[1]
    b = read_model_snapshot(out / "truth.snapshot")[1]
    assert (out / "seq_000.csv").read_bytes() != (dataset / "seq_000.csv").read_bytes()
    for segs in (a, b):
        lens = [len(s.word_ids) for s in segs]
        assert lens.count(2) == 32 and lens.count(3) == 8


def test_generate_refuses_non_empty_dir(tmp_path, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert run("generate", "--sigma2", 1.0, "--seed", 0, "--out", out) != 0
    assert "not empty" in capsys.readouterr().err
    assert (out / "keep.txt").exists()
    assert run("generate", "--sigma2", 1.0, "--seed", 0, "--out", out, "--force") == 0
    assert not (out / "keep.txt").exists()
    assert not list(tmp_path.glob(".busy.*"))


def test_eval_truth_against_truth(dataset, capsys):
    assert run("eval", "--snapshot", dataset / "truth.snapshot",
               "--truth", dataset / "manifest.json") == 0
    out = capsys.readouterr().out
    assert "letter_ari=1.000000 word_ari=1.000000" in out
    rows = dict(csv.reader(open(dataset / "truth.eval.csv")))
    assert rows["letter_ari"] == "1" and rows["word_ari"] == "1"


def test_eval_lists_missing_labels(dataset, tmp_path, capsys):
    man = json.loads((dataset / "manifest.json").read_text())
    for e in man["sequences"][:2]:
        e["labels"] = "absent_" + e["id"] + ".csv"
    bad = dataset / "partial.json"
    bad.write_text(json.dumps(man))
    try:
        assert run("eval", "--snapshot", dataset / "truth.snapshot", "--truth", bad) != 0
        err = capsys.readouterr().err
        assert "absent_seq_000.csv" in err and "absent_seq_001.csv" in err
    finally:
        bad.unlink()


def _config(tmp_path, dataset, **extra):
    cfg = tmp_path / "cfg.yaml"
    lines = [f"manifest: {dataset / 'manifest.json'}", "iterations: 1", "condition: tiny"]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    cfg.write_text("\n".join(lines) + "\n")
    return cfg


def test_train_single_trial(dataset, tmp_path):
    cfg = _config(tmp_path, dataset)
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", out, "--trials", 1) == 0
    assert (out / "trial_000" / "final.snapshot").exists()
    assert len((out / "trial_000" / "metrics.csv").read_text().splitlines()) == 2
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 1 and rows[0]["map"] == "1" and rows[0]["status"] == "ok"


def test_train_summary_reproducible_and_flags_override(dataset, tmp_path):
    cfg = _config(tmp_path, dataset)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run("train", "--config", cfg, "--out", out, "--trials", 2, "--iterations", 2,
                   "--seed", 5, "--n_words_max", 5) == 0
        outs.append(out)
    assert (outs[0] / "summary.csv").read_bytes() == (outs[1] / "summary.csv").read_bytes()
    assert (outs[0] / "trial_001" / "final.snapshot").read_bytes() == \
        (outs[1] / "trial_001" / "final.snapshot").read_bytes()
    model, _, _ = read_model_snapshot(outs[0] / "trial_000" / "final.snapshot")
    assert model.n_words == 5
    assert len((outs[0] / "trial_000" / "metrics.csv").read_text().splitlines()) == 3


def test_train_reports_failed_trial(dataset, tmp_path, monkeypatch):
    real = experiment.run_gibbs
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise RuntimeError("boom")
        return real(*args, **kwargs)

    monkeypatch.setattr(experiment, "run_gibbs", flaky)
    out = tmp_path / "run"
    assert run("train", "--config", _config(tmp_path, dataset), "--out", out, "--trials", 2) != 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [r["status"] for r in rows] == ["failed", "ok"]
    assert rows[1]["map"] == "1"
    assert "boom" in (out / "trial_000" / "error.txt").read_text()


def test_train_requires_manifest(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("iterations: 1\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") != 0
    assert "manifest" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_train_rejects_unknown_config_key(dataset, tmp_path):
    cfg = _config(tmp_path, dataset, banana=3)
    assert run("train", "--config", cfg, "--out", tmp_path / "o") != 0


def test_report_writes_table_and_figures(dataset, tmp_path, capsys):
    cfg = _config(tmp_path, dataset)
    runs = tmp_path / "runs"
    assert run("train", "--config", cfg, "--out", runs / "a", "--trials", 2, "--iterations", 3) == 0
    assert run("train", "--config", cfg, "--out", runs / "b", "--trials", 2, "--iterations", 3,
               "--condition", "other") == 0
    capsys.readouterr()
    assert run("report", "--runs", runs) == 0
    printed = capsys.readouterr().out
    rows = list(csv.DictReader(open(runs / "report.csv")))
    assert [r["condition"] for r in rows] == ["tiny", "other"]
    assert rows[0]["trials"] == "2" and rows[0]["completed"] == "2"
    assert 0.0 <= float(rows[0]["letter_ari_mean"]) <= 1.0
    assert printed.startswith("condition,trials")
    for name in ("loglik_profile.png", "ari_profile.png", "segmentation.png"):
        data = (runs / "a" / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
    first = (runs / "a" / "loglik_profile.png").read_bytes()
    assert run("report", "--runs", runs / "a", "--out", tmp_path / "r.csv") == 0
    assert (runs / "a" / "loglik_profile.png").read_bytes() == first


def test_report_without_runs_fails(tmp_path):
    assert run("report", "--runs", tmp_path) != 0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "npbdaa", "eval", "--snapshot",
                          tmp_path / "nope", "--truth", tmp_path / "nope.json"],
                         capture_output=True, text=True)
    assert res.returncode != 0 and "error" in res.stderr
