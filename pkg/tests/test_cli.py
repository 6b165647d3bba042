import csv
import json

import pytest

from sfuda.cli import main
from sfuda.data import load_dataset
from sfuda.model import init_params, load_model, save_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--source", str(d / "src.jsonl"), "--target", str(d / "tgt.jsonl"), "--seed", "0"]) == 0
    assert main(["pretrain", "--source", str(d / "src.jsonl"), "--out", str(d / "src.model"),
                 "--epochs", "30"]) == 0
    return d


def adapt_args(d, tag, *extra):
    return ["adapt", "--model", str(d / "src.model"), "--target", str(d / "tgt.jsonl"),
            "--out-model", str(d / f"{tag}.model"), "--metrics", str(d / tag), "--epochs", "3", *extra]


def test_generate_and_pretrain(workspace):
    assert load_dataset(workspace / "tgt.jsonl").domain == "target"
    assert load_model(workspace / "src.model").frozen


def test_pretrain_missing_file(tmp_path):
    assert main(["pretrain", "--source", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "m")]) == 3


def test_pretrain_unlabelled_source(workspace, tmp_path, capsys):
    ds = load_dataset(workspace / "tgt.jsonl").unlabeled()
    from sfuda.data import save_dataset
    save_dataset(ds, tmp_path / "u.jsonl")
    assert main(["pretrain", "--source", str(tmp_path / "u.jsonl"), "--out", str(tmp_path / "m")]) == 2
    assert capsys.readouterr().err


def test_pretrain_zero_epochs_is_near_chance(workspace, tmp_path, capsys):
    assert main(["pretrain", "--source", str(workspace / "src.jsonl"), "--out", str(tmp_path / "m"),
                 "--epochs", "0"]) == 0
    acc = float(capsys.readouterr().out.split()[-1])
    assert 0.0 <= acc <= 0.6


def test_adapt_writes_outputs_and_is_deterministic(workspace):
    assert main(adapt_args(workspace, "a", "--seed", "4")) == 0
    assert main(adapt_args(workspace, "b", "--seed", "4")) == 0
    summary = json.loads((workspace / "a" / "summary.json").read_text())
    assert "final_accuracy" in summary and summary["epochs"] == 3
    assert (workspace / "a" / "summary.json").read_bytes() == (workspace / "b" / "summary.json").read_bytes()
    assert (workspace / "a" / "metrics.csv").read_bytes() == (workspace / "b" / "metrics.csv").read_bytes()
    assert (workspace / "a.model").read_bytes() == (workspace / "b.model").read_bytes()
    for name in ("entropy_matrix.csv", "config.json", "features_before.csv", "features_after.csv"):
        assert (workspace / "a" / name).exists()
    assert not load_model(workspace / "a.model").frozen


def test_adapt_rejects_off_simplex_lambda(workspace, capsys):
    assert main(adapt_args(workspace, "bad", "--lambda", "0.5,0.5,0.5")) == 2
    assert "sum to 1" in capsys.readouterr().err


def test_adapt_rejects_unfrozen_model(workspace, tmp_path):
    save_model(init_params(6, 16, 8, 4, seed=0), tmp_path / "open.model")
    args = adapt_args(workspace, "x")
    args[2] = str(tmp_path / "open.model")
    assert main(args) == 2


def test_adapt_flag_dependency(workspace):
    assert main(adapt_args(workspace, "dep", "--no-pa")) == 2


def test_config_file_unknown_key(workspace, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 2\nwarp_factor = 9\n")
    assert main(adapt_args(workspace, "cfg", "--config", str(cfg))) == 2
    assert "warp_factor" in capsys.readouterr().err


def test_precedence_flag_env_file(workspace, tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nseed = 11\ntau = 0.25\n")
    monkeypatch.setenv("SFUDA_SEED", "22")
    assert main(adapt_args(workspace, "p1", "--config", str(cfg))) == 0
    conf = json.loads((workspace / "p1" / "config.json").read_text())
    assert conf["seed"] == 22 and conf["tau"] == 0.25
    assert main(adapt_args(workspace, "p2", "--config", str(cfg), "--seed", "33")) == 0
    assert json.loads((workspace / "p2" / "config.json").read_text())["seed"] == 33


def test_evaluate(workspace, capsys):
    assert main(["evaluate", "--model", str(workspace / "src.model"), "--data", str(workspace / "tgt.jsonl")]) == 0
    assert 0 <= float(capsys.readouterr().out.split()[-1]) <= 1


def test_ablate_table(workspace):
    out = workspace / "abl"
    assert main(["ablate", "--model", str(workspace / "src.model"), "--target", str(workspace / "tgt.jsonl"),
                 "--truth", str(workspace / "tgt.jsonl"), "--metrics", str(out), "--seeds", "1",
                 "--epochs", "2"]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["setting"] for r in rows] == ["Base", "+PA", "+PA+PLA", "+PA+PLA+NF"]
    assert (out / "ablation.txt").exists()


def test_ablate_missing_truth(workspace, tmp_path):
    assert main(["ablate", "--model", str(workspace / "src.model"), "--target", str(workspace / "tgt.jsonl"),
                 "--truth", str(tmp_path / "none.txt"), "--metrics", str(tmp_path / "o")]) == 2


def test_sweep_grid(workspace, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--grid", "0.5", "--model", str(workspace / "src.model"),
                 "--target", str(workspace / "tgt.jsonl"), "--truth", str(workspace / "tgt.jsonl"),
                 "--out", str(out), "--epochs", "1"]) == 0
    rows = list(csv.reader(open(out)))[1:]
    assert [tuple(float(v) for v in r[:3]) for r in rows] == [
        (1, 0, 0), (0.5, 0.5, 0), (0.5, 0, 0.5), (0, 1, 0), (0, 0.5, 0.5), (0, 0, 1)]
    assert all(0 <= float(r[3]) <= 1 for r in rows)


def test_sweep_bad_step(workspace, tmp_path):
    assert main(["sweep", "--grid", "0.3", "--model", str(workspace / "src.model"),
                 "--target", str(workspace / "tgt.jsonl"), "--truth", str(workspace / "tgt.jsonl"),
                 "--out", str(tmp_path / "s.csv")]) == 2


def test_usage_errors_exit_two():
    assert main([]) == 2
    assert main(["adapt"]) == 2
