import json

import numpy as np
import pytest

from tokenlink.cli import main


@pytest.fixture
def data_dir(tmp_path):
    rng = np.random.default_rng(0)
    n = 40
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [tuple(rng.choice(n, size=2, replace=False)) for _ in range(40)]
    (tmp_path / "graph.txt").write_text("".join(f"{a} {b}\n" for a, b in edges))
    return tmp_path


def write_cfg(path, graph, **extra):
    lines = ["[data]", f"graph = {graph}", "[sampler]", "fanout = 4", "budget = 8",
             "[encoder]", "hidden = 8", "intermediate = 16", "heads = 2", "n_max = 8",
             "[train]", "epochs = 1", "batch_size = 32"]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_usage_errors(capsys):
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["train", "--config", "missing.cfg"]) == 1
    assert main(["check", "coherence", "--n", "1"]) == 1


def test_coherence_check(capsys):
    assert main(["check", "coherence", "--n", "4", "--d", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["welch"] == pytest.approx(3 ** -0.5) and out["passed"]


def test_estimator_and_degeneration_checks(tmp_path, capsys):
    assert main(["check", "estimator", "--max-nodes", "4", "--trials", "2000", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "estimator.json").read_text())["cn_max_deviation"] <= 1e-10
    assert main(["check", "degeneration", "--cases", "20"]) == 0


def test_invariance_check(capsys):
    assert main(["check", "invariance", "--cases", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["cases"] == 3 and out["mutant_detected"] == 3


def test_prepare_heuristics_train_eval(data_dir, capsys):
    prep = data_dir / "prep"
    assert main(["prepare", "--graph", str(data_dir / "graph.txt"), "--global-negatives", "50",
                 "--per-positive", "3", "--out", str(prep)]) == 0
    for name in ("graph.txt", "split.txt", "negatives_global.txt", "negatives_heart.txt"):
        assert (prep / name).exists()

    assert main(["heuristics", "--graph", str(prep / "graph.txt"), "--kind", "CN,SPD",
                 "--out", str(data_dir / "h.csv")]) == 0
    rows = (data_dir / "h.csv").read_text().splitlines()
    assert rows[0] == "u,v,kind,raw,normalized" and any(",SPD," in r for r in rows)

    cfg = data_dir / "run.cfg"
    cfg.write_text(write_cfg(cfg, prep / "graph.txt").read_text() + "")
    text = cfg.read_text().replace("[sampler]", f"split = {prep / 'split.txt'}\n"
                                   f"negatives = {prep / 'negatives_heart.txt'}\n[sampler]")
    cfg.write_text(text)
    capsys.readouterr()
    assert main(["train", "--config", str(cfg), "--out", str(data_dir / "run")]) == 0
    out = json.loads(capsys.readouterr().out)
    ckpt = out["checkpoint"]
    assert ckpt.endswith("final.ckpt") and len(out["losses"]) == 1

    assert main(["eval", "--config", str(cfg), "--checkpoint", ckpt, "--protocol", "heart",
                 "--out", str(data_dir / "ev")]) == 0
    rep = json.loads((data_dir / "ev" / "eval.json").read_text())
    assert rep["protocol"] == "per_positive" and 0 < rep["mrr"] <= 1
    assert (data_dir / "ev" / "ranks.csv").exists()
    assert main(["eval", "--config", str(cfg), "--kind", "AA", "--negatives",
                 str(prep / "negatives_global.txt")]) == 0
    assert main(["eval", "--config", str(cfg)]) == 1


def test_seed_flag_before_subcommand(data_dir, capsys):
    cfg = write_cfg(data_dir / "run.cfg", data_dir / "graph.txt")
    assert main(["--seed", "5", "train", "--config", str(cfg), "--out", str(data_dir / "r")]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 5


def test_failure_exit_codes(data_dir, capsys, monkeypatch):
    from tokenlink import CheckFailed, NumericError, trainer

    cfg = write_cfg(data_dir / "run.cfg", data_dir / "graph.txt")

    def diverge(*a, **k):
        raise NumericError("loss diverged", checkpoint="run/epoch_0000.ckpt")

    monkeypatch.setattr(trainer, "train", diverge)
    assert main(["train", "--config", str(cfg)]) == 2
    assert "epoch_0000.ckpt" in capsys.readouterr().err

    def broken(*a, **k):
        raise CheckFailed("mismatch")

    import tokenlink.bench as bench

    monkeypatch.setattr(bench, "bench_collation", broken)
    assert main(["bench", "collation"]) == 3


def test_bench_cli(tmp_path):
    assert main(["bench", "collation", "--batch-sizes", "4,8", "--repeats", "2",
                 "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text().startswith("backend,batch_size,median_s,p95_s,peak_bytes")


def test_sweep_depth(data_dir, capsys):
    cfg = write_cfg(data_dir / "run.cfg", data_dir / "graph.txt")
    assert main(["sweep", "depth", "--config", str(cfg), "--max-layers", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "parameter,value,final_loss,mrr,auc" and len(lines) == 3
