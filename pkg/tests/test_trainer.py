import math

import numpy as np
import pytest
import torch

from tokenlink import ConfigError, EncoderConfig, Graph, LinkEncoder, NumericError, SamplerConfig, TrainConfig, train
from tokenlink.graph import split_edges
from tokenlink.model import file_digest, init_params, load_checkpoint
from tokenlink.trainer import fit_encoder, sample_negatives

from .helpers import make_model


def ring_graph(n=12):
    edges = [(i, (i + 1) % n) for i in range(n)] + [(i, (i + 3) % n) for i in range(0, n, 2)]
    return Graph.from_edges(n, edges)


def labelled_pairs(g, seed=0):
    rng = np.random.default_rng(seed)
    pos = g.edges()
    neg = sample_negatives(g, pos, 1, rng)
    return np.concatenate([pos, neg]), np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])


def run(model, g, pairs, y, **kw):
    args = dict(task="link_bce", sampler_cfg=SamplerConfig(depth=1, fanout=4, budget=8), batch_size=8,
                learning_rate=1e-2, weight_decay=0.0, epochs=1, seed=0)
    args.update(kw)
    return fit_encoder(model, g, lambda epoch: (pairs, y), **args)


def test_sample_negatives_complete_graph_raises():
    k4 = Graph.from_dense(np.ones((4, 4)) - np.eye(4))
    with pytest.raises(ValueError):
        sample_negatives(k4, np.zeros((1, 2)), 1, np.random.default_rng(0))


def test_sample_negatives_only_non_edge(path3):
    neg = sample_negatives(path3, np.zeros((5, 2)), 2, np.random.default_rng(0))
    assert neg.shape == (10, 2)
    assert all(sorted(p) == [0, 2] for p in neg.tolist())


def test_sample_negatives_sparse_path_and_determinism():
    g = ring_graph(40)
    a = sample_negatives(g, np.zeros((30, 2)), 3, np.random.default_rng(5))
    b = sample_negatives(g, np.zeros((30, 2)), 3, np.random.default_rng(5))
    assert np.array_equal(a, b) and a.shape == (90, 2)
    assert all(u != v and not g.has_edge(u, v) for u, v in a.tolist())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(task="other")
    with pytest.raises(ConfigError):
        TrainConfig(task="heuristic_regression")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(sampler=SamplerConfig(budget=64), encoder=EncoderConfig(n_max=32))


def test_zero_epochs_leaves_initial_checkpoint(tmp_path):
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    m = make_model()
    before = m.arrays()
    report = run(m, g, pairs, y, epochs=0, checkpoint_dir=tmp_path)
    assert report.losses == []
    assert (tmp_path / "epoch_0000.ckpt").exists() and report.checkpoint.endswith("final.ckpt")
    _, arrays = load_checkpoint(tmp_path / "epoch_0000.ckpt")
    assert all(np.array_equal(before[k], arrays[k]) for k in before)


def test_first_epoch_loss_is_ln2_with_zero_readout():
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    m = make_model()
    with torch.no_grad():
        m.readout_weight.zero_()
        m.readout_bias.zero_()
    report = run(m, g, pairs, y, batch_size=len(pairs))
    assert report.losses[0] == pytest.approx(math.log(2), abs=1e-12)


def test_decoupled_weight_decay_on_zero_gradient_parameters():
    # with a zero readout vector every block parameter gets an exactly zero gradient,
    # so one AdamW step multiplies it by (1 - lr * wd)
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    m = make_model()
    with torch.no_grad():
        m.readout_weight.zero_()
    before = m.blocks[0].propagation.detach().clone()
    lr, wd = 0.05, 0.1
    run(m, g, pairs, y, batch_size=len(pairs), learning_rate=lr, weight_decay=wd)
    assert torch.allclose(m.blocks[0].propagation, before * (1 - lr * wd), rtol=0, atol=1e-15)


def test_fractional_epochs_train_prefix():
    g = ring_graph()
    pairs, y = labelled_pairs(g)  # 18 + 18 pairs -> 5 batches of 8
    report = run(make_model(), g, pairs, y, epochs=1.5)
    assert len(report.losses) == 2
    assert len(report.batch_seconds) == 5 + 2


def test_training_is_reproducible(tmp_path):
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    r1 = run(make_model(), g, pairs, y, epochs=2, checkpoint_dir=tmp_path / "a")
    r2 = run(make_model(), g, pairs, y, epochs=2, checkpoint_dir=tmp_path / "b")
    assert r1.losses == r2.losses
    assert file_digest(r1.checkpoint) == file_digest(r2.checkpoint)
    r3 = run(make_model(), g, pairs, y, epochs=2, seed=1)
    assert r3.losses != r1.losses


def test_gradient_accumulation_matches_larger_batch():
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    pairs, y = pairs[:32], y[:32]
    m1, m2 = make_model(), make_model()
    run(m1, g, pairs, y, batch_size=8, epochs=1)
    run(m2, g, pairs, y, batch_size=4, accumulation_steps=2, epochs=1)
    a1, a2 = m1.arrays(), m2.arrays()
    # shuffled order and sampler draws coincide; only the batch boundaries differ
    assert all(np.allclose(a1[k], a2[k], atol=1e-8) for k in a1)


def test_loss_decreases():
    g = ring_graph(20)
    pairs, y = labelled_pairs(g)
    report = run(make_model(), g, pairs, y, epochs=15)
    assert report.losses[-1] < report.losses[0]


def test_numeric_error_points_to_last_checkpoint(tmp_path):
    g = ring_graph()
    pairs, y = labelled_pairs(g)
    m = make_model()
    with torch.no_grad():
        m.blocks[0].propagation.fill_(float("inf"))
    with pytest.raises(NumericError) as exc:
        run(m, g, pairs, y, checkpoint_dir=tmp_path)
    assert exc.value.checkpoint.endswith("epoch_0000.ckpt")


def test_regression_task():
    g = ring_graph()
    pairs, _ = labelled_pairs(g)
    targets = np.linspace(0, 1, len(pairs))
    report = run(make_model(), g, pairs, targets, task="heuristic_regression", epochs=3)
    assert len(report.losses) == 3 and all(np.isfinite(report.losses))


def test_train_entry_point(tmp_path):
    g = ring_graph(30)
    split = split_edges(g, (0.8, 0.1, 0.1), seed=0)
    cfg = TrainConfig(batch_size=16, epochs=2, sampler=SamplerConfig(depth=1, fanout=4, budget=8),
                      encoder=EncoderConfig(hidden=8, intermediate=16, heads=2, n_max=8))
    report, est = train(cfg, g, split, out_dir=tmp_path)
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == 3 and '"final": true' in lines[-1]
    assert report.config_digest == cfg.digest()
    assert est.decision_function(split.test).shape == (len(split.test),)
    # the sampler never saw held-out edges
    assert not any(est.graph_.has_edge(u, v) for u, v in split.test.tolist())


def test_heuristic_training_entry_point():
    g = ring_graph(30)
    split = split_edges(g, (0.8, 0.1, 0.1), seed=0)
    cfg = TrainConfig(task="heuristic_regression", heuristic="CN", batch_size=16, epochs=1,
                      sampler=SamplerConfig(depth=1, fanout=4, budget=8),
                      encoder=EncoderConfig(hidden=8, intermediate=16, heads=2, n_max=8))
    report, est = train(cfg, g, split)
    assert est.kind == "CN" and len(report.losses) == 1
