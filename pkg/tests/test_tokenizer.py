import numpy as np
import pytest

from tokenlink import BudgetOverflowError, ConfigError, Graph, SamplerConfig, collate, encode, sample_subgraph
from tokenlink.sampler import SubgraphSample
from tokenlink.tokenizer import read_batch_cache, reconstruct_adjacency, token_width, write_batch_cache


def _sample(adj, ids=None):
    adj = np.asarray(adj, dtype=np.uint8)
    ids = np.arange(len(adj)) if ids is None else np.asarray(ids)
    return SubgraphSample(ids, adj)


def _five_node():
    adj = np.zeros((5, 5), dtype=np.uint8)
    for a, b in [(0, 2), (1, 2), (2, 3), (3, 4), (1, 4)]:
        adj[a, b] = adj[b, a] = 1
    return _sample(adj)


def test_five_node_shape():
    tm = encode(_five_node(), 6)
    assert tm.rows.shape == (7, 14)
    assert token_width(6) == 14


def test_token_layout():
    s = _five_node()
    r = encode(s, 6).rows
    for i in range(5):
        assert r[i, :6].tolist() == [int(j == i) for j in range(6)]
        assert r[i, 6:11].tolist() == s.local_adjacency[i].tolist()
        assert r[i, 11] == 0
        assert r[i, 12:].tolist() == [1, 0]
    assert np.array_equal(r[5, :12], r[0, :12]) and np.array_equal(r[6, :12], r[1, :12])
    assert r[5, 12:].tolist() == r[6, 12:].tolist() == [0, 1]
    assert set(np.unique(r)) <= {0, 1}


def test_two_node_sample():
    r = encode(_sample(np.zeros((2, 2))), 4).rows
    assert r[0, :4].tolist() == [1, 0, 0, 0] and r[1, :4].tolist() == [0, 1, 0, 0]
    assert not r[:, 4:8].any()
    assert r[2, 8:].tolist() == [0, 1] and r[0, 8:].tolist() == [1, 0]


def test_triangle_rows_have_two_ones():
    r = encode(_sample(np.ones((3, 3)) - np.eye(3)), 5).rows
    assert (r[:3, 5:10].sum(axis=1) == 2).all()


def test_budget_overflow():
    with pytest.raises(BudgetOverflowError):
        encode(_five_node(), 4)


def test_collate_padding():
    a = encode(_sample(np.ones((3, 3)) - np.eye(3)), 6)
    b = encode(_five_node(), 6)
    batch = collate([a, b], labels=[1, 0])
    assert batch.N_B == 5 and batch.tokens.shape == (2, 7, 14)
    assert batch.valid_mask[0].tolist() == [True, True, True, False, False, True, True]
    assert batch.valid_mask[1].all()
    assert not batch.tokens[0, 3:5].any()
    assert np.array_equal(batch.tokens[0, 5:], a.rows[3:])
    assert batch.labels.tolist() == [1.0, 0.0]
    one = collate([b])
    assert one.valid_mask.all() and np.array_equal(one.tokens[0], b.rows)


def test_collate_errors():
    with pytest.raises(ValueError):
        collate([])
    with pytest.raises(ConfigError):
        collate([encode(_five_node(), 6), encode(_five_node(), 7)])


def test_one_hot_row_sums():
    batch = collate([encode(_sample(np.zeros((2, 2))), 6), encode(_five_node(), 6)])
    sums = batch.tokens[:, :, :6].sum(axis=2)
    assert np.array_equal(sums, batch.valid_mask.astype(int))


def test_reconstruct_adjacency():
    s = _five_node()
    batch = collate([encode(_sample(np.zeros((2, 2))), 6), encode(s, 6)])
    raw = reconstruct_adjacency(batch, normalize=False).A_tilde
    assert not raw[:, :, -2:].any()
    assert np.array_equal(raw[1, :5, :5], s.local_adjacency + np.eye(5))
    assert np.array_equal(raw[1, 5], raw[1, 0]) and np.array_equal(raw[1, 6], raw[1, 1])
    assert not raw[0, 2:5].any()
    norm = reconstruct_adjacency(batch).A_tilde
    sums = norm.sum(axis=2)
    assert np.allclose(sums[batch.valid_mask], 1.0)
    assert not norm[0, 2:5].any()


def test_batch_cache_round_trip(tmp_path):
    g = Graph.from_dense(np.triu(np.random.default_rng(0).random((15, 15)) < 0.3, 1))
    rng = np.random.default_rng(1)
    mats = [encode(sample_subgraph(g, a, b, SamplerConfig(budget=8), rng), 8) for a, b in [(0, 1), (2, 3), (5, 9)]]
    batch = collate(mats, labels=[1, 0, 1])
    write_batch_cache(batch, tmp_path / "b.bin")
    back = read_batch_cache(tmp_path / "b.bin")
    assert np.array_equal(back.tokens, batch.tokens)
    assert np.array_equal(back.valid_mask, batch.valid_mask)
    assert np.array_equal(back.labels, batch.labels)
    assert np.array_equal(back.n_b, batch.n_b)


def test_features_follow_tokens():
    s = _five_node()
    feats = np.arange(10.0).reshape(5, 2)
    batch = collate([encode(s, 6)], features=[feats])
    assert np.array_equal(batch.features[0, :5], feats)
    assert np.array_equal(batch.features[0, 5:], feats[:2])
