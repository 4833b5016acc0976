"""Desk-scale timing of batch collation and of encoder forward/backward passes."""

from __future__ import annotations

import csv
import gc
import statistics
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
import torch

from ._rng import substream
from .exceptions import CheckFailed
from .graph import Graph
from .model import EncoderConfig, LinkEncoder, init_params
from .sampler import SamplerConfig, sample_subgraph
from .tokenizer import TokenBatch, collate, encode, reconstruct_adjacency, token_width
from .trainer import bce_loss, set_determinism

BACKENDS = ("pad_stack", "concat_objects")
COLLATION_FIELDS = ("backend", "batch_size", "median_s", "p95_s", "peak_bytes")
FORWARD_FIELDS = ("layers", "phase", "mean_s", "std_s", "batches")


def heavy_tailed_graph(num_nodes, mean_degree, exponent=2.5, seed=0):
    """Chung-Lu style random graph with a power-law expected degree sequence."""
    rng = substream(seed, "bench")
    w = (1.0 + np.arange(num_nodes)) ** (-1.0 / (exponent - 1.0))
    w *= mean_degree * num_nodes / w.sum()
    m = int(mean_degree * num_nodes / 2)
    p = w / w.sum()
    edges = np.stack([rng.choice(num_nodes, size=2 * m, p=p), rng.choice(num_nodes, size=2 * m, p=p)], axis=1)
    return Graph.from_edges(num_nodes, edges)


def sample_pool(g, count, sampler_cfg, seed=0):
    rng = substream(seed, "bench", 1)
    edges = g.edges()
    picks = edges[rng.integers(0, len(edges), size=count)]
    return [sample_subgraph(g, int(u), int(v), sampler_cfg, rng) for u, v in picks]


@dataclass(frozen=True, eq=False)
class GraphObject:
    """A per-sample graph record in the list-of-graphs style: node rows and an edge list."""

    x: np.ndarray  # (N + 2, F) float32 token rows, task rows last
    edge_index: np.ndarray  # (2, E) int64 local edges
    num_nodes: int


def to_graph_object(matrix, sample):
    src, dst = np.nonzero(sample.local_adjacency)
    return GraphObject(matrix.rows.astype(np.float32), np.stack([src, dst]).astype(np.int64), matrix.N + 2)


def pad_stack(matrices):
    """Preallocate the padded tensor and copy each sample into its slot."""
    return collate(matrices)


def concat_objects(objects, n_max):
    """Concatenate node rows and offset edge lists, then scatter into the padded dense layout.

    The first stage mirrors list-of-graphs collation (``ptr``, ``batch``
    vector, shifted ``edge_index``); the second is the densification a
    Transformer needs before it can consume the batch.
    """
    sizes = np.array([o.num_nodes for o in objects], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    x = np.concatenate([o.x for o in objects])
    edge_index = np.concatenate([o.edge_index + ptr[i] for i, o in enumerate(objects)], axis=1)
    batch_vec = np.repeat(np.arange(len(objects)), sizes)
    n_ctx = sizes - 2
    nB = int(n_ctx.max())
    local = np.arange(len(x)) - ptr[batch_vec]
    is_task = local >= n_ctx[batch_vec]
    slot = np.where(is_task, local - n_ctx[batch_vec] + nB, local)
    tokens = np.zeros((len(objects), nB + 2, token_width(n_max)), dtype=np.uint8)
    tokens[batch_vec, slot] = x.astype(np.uint8)
    mask = np.zeros((len(objects), nB + 2), dtype=bool)
    mask[batch_vec, slot] = True
    # the edge list is not needed once rows carry adjacency, but it is collated as the
    # list-of-graphs path would; keep a consistency check on its size
    if edge_index.shape[1] != int(sum(o.edge_index.shape[1] for o in objects)):
        raise CheckFailed("edge list collation lost edges")
    return TokenBatch(tokens, mask, n_ctx, n_max)


def batches_equal(a, b):
    return (
        np.array_equal(a.tokens, b.tokens)
        and np.array_equal(a.valid_mask, b.valid_mask)
        and np.array_equal(a.n_b, b.n_b)
        and a.n_max == b.n_max
    )


def _time(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    gc.collect()
    tracemalloc.start()
    fn()
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return times, peak


def bench_collation(batch_sizes=(64, 256, 1024, 4096), repeats=30, warmup=3, pool_size=512,
                    sampler_cfg=None, graph=None, seed=0):
    """Time both collation backends on identical inputs; return one dict row per (backend, size).

    Outputs of the two backends are compared bit for bit first and any
    mismatch aborts the run.
    """
    set_determinism()
    cfg = sampler_cfg or SamplerConfig(depth=1, fanout=20, budget=40)
    g = graph or heavy_tailed_graph(3000, 8.0, seed=seed)
    pool = sample_pool(g, pool_size, cfg, seed)
    n_max = cfg.budget
    mats = [encode(s, n_max) for s in pool]
    objs = [to_graph_object(m, s) for m, s in zip(mats, pool)]
    rows = []
    for size in batch_sizes:
        idx = np.arange(size) % len(pool)
        m_in = [mats[i] for i in idx]
        o_in = [objs[i] for i in idx]
        if not batches_equal(pad_stack(m_in), concat_objects(o_in, n_max)):
            raise CheckFailed(f"collation backends disagree at batch size {size}")
        for backend, fn in (("pad_stack", lambda: pad_stack(m_in)),
                            ("concat_objects", lambda: concat_objects(o_in, n_max))):
            times, peak = _time(fn, repeats, warmup)
            rows.append({"backend": backend, "batch_size": size, "median_s": statistics.median(times),
                         "p95_s": float(np.percentile(times, 95)), "peak_bytes": peak})
    return rows


def bench_forward(layers=(3, 8), batch_size=100, sampler_cfg=None, hidden=64, heads=4, batches=50,
                  warmup=2, graph=None, seed=0):
    """Mean and std of per-batch training step and inference time for each depth."""
    set_determinism()
    cfg_s = sampler_cfg or SamplerConfig(depth=1, fanout=75, budget=152)
    g = graph or heavy_tailed_graph(3000, 8.0, seed=seed)
    pool = sample_pool(g, batch_size * 4, cfg_s, seed)
    rows = []
    for k in layers:
        cfg = EncoderConfig(hidden=hidden, intermediate=2 * hidden, layers=k, heads=heads, n_max=cfg_s.budget,
                            dtype="float32")
        model = LinkEncoder(cfg, init_params(cfg, substream(seed, "init")))
        opt = torch.optim.AdamW([p for p in model.parameters() if p.requires_grad], lr=1e-4)
        rng = substream(seed, "bench", 2)
        data = []
        for _ in range(min(batches, 8)):
            idx = rng.integers(0, len(pool), size=batch_size)
            batch = collate([encode(pool[i], cfg.n_max) for i in idx])
            labels = torch.from_numpy(rng.integers(0, 2, size=batch_size).astype(np.float32))
            data.append((batch, reconstruct_adjacency(batch).A_tilde.astype(np.float32), labels))

        def train_step(i):
            batch, A, y = data[i % len(data)]
            model.train()
            opt.zero_grad()
            logits, _ = model.forward_batch(batch, A)
            bce_loss(logits, y).backward()
            opt.step()

        def infer_step(i):
            batch, A, _ = data[i % len(data)]
            model.eval()
            with torch.no_grad():
                model.forward_batch(batch, A)

        for phase, step in (("train", train_step), ("infer", infer_step)):
            for i in range(warmup):
                step(i)
            times = []
            for i in range(batches):
                t0 = time.perf_counter()
                step(i)
                times.append(time.perf_counter() - t0)
            rows.append({"layers": k, "phase": phase, "mean_s": float(np.mean(times)),
                         "std_s": float(np.std(times)), "batches": batches})
    return rows


def write_csv(rows, path_or_file, fields):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})
    finally:
        if own:
            fh.close()
