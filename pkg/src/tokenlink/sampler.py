"""Budgeted link-centric subgraph sampling around a query pair."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, GraphFormatError


@dataclass(frozen=True)
class SamplerConfig:
    depth: int = 1
    fanout: int = 20
    budget: int = 32
    exclude_query_edge: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.fanout < 1 or self.budget < 2:
            raise ConfigError(f"invalid sampler config {self}")


@dataclass(frozen=True, eq=False)
class SubgraphSample:
    """Sampled nodes in local index order plus their induced 0/1 adjacency.

    ``node_index_to_global[0]`` is the query source and ``[1]`` the destination.
    """

    node_index_to_global: np.ndarray
    local_adjacency: np.ndarray

    @property
    def N(self):
        return len(self.node_index_to_global)

    def permuted(self, order):
        """Reindex so that new local index ``i`` holds old index ``order[i]``."""
        order = np.asarray(order)
        return SubgraphSample(self.node_index_to_global[order],
                              self.local_adjacency[np.ix_(order, order)])


def _expand(g, seeds, depth, fanout, rng):
    """Return BFS layers (list of arrays) starting from ``seeds``."""
    visited = set(int(s) for s in seeds)
    layers = [np.asarray(seeds, dtype=np.int64)]
    frontier = layers[0]
    for _ in range(depth):
        nxt = []
        for node in frontier:
            nb = g.indices[g.indptr[node]:g.indptr[node + 1]]
            if len(nb) > fanout:
                nb = rng.choice(nb, size=fanout, replace=False)
            for w in nb.tolist():
                if w not in visited:
                    visited.add(w)
                    nxt.append(w)
        if not nxt:
            break
        frontier = np.asarray(nxt, dtype=np.int64)
        layers.append(frontier)
    return layers


def induced_adjacency(g, nodes):
    """Dense 0/1 adjacency of ``g`` restricted to ``nodes`` (in the given order)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    n = len(nodes)
    order = np.argsort(nodes)
    sorted_nodes = nodes[order]
    adj = np.zeros((n, n), dtype=np.uint8)
    for i, node in enumerate(nodes.tolist()):
        nb = g.indices[g.indptr[node]:g.indptr[node + 1]]
        loc = np.searchsorted(sorted_nodes, nb)
        loc = np.minimum(loc, n - 1)
        hit = sorted_nodes[loc] == nb
        adj[i, order[loc[hit]]] = 1
    return adj


def sample_subgraph(g, u, v, cfg, rng):
    """Extract the subgraph around query ``(u, v)``.

    Nodes are gathered by a ``cfg.depth``-layer expansion from both endpoints,
    visiting at most ``cfg.fanout`` uniformly chosen neighbours per expanded node.
    When more than ``cfg.budget`` nodes are gathered, closer layers are kept
    first and the layer crossing the budget is subsampled uniformly. The
    endpoints take local indices 0 and 1; the other nodes get a uniformly
    random order over ``2..N-1``.
    """
    g.check_node(u)
    g.check_node(v)
    if u == v:
        raise ValueError("query endpoints must differ")
    layers = _expand(g, [u, v], cfg.depth, cfg.fanout, rng)
    kept = [np.array([u, v], dtype=np.int64)]
    room = cfg.budget - 2
    for layer in layers[1:]:
        if room <= 0:
            break
        if len(layer) > room:
            layer = rng.choice(layer, size=room, replace=False)
        kept.append(layer)
        room -= len(layer)
    rest = np.concatenate(kept[1:]) if len(kept) > 1 else np.zeros(0, dtype=np.int64)
    nodes = np.concatenate([kept[0], rng.permutation(rest)])
    adj = induced_adjacency(g, nodes)
    if cfg.exclude_query_edge:
        adj[0, 1] = adj[1, 0] = 0
    return SubgraphSample(nodes, adj)


def resample_indices(sample, rng):
    """Redraw the order of non-endpoint nodes; endpoints stay at 0 and 1."""
    if sample.N <= 3:
        return sample
    order = np.concatenate([[0, 1], 2 + rng.permutation(sample.N - 2)])
    return sample.permuted(order)


def endpoint_fixed_orders(n):
    """Yield every order of ``range(n)`` that keeps 0 and 1 in place."""
    from itertools import permutations

    for rest in permutations(range(2, n)):
        yield np.array((0, 1) + rest)


_CACHE_MAGIC = b"TLSMP1\0\0"


def write_sample_cache(samples, path):
    """Binary cache: per record N (u32), N global ids (i64), packed N*N adjacency bits."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<Q", len(samples)))
        for s in samples:
            fh.write(struct.pack("<I", s.N))
            fh.write(s.node_index_to_global.astype("<i8").tobytes())
            bits = np.packbits(s.local_adjacency.astype(np.uint8).ravel())
            fh.write(struct.pack("<I", len(bits)))
            fh.write(bits.tobytes())


def read_sample_cache(path):
    out = []
    with open(path, "rb") as fh:
        if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise GraphFormatError(f"{path} is not a sample cache")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            ids = np.frombuffer(fh.read(8 * n), dtype="<i8").astype(np.int64)
            (nbytes,) = struct.unpack("<I", fh.read(4))
            bits = np.frombuffer(fh.read(nbytes), dtype=np.uint8)
            adj = np.unpackbits(bits)[: n * n].reshape(n, n)
            out.append(SubgraphSample(ids, adj))
    return out


__all__ = [
    "SamplerConfig",
    "SubgraphSample",
    "sample_subgraph",
    "resample_indices",
    "induced_adjacency",
    "endpoint_fixed_orders",
    "write_sample_cache",
    "read_sample_cache",
]
