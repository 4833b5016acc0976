"""Immutable undirected graphs in CSR layout, edge splits and their file formats."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ._rng import substream
from .exceptions import ConfigError, GraphFormatError, NodeIdError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph.

    ``indices[indptr[v]:indptr[v + 1]]`` holds the sorted neighbours of ``v``.
    Build instances with :meth:`from_edges` rather than the raw constructor.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        deg = np.diff(self.indptr).astype(np.int64)
        object.__setattr__(self, "degrees", deg)
        for arr in (self.indptr, self.indices, self.degrees):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes, edges):
        """Build from an iterable/array of ``(u, v)`` pairs.

        Self-loops and duplicates (in either orientation) are dropped.
        """
        num_nodes = int(num_nodes)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            bad = e[(e < 0) | (e >= num_nodes)][0]
            raise NodeIdError(f"node id {bad} outside [0, {num_nodes})")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if len(e) else e
        both = np.concatenate([e, e[:, ::-1]]) if len(e) else e
        order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else []
        both = both[order] if len(both) else both
        counts = np.bincount(both[:, 0], minlength=num_nodes) if len(both) else np.zeros(num_nodes, np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = both[:, 1].copy() if len(both) else np.zeros(0, dtype=np.int64)
        return cls(num_nodes, indptr, indices)

    @classmethod
    def from_dense(cls, adjacency):
        a = np.asarray(adjacency)
        u, v = np.nonzero(np.triu(a, 1))
        return cls.from_edges(a.shape[0], np.stack([u, v], axis=1))

    @property
    def num_edges(self):
        return len(self.indices) // 2

    def check_node(self, v):
        if not 0 <= v < self.num_nodes:
            raise NodeIdError(f"node id {v} outside [0, {self.num_nodes})")

    def neighbors(self, v):
        """Sorted neighbour ids of ``v``."""
        self.check_node(v)
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u, v):
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def edges(self):
        """Each undirected edge once, as an ``(E, 2)`` array with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def to_scipy(self):
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes,) * 2)

    def to_dense(self):
        return self.to_scipy().toarray()

    def without_edges(self, pairs):
        """Copy of the graph with ``pairs`` removed (absent pairs are ignored)."""
        drop = {tuple(sorted(map(int, p))) for p in np.asarray(pairs).reshape(-1, 2)}
        kept = [e for e in map(tuple, self.edges().tolist()) if e not in drop]
        return Graph.from_edges(self.num_nodes, kept)

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def _parse_pair(line, lineno):
    parts = line.split()
    if len(parts) != 2:
        raise GraphFormatError(f"expected two integers, got {line!r}", lineno)
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise GraphFormatError(f"non-integer node id in {line!r}", lineno) from None


def load_id_map(path):
    """Read a sidecar ``external_id dense_id`` mapping file."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"expected 'external dense', got {line!r}", lineno)
            mapping[parts[0]] = int(parts[1])
    return mapping


def load_edge_list(path, undirected=True, num_nodes=None, id_map=None):
    """Read a whitespace-separated edge list into a :class:`Graph`.

    Blank lines and ``#`` comments are skipped. Self-loops and duplicate
    edges are dropped and reported through a single warning carrying the
    count. When ``num_nodes`` is None it is inferred as ``max id + 1``.
    ``id_map`` maps external tokens to dense ids (see :func:`load_id_map`).
    """
    if not undirected:
        raise ConfigError("only undirected graphs are supported")
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if id_map is not None:
                parts = s.split()
                if len(parts) != 2:
                    raise GraphFormatError(f"expected two ids, got {s!r}", lineno)
                try:
                    u, v = id_map[parts[0]], id_map[parts[1]]
                except KeyError as exc:
                    raise GraphFormatError(f"unmapped id {exc.args[0]!r}", lineno) from None
            else:
                u, v = _parse_pair(s, lineno)
            if u < 0 or v < 0 or (num_nodes is not None and max(u, v) >= num_nodes):
                raise NodeIdError(f"line {lineno}: node id out of range in {s!r}")
            pairs.append((u, v))
    if num_nodes is None:
        num_nodes = 1 + max((max(p) for p in pairs), default=-1)
    g = Graph.from_edges(num_nodes, pairs)
    dropped = len(pairs) - g.num_edges
    if dropped:
        warnings.warn(f"dropped {dropped} self-loop/duplicate edge line(s) from {path}", stacklevel=2)
        logger.info("dropped %d self-loop/duplicate lines from %s", dropped, path)
    return g


def write_edge_list(g, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in g.edges():
            fh.write(f"{u} {v}\n")


def _canon(pairs):
    p = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.sort(p, axis=1)


@dataclass
class EdgeSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    negatives: dict | None = None

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64).reshape(-1, 2)
        self.valid = np.asarray(self.valid, dtype=np.int64).reshape(-1, 2)
        self.test = np.asarray(self.test, dtype=np.int64).reshape(-1, 2)

    def validate(self, num_nodes):
        seen = {}
        for name in ("train", "valid", "test"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
                raise NodeIdError(f"{name} split references a node outside [0, {num_nodes})")
            for pair in map(tuple, _canon(arr).tolist()):
                if seen.setdefault(pair, name) != name:
                    raise ConfigError(f"pair {pair} appears in both {seen[pair]} and {name}")
        return self

    def observed_graph(self, num_nodes, include_valid=False):
        """Graph visible to samplers and heuristics: train edges, optionally plus valid."""
        edges = [self.train]
        if include_valid:
            edges.append(self.valid)
        return Graph.from_edges(num_nodes, np.concatenate(edges))


def split_edges(g, fractions, seed):
    """Randomly partition the edges of ``g`` into train/valid/test.

    Valid and test sizes are rounded to the nearest integer; train absorbs
    the remainder.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or (fr < 0).any() or not np.isclose(fr.sum(), 1.0) or fr[0] <= 0:
        raise ConfigError(f"invalid split fractions {tuple(fractions)}")
    edges = g.edges()
    rng = substream(seed, "split")
    edges = edges[rng.permutation(len(edges))]
    n_valid = int(round(fr[1] * len(edges)))
    n_test = int(round(fr[2] * len(edges)))
    n_train = len(edges) - n_valid - n_test
    return EdgeSplit(
        train=edges[:n_train],
        valid=edges[n_train:n_train + n_valid],
        test=edges[n_train + n_valid:],
    )


def write_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in ("train", "valid", "test"):
            fh.write(f"#{name}\n")
            for u, v in getattr(split, name):
                fh.write(f"{u} {v}\n")


def read_split(path):
    sections = {"train": [], "valid": [], "test": []}
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                current = s[1:].strip()
                if current not in sections:
                    raise GraphFormatError(f"unknown section {s!r}", lineno)
                continue
            if current is None:
                raise GraphFormatError("edge before any #train/#valid/#test header", lineno)
            sections[current].append(_parse_pair(s, lineno))
    return EdgeSplit(**sections)


def write_negatives(negatives, path):
    """Write ``{(u, v): [(a, b), ...]}`` as ``u v : a b ; c d ; ...`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v), negs in negatives.items():
            body = " ; ".join(f"{a} {b}" for a, b in negs)
            fh.write(f"{u} {v} : {body}\n")


def read_negatives(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            head, sep, tail = s.partition(":")
            if not sep:
                raise GraphFormatError("missing ':' separator", lineno)
            pos = _parse_pair(head, lineno)
            negs = [_parse_pair(chunk, lineno) for chunk in tail.split(";") if chunk.strip()]
            if not negs:
                raise GraphFormatError("positive without negatives", lineno)
            out[pos] = np.asarray(negs, dtype=np.int64)
    return out
