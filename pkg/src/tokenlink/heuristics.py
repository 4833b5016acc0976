"""Pairwise link heuristics on the full observed graph and their regression-target scaling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, ConvergenceError

UNREACHABLE = math.inf
KATZ_DENSE_LIMIT = 2000
KATZ_TRUNCATION = 64


class HeuristicKind(str, enum.Enum):
    CN = "CN"
    AA = "AA"
    RA = "RA"
    KATZ = "Katz"
    SPD = "SPD"
    PAGERANK = "PageRankPair"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for k in cls:
            if str(value).lower() in (k.value.lower(), k.name.lower()):
                return k
        raise ConfigError(f"unknown heuristic kind {value!r}")

    @property
    def is_local(self):
        return self in (HeuristicKind.CN, HeuristicKind.AA, HeuristicKind.RA)


@dataclass(frozen=True)
class NormalizationSpec:
    kind: HeuristicKind
    epsilon: float = 1e-20
    clip_percentile: float | None = None  # None: 99.99 for CN/AA/RA, 99 for Katz/PageRankPair
    katz_beta: float = 0.005
    pr_alpha: float = 0.85
    spd_penalty_factor: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "kind", HeuristicKind.parse(self.kind))
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.clip_percentile is not None and not 0 < self.clip_percentile <= 100:
            raise ConfigError("clip_percentile must lie in (0, 100]")

    @property
    def percentile(self):
        if self.clip_percentile is not None:
            return self.clip_percentile
        return 99.99 if self.kind.is_local else 99.0


def _pair(g, u, v):
    g.check_node(u)
    g.check_node(v)
    if u == v:
        raise ValueError("heuristics are defined for distinct endpoints")


def _shared(g, u, v):
    return np.intersect1d(g.neighbors(u), g.neighbors(v), assume_unique=True)


def common_neighbors(g, u, v):
    _pair(g, u, v)
    return int(len(_shared(g, u, v)))


def adamic_adar(g, u, v):
    # a shared neighbour has degree >= 2, so log(deg) > 0
    _pair(g, u, v)
    w = _shared(g, u, v)
    return float(np.sum(1.0 / np.log(g.degrees[w])))


def resource_allocation(g, u, v):
    _pair(g, u, v)
    w = _shared(g, u, v)
    return float(np.sum(1.0 / g.degrees[w]))


def _check_katz_beta(g, beta):
    dmax = int(g.degrees.max()) if g.num_nodes else 0
    if not beta > 0 or beta * max(dmax, 1) >= 1:
        raise ConfigError(f"Katz needs 0 < beta * max_degree < 1 (beta={beta}, max_degree={dmax})")


def _katz_mode(g, mode):
    if mode is None:
        return "closed_form" if g.num_nodes <= KATZ_DENSE_LIMIT else "truncated"
    if mode not in ("closed_form", "truncated"):
        raise ConfigError(f"unknown Katz mode {mode!r}")
    return mode


def _katz_columns(g, cols, beta, mode, max_length):
    """Katz scores of every node against each node in ``cols``: shape (M, len(cols))."""
    a = g.to_scipy()
    m = g.num_nodes
    rhs = np.zeros((m, len(cols)))
    rhs[cols, np.arange(len(cols))] = 1.0
    if mode == "closed_form":
        lu = spla.splu(sp.csc_matrix(sp.identity(m) - beta * a))
        return lu.solve(rhs) - rhs
    acc = np.zeros_like(rhs)
    x = rhs
    for _ in range(max_length):
        x = beta * (a @ x)
        acc += x
    return acc


def katz(g, u, v, beta=0.005, mode=None, max_length=KATZ_TRUNCATION):
    """Damped walk count sum_{l>=1} beta^l (A^l)_{uv}.

    ``mode`` is ``"closed_form"`` (entry of (I - beta A)^{-1} - I),
    ``"truncated"`` (first ``max_length`` terms) or None for the size-based default.
    """
    _pair(g, u, v)
    _check_katz_beta(g, beta)
    u, v = min(u, v), max(u, v)
    col = _katz_columns(g, np.array([v]), beta, _katz_mode(g, mode), max_length)
    return float(col[u, 0])


def bfs_distances(g, source):
    """Hop distances from ``source``; -1 marks unreachable nodes."""
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source])
    level = 0
    while len(frontier):
        level += 1
        starts, ends = g.indptr[frontier], g.indptr[frontier + 1]
        nbrs = np.concatenate([g.indices[s:e] for s, e in zip(starts, ends)]) if len(frontier) else frontier
        nbrs = np.unique(nbrs)
        nbrs = nbrs[dist[nbrs] < 0]
        dist[nbrs] = level
        frontier = nbrs
    return dist


def shortest_path_distance(g, u, v):
    """BFS hop count, or :data:`UNREACHABLE` when no path exists."""
    _pair(g, u, v)
    d = bfs_distances(g, u)[v]
    return UNREACHABLE if d < 0 else int(d)


def max_component_diameter(g):
    """Largest finite shortest-path distance over all connected components."""
    best = 0
    for s in range(g.num_nodes):
        if g.degrees[s]:
            best = max(best, int(bfs_distances(g, s).max()))
    return best


def pagerank(g, alpha=0.85, tol=1e-12, max_iter=1000):
    """Stationary distribution of the damped random walk with uniform teleportation.

    Degree-0 nodes spread their mass uniformly over all nodes.
    """
    if not 0 < alpha < 1:
        raise ConfigError("PageRank damping must lie in (0, 1)")
    m = g.num_nodes
    deg = g.degrees.astype(np.float64)
    dangling = deg == 0
    inv = np.divide(1.0, deg, out=np.zeros(m), where=~dangling)
    at = g.to_scipy()  # symmetric, so A^T = A
    p = np.full(m, 1.0 / m)
    residual = np.inf
    for _ in range(max_iter):
        nxt = alpha * (at @ (p * inv) + p[dangling].sum() / m) + (1 - alpha) / m
        residual = np.abs(nxt - p).sum()
        p = nxt
        if residual < tol:
            return p / p.sum()
    raise ConvergenceError(f"PageRank did not converge in {max_iter} iterations", residual)


def pair_score(kind, g, u, v, spec=None):
    """Raw heuristic score of ``kind`` for the pair; symmetric in ``(u, v)``."""
    kind = HeuristicKind.parse(kind)
    spec = spec or NormalizationSpec(kind)
    u, v = min(u, v), max(u, v)
    if kind is HeuristicKind.CN:
        return float(common_neighbors(g, u, v))
    if kind is HeuristicKind.AA:
        return adamic_adar(g, u, v)
    if kind is HeuristicKind.RA:
        return resource_allocation(g, u, v)
    if kind is HeuristicKind.KATZ:
        return katz(g, u, v, beta=spec.katz_beta)
    if kind is HeuristicKind.SPD:
        return float(shortest_path_distance(g, u, v))
    _pair(g, u, v)
    p = pagerank(g, alpha=spec.pr_alpha)
    return float(p[u] * p[v])


def pair_scores(kind, g, pairs, spec=None, katz_mode=None):
    """Vectorised :func:`pair_score` over an ``(n, 2)`` array of pairs.

    Shared work (PageRank vector, Katz factorisation, BFS trees) is computed once.
    """
    kind = HeuristicKind.parse(kind)
    spec = spec or NormalizationSpec(kind)
    p = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
    if len(p) == 0:
        return np.zeros(0)
    if p.min() < 0 or p.max() >= g.num_nodes:
        g.check_node(int(p.max()) if p.max() >= g.num_nodes else int(p.min()))
    if (p[:, 0] == p[:, 1]).any():
        raise ValueError("heuristics are defined for distinct endpoints")
    u, v = p[:, 0], p[:, 1]
    if kind.is_local:
        a = g.to_scipy()
        shared = a[u].multiply(a[v])
        if kind is HeuristicKind.CN:
            return np.asarray(shared.sum(axis=1)).ravel()
        deg = g.degrees.astype(np.float64)
        safe = np.maximum(deg, 2.0)
        w = 1.0 / np.log(safe) if kind is HeuristicKind.AA else 1.0 / np.maximum(deg, 1.0)
        return np.asarray(shared @ w).ravel()
    if kind is HeuristicKind.KATZ:
        _check_katz_beta(g, spec.katz_beta)
        cols, inv = np.unique(v, return_inverse=True)
        scores = _katz_columns(g, cols, spec.katz_beta, _katz_mode(g, katz_mode), KATZ_TRUNCATION)
        return scores[u, inv]
    if kind is HeuristicKind.SPD:
        out = np.empty(len(p))
        for s in np.unique(u):
            dist = bfs_distances(g, s)
            sel = u == s
            d = dist[v[sel]].astype(np.float64)
            d[d < 0] = UNREACHABLE
            out[sel] = d
        return out
    pr = pagerank(g, alpha=spec.pr_alpha)
    return pr[u] * pr[v]


class HeuristicTargetScaler(TransformerMixin, BaseEstimator):
    """Log / range-map / clip scaling of raw heuristic scores into regression targets.

    Statistics are learned in :meth:`fit` (on training-split scores) and reused
    unchanged by :meth:`transform`.

    - CN, AA, RA: ``log(1 + s)`` divided by the ``clip_percentile`` (default
      99.99th) percentile of the fitted log scores, clipped to ``[0, 1]``.
    - Katz, PageRankPair: ``log(s + epsilon)``, z-scored, clipped above at the
      ``clip_percentile`` (default 99th) percentile of the fitted z-scores.
    - SPD: ``log(1 + d)``; unreachable pairs get ``log(1 + penalty_factor * d_max)``.
    """

    def __init__(self, kind="CN", epsilon=1e-20, clip_percentile=None, d_max=None, penalty_factor=1.5):
        self.kind = kind
        self.epsilon = epsilon
        self.clip_percentile = clip_percentile
        self.d_max = d_max
        self.penalty_factor = penalty_factor

    @classmethod
    def from_spec(cls, spec, d_max=None):
        return cls(spec.kind, spec.epsilon, spec.clip_percentile, d_max, spec.spd_penalty_factor)

    def _spec(self):
        return NormalizationSpec(self.kind, epsilon=self.epsilon, clip_percentile=self.clip_percentile,
                                 spd_penalty_factor=self.penalty_factor)

    def _log(self, s, kind):
        if kind.is_local:
            return np.log1p(s)
        if kind is HeuristicKind.SPD:
            if self.d_max is None:
                raise ConfigError("SPD scaling needs d_max")
            out = np.log1p(np.where(np.isinf(s), 0.0, s))
            out[np.isinf(s)] = math.log1p(self.penalty_factor * self.d_max)
            return out
        return np.log(s + self.epsilon)

    def fit(self, X, y=None):
        s = _as_scores(X)
        if s.size == 0:
            raise ValueError("cannot fit target scaling on an empty score list")
        spec = self._spec()
        kind = spec.kind
        t = self._log(s, kind)
        self.kind_ = kind
        if kind.is_local:
            self.upper_ = float(np.percentile(t, spec.percentile))
        elif kind is not HeuristicKind.SPD:
            self.mean_ = float(t.mean())
            self.std_ = float(t.std())
            z = self._standardize(t)
            self.clip_ = float(np.percentile(z, spec.percentile))
        self.n_fitted_ = s.size
        return self

    def _standardize(self, t):
        # rounding in the mean leaves a ~1e-17 spread on constant inputs; treat that as constant
        if not self.std_ > 1e-12 * max(1.0, abs(self.mean_)):
            return np.zeros_like(t)
        return (t - self.mean_) / self.std_

    def transform(self, X, clip=True):
        check_is_fitted(self, "kind_")
        s = _as_scores(X)
        t = self._log(s, self.kind_)
        if self.kind_.is_local:
            if not self.upper_ > 0:
                return np.zeros_like(t)
            out = t / self.upper_
            return np.clip(out, 0.0, 1.0) if clip else out
        if self.kind_ is HeuristicKind.SPD:
            return t
        z = self._standardize(t)
        return np.minimum(z, self.clip_) if clip else z


def _as_scores(X):
    s = np.asarray(X, dtype=np.float64).ravel()
    if np.isnan(s).any():
        raise ValueError("heuristic scores contain NaN")
    return s


def normalize_targets(raw, spec, d_max=None):
    """Fit-and-transform shortcut for a single score list."""
    return HeuristicTargetScaler.from_spec(spec, d_max=d_max).fit_transform(raw)
