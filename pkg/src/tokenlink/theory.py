"""Executable checks of the encoder's structural guarantees.

* relabeling invariance of the output distribution over random index orders,
* the reduction to sum-aggregation message passing and its common-neighbour
  and walk-count dot-product identities,
* mutual coherence of token vectors against the Welch lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from scipy.stats import energy_distance

from ._rng import substream
from .exceptions import CheckFailed, ConfigError
from .graph import Graph
from .model import EncoderConfig, LinkEncoder, init_params
from .sampler import SamplerConfig, endpoint_fixed_orders, sample_subgraph
from .tokenizer import collate, encode, reconstruct_adjacency

EXHAUSTIVE_LIMIT = 8
MUTANTS = ("label_offset", "label_sorted_positions")


def relabel(g, perm):
    """Graph with node ``i`` renamed to ``perm[i]``."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(g.num_nodes)):
        raise ValueError("perm must be a permutation of the node ids")
    e = g.edges()
    return Graph.from_edges(g.num_nodes, perm[e] if len(e) else e)


def _offsets(sample_ids, n_b, T, d):
    """Per-token offsets derived from global node ids (a deliberate label leak)."""
    out = np.zeros((len(sample_ids), T, d))
    freq = np.arange(1, d + 1)
    for b, ids in enumerate(sample_ids):
        vec = 0.5 * np.sin(np.outer(np.asarray(ids) + 1.0, freq) * 0.37)
        out[b, : len(ids)] = vec
        out[b, T - 2:] = vec[:2]
    return out


def _positional(n, T, d):
    freq = np.arange(1, d + 1)
    out = np.zeros((T, d))
    out[:n] = 0.5 * np.cos(np.outer(np.arange(n) + 1.0, freq) * 0.53)
    return out


def score_orders(model, sample, orders, mutant=None):
    """Logits of ``model`` for ``sample`` reindexed by each order in ``orders``.

    ``mutant`` injects a deliberate defect: ``label_offset`` adds an offset
    keyed by each token's global node id; ``label_sorted_positions`` ignores
    the given order, sorts non-endpoints by global id and adds positional
    offsets. Both make the output depend on node labels.
    """
    if mutant is not None and mutant not in MUTANTS:
        raise ConfigError(f"unknown mutant {mutant!r}")
    samples = []
    for order in orders:
        s = sample.permuted(order)
        if mutant == "label_sorted_positions":
            rest = 2 + np.argsort(s.node_index_to_global[2:], kind="stable")
            s = s.permuted(np.concatenate([[0, 1], rest]))
        samples.append(s)
    n_max = model.cfg.n_max
    batch = collate([encode(s, n_max) for s in samples])
    offset = None
    if mutant == "label_offset":
        offset = _offsets([s.node_index_to_global for s in samples], batch.n_b, batch.N_B + 2, model.cfg.hidden)
    elif mutant == "label_sorted_positions":
        offset = np.broadcast_to(_positional(sample.N, batch.N_B + 2, model.cfg.hidden),
                                 (batch.B, batch.N_B + 2, model.cfg.hidden))
    model.eval()
    with torch.no_grad():
        logits, _ = model.forward_batch(batch, input_offset=offset)
    return logits.numpy().astype(np.float64)


@dataclass
class InvarianceReport:
    mode: str
    max_multiset_discrepancy: float
    original: np.ndarray
    relabeled: np.ndarray
    passed: bool
    n_nodes: int
    tolerance: float = 1e-9
    p_value: float | None = None
    statistic: float | None = None
    trials: int | None = None

    def to_dict(self):
        return {
            "mode": self.mode, "max_multiset_discrepancy": self.max_multiset_discrepancy,
            "passed": self.passed, "n_nodes": self.n_nodes, "tolerance": self.tolerance,
            "p_value": self.p_value, "statistic": self.statistic, "trials": self.trials,
            "n_outputs": int(len(self.original)),
        }


def _full_sampler(g):
    deg = int(g.degrees.max()) if g.num_nodes else 1
    return SamplerConfig(depth=max(1, g.num_nodes), fanout=max(1, deg), budget=max(2, g.num_nodes))


def energy_permutation_test(x, y, permutations=500, rng=None):
    """Energy distance between two 1-d samples with a permutation p-value."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    stat = energy_distance(x, y)
    pooled = np.concatenate([x, y])
    hits = 0
    for _ in range(permutations):
        p = rng.permutation(pooled)
        if energy_distance(p[: len(x)], p[len(x):]) >= stat - 1e-15:
            hits += 1
    return stat, (hits + 1) / (permutations + 1)


def invariance_test(model, g, u, v, perm=None, mode="exhaustive", sampler_cfg=None, seed=0, mutant=None,
                    tolerance=1e-9, trials=200, permutations=500, alpha=0.01):
    """Compare outputs for ``(g, u, v)`` and its relabeling ``(perm(g), perm[u], perm[v])``.

    ``exhaustive``: one sample is drawn per side with the same sampler
    randomness, which makes the node sets correspond under ``perm`` whenever
    the sampler keeps every reachable node (the default configuration); the
    logits over all ``(N - 2)!`` endpoint-fixed orders are compared as sorted
    multisets. ``statistical``: ``trials`` independent samples per side are
    compared with an energy-distance permutation test (pass when ``p > alpha``).
    """
    rng = substream(seed, "check")
    perm = np.arange(g.num_nodes) if perm is None else np.asarray(perm)
    g2 = relabel(g, perm)
    u2, v2 = int(perm[u]), int(perm[v])
    cfg = sampler_cfg or replace(_full_sampler(g), budget=min(g.num_nodes, model.cfg.n_max))
    if mode == "exhaustive":
        s1 = sample_subgraph(g, u, v, cfg, substream(seed, "sampler", 0))
        s2 = sample_subgraph(g2, u2, v2, cfg, substream(seed, "sampler", 0))
        if s1.N > EXHAUSTIVE_LIMIT:
            raise ConfigError(f"exhaustive mode needs N <= {EXHAUSTIVE_LIMIT}, sample has {s1.N}")
        if sorted(perm[s1.node_index_to_global].tolist()) != sorted(s2.node_index_to_global.tolist()):
            raise ConfigError("sampled node sets do not correspond; use a sampler that keeps all nodes")
        orders = list(endpoint_fixed_orders(s1.N))
        a = np.sort(score_orders(model, s1, orders, mutant))
        b = np.sort(score_orders(model, s2, orders, mutant))
        disc = float(np.max(np.abs(a - b)))
        return InvarianceReport("exhaustive", disc, a, b, disc <= tolerance, s1.N, tolerance)
    if mode != "statistical":
        raise ConfigError(f"unknown invariance mode {mode!r}")
    outs = []
    for graph, (p, q), tag in ((g, (u, v), 0), (g2, (u2, v2), 1)):
        r = substream(seed, "sampler", 1 + tag)
        vals = []
        for _ in range(trials):
            s = sample_subgraph(graph, p, q, cfg, r)
            vals.append(score_orders(model, s, [np.arange(s.N)], mutant)[0])
        outs.append(np.array(vals))
    stat, pval = energy_permutation_test(outs[0], outs[1], permutations, rng)
    disc = float(np.max(np.abs(np.sort(outs[0]) - np.sort(outs[1]))))
    return InvarianceReport("statistical", disc, outs[0], outs[1], pval > alpha, -1, tolerance,
                            p_value=pval, statistic=stat, trials=trials)


# --- reduction to message passing ---------------------------------------------------------------


def configure_degenerate(n_max, hidden, layers=1, scale=-1.0, vectors=None, seed=0):
    """Encoder whose every layer reduces to ``H' = H + scale * (A H)`` in ``attention_off`` mode.

    ``A`` includes self-loops, so ``scale = -1`` leaves ``H' = -(adjacency @ H)``.

    Input rows for the identifier block are ``vectors`` (default: orthonormal
    rows, needs ``hidden >= n_max``); the adjacency and role rows are zero,
    the operator is unnormalised and the readout is zero.
    """
    cfg = EncoderConfig(hidden=hidden, intermediate=max(1, hidden), layers=layers, heads=1, n_max=n_max,
                        normalize_adjacency=False, layernorm=False)
    params = init_params(cfg, substream(seed, "init"))
    W0 = np.zeros((cfg.token_dim, hidden))
    if vectors is None:
        if hidden < n_max:
            raise ConfigError("orthonormal token vectors need hidden >= n_max")
        q, _ = np.linalg.qr(substream(seed, "init", 1).standard_normal((hidden, hidden)))
        vectors = q[:n_max]
    W0[:n_max] = np.asarray(vectors)
    params["input_projection"] = W0
    for k in range(layers):
        params[f"blocks.{k}.propagation"] = scale * np.eye(hidden)
    params["readout_weight"] = np.zeros(2 * hidden)
    return LinkEncoder(cfg, params)


def sum_mpnn_reference(batch, input_projection, propagations, offset=None):
    """Hand-rolled ``H <- H + (A H) P`` over the batch (numpy, no attention)."""
    A = reconstruct_adjacency(batch, normalize=False).A_tilde
    m = batch.valid_mask[..., None].astype(np.float64)
    H = batch.tokens.astype(np.float64) @ np.asarray(input_projection)
    if offset is not None:
        H = H + offset
    H = H * m
    for P in propagations:
        H = (H + (A @ H) @ P) * m
    return H


def endpoint_dot_products(model, batch, offset=None):
    """``h_u . h_v`` of the two task tokens after the degenerate forward pass."""
    with torch.no_grad():
        _, trace = model.forward_batch(batch, mode="attention_off", input_offset=offset)
    H = trace.H[-1].numpy()
    return np.einsum("bd,bd->b", H[:, -2], H[:, -1])


def _pairs(g):
    iu, ju = np.triu_indices(g.num_nodes, 1)
    return np.stack([iu, ju], axis=1)


def walk_count_oracle(g, u, v, steps):
    """Sum over ``k`` of ``walks(u, k) * walks(v, k)`` on ``g`` with the edge ``(u, v)`` removed.

    Walks of length ``steps`` are enumerated explicitly.
    """
    n = g.num_nodes
    nbrs = [set(g.neighbors(i).tolist()) for i in range(n)]
    nbrs[u].discard(v)
    nbrs[v].discard(u)

    def walks(src):
        counts = {src: 1}
        for _ in range(steps):
            nxt = {}
            for node, c in counts.items():
                for w in nbrs[node]:
                    nxt[w] = nxt.get(w, 0) + c
            counts = nxt
        return counts

    cu, cv = walks(u), walks(v)
    return float(sum(c * cv.get(k, 0) for k, c in cu.items()))


def cn_estimator_check(d, graphs, steps=1, seed=0):
    """Largest ``|h_u . h_v - oracle|`` over every pair of every graph, orthonormal vectors.

    With one step the oracle is the common-neighbour count; with ``steps``
    it is :func:`walk_count_oracle`. Needs ``d >= max graph size``.
    """
    worst = 0.0
    for g in graphs:
        n = g.num_nodes
        model = configure_degenerate(n_max=max(2, n), hidden=d, layers=steps, seed=seed)
        cfg = SamplerConfig(depth=steps, fanout=max(1, int(g.degrees.max(initial=1))), budget=max(2, n))
        pairs = _pairs(g)
        rng = substream(seed, "sampler")
        batch = collate([encode(sample_subgraph(g, int(a), int(b), cfg, rng), model.cfg.n_max) for a, b in pairs])
        dots = endpoint_dot_products(model, batch)
        # A carries self-loops, so H - A H = -(neighbour sum); the signs cancel in the product
        oracle = np.array([walk_count_oracle(g, int(a), int(b), steps) for a, b in pairs])
        worst = max(worst, float(np.max(np.abs(dots - oracle))))
    return worst


@dataclass
class MonteCarloReport:
    mean: float
    stderr: float
    target: float
    trials: int

    @property
    def deviation(self):
        return abs(self.mean - self.target)

    @property
    def passed(self):
        return self.deviation <= 3 * self.stderr + 1e-12


def cn_monte_carlo(g, u, v, d=64, trials=10_000, seed=0):
    """Mean of one-step ``h_u . h_v`` with fresh Rademacher/sqrt(d) token vectors per trial."""
    from .heuristics import common_neighbors

    rng = substream(seed, "check")
    n = g.num_nodes
    cfg = SamplerConfig(depth=1, fanout=max(1, int(g.degrees.max())), budget=max(2, n))
    sample = sample_subgraph(g, u, v, cfg, substream(seed, "sampler"))
    model = configure_degenerate(n_max=max(2, n), hidden=d, layers=1, vectors=np.zeros((max(2, n), d)))
    batch = collate([encode(sample, model.cfg.n_max)] * trials)
    T = batch.N_B + 2
    vecs = rng.choice([-1.0, 1.0], size=(trials, sample.N, d)) / math.sqrt(d)
    offset = np.zeros((trials, T, d))
    offset[:, : sample.N] = vecs
    offset[:, T - 2:] = vecs[:, :2]
    dots = endpoint_dot_products(model, batch, offset)
    return MonteCarloReport(float(dots.mean()), float(dots.std(ddof=1) / math.sqrt(trials)),
                            float(common_neighbors(g, u, v)), trials)


# --- coherence ----------------------------------------------------------------------------------


def welch_bound(N, d):
    """Lower bound on the mutual coherence of ``N`` unit vectors in ``R^d``."""
    if not N > d >= 1:
        raise ValueError(f"welch_bound needs N > d >= 1, got N={N}, d={d}")
    return math.sqrt((N - d) / (d * (N - 1)))


def mutual_coherence(vectors, atol=1e-9):
    """Largest ``|<r_i, r_j>|`` over distinct rows of ``vectors`` (rows must be unit norm)."""
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or len(V) < 2:
        raise ValueError("need at least two vectors as rows of a 2-d array")
    norms = np.linalg.norm(V, axis=1)
    if np.max(np.abs(norms - 1.0)) > atol:
        raise ValueError("vectors must have unit norm")
    G = np.abs(V @ V.T)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


@dataclass
class CoherenceReport:
    mu: float
    welch: float | None
    N: int
    d: int
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.welch is None or self.mu >= self.welch - 1e-12

    def to_dict(self):
        return {"mu": self.mu, "welch": self.welch, "N": self.N, "d": self.d, "passed": self.passed, **self.extra}


def coherence_report(vectors):
    V = np.asarray(vectors, dtype=np.float64)
    N, d = V.shape
    return CoherenceReport(mutual_coherence(V), welch_bound(N, d) if N > d else None, N, d)


def init_coherence(cfg, seed=0):
    """Coherence of the identifier-block rows of a freshly initialised input projection."""
    from .model import init_input_projection

    W0 = init_input_projection(cfg, substream(seed, "init"))[: cfg.n_max]
    return coherence_report(W0 / np.linalg.norm(W0, axis=1, keepdims=True))


def require(flag, message):
    if not flag:
        raise CheckFailed(message)
