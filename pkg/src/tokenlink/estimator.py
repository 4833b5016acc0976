"""Scikit-learn style estimators wrapping the link encoder."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import pair_stream, substream
from .heuristics import HeuristicKind, HeuristicTargetScaler, max_component_diameter, pair_scores
from .model import EncoderConfig, LinkEncoder, init_params
from .sampler import SamplerConfig
from .tokenizer import reconstruct_adjacency
from .trainer import TrainReport, build_batch, fit_encoder, sample_negatives
from .validation import check_binary_labels, check_graph, check_pairs, check_targets


class _EncoderEstimator(BaseEstimator):
    _task = None

    def __init__(self, hidden=64, intermediate=128, layers=2, heads=4, n_max=32, depth=1, fanout=20,
                 exclude_query_edge=True, dropout=0.0, layernorm=True, init_scheme="orthogonal",
                 init_mean=0.1, init_rank=5, freeze_input_projection=True, multiplicative_residual=True,
                 normalize_adjacency=True, learning_rate=1e-3, weight_decay=0.01, batch_size=128,
                 epochs=10, negatives_per_positive=1, accumulation_steps=1, symmetrize=False,
                 random_state=0, dtype="float64", checkpoint_dir=None):
        self.hidden = hidden
        self.intermediate = intermediate
        self.layers = layers
        self.heads = heads
        self.n_max = n_max
        self.depth = depth
        self.fanout = fanout
        self.exclude_query_edge = exclude_query_edge
        self.dropout = dropout
        self.layernorm = layernorm
        self.init_scheme = init_scheme
        self.init_mean = init_mean
        self.init_rank = init_rank
        self.freeze_input_projection = freeze_input_projection
        self.multiplicative_residual = multiplicative_residual
        self.normalize_adjacency = normalize_adjacency
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.negatives_per_positive = negatives_per_positive
        self.accumulation_steps = accumulation_steps
        self.symmetrize = symmetrize
        self.random_state = random_state
        self.dtype = dtype
        self.checkpoint_dir = checkpoint_dir

    @classmethod
    def from_config(cls, cfg, **overrides):
        e, s = cfg.encoder, cfg.sampler
        params = dict(
            hidden=e.hidden, intermediate=e.intermediate, layers=e.layers, heads=e.heads, n_max=e.n_max,
            depth=s.depth, fanout=s.fanout, exclude_query_edge=s.exclude_query_edge, dropout=e.dropout,
            layernorm=e.layernorm, init_scheme=e.init_scheme, init_mean=e.init_mean, init_rank=e.init_rank,
            freeze_input_projection=e.freeze_input_projection,
            multiplicative_residual=e.multiplicative_residual, normalize_adjacency=e.normalize_adjacency,
            learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
            epochs=cfg.epochs, negatives_per_positive=cfg.negatives_per_positive,
            accumulation_steps=cfg.accumulation_steps, random_state=cfg.seed, dtype=e.dtype,
        )
        params.update(overrides)
        est = cls(**params)
        if cfg.heuristic is not None and "kind" in est.get_params():
            est.set_params(kind=cfg.heuristic)
        return est

    def encoder_config(self, feature_dim=0):
        return EncoderConfig(
            hidden=self.hidden, intermediate=self.intermediate, layers=self.layers, heads=self.heads,
            n_max=self.n_max, dropout=self.dropout, use_features=feature_dim > 0, feature_dim=feature_dim,
            layernorm=self.layernorm, init_scheme=self.init_scheme, init_mean=self.init_mean,
            init_rank=self.init_rank, freeze_input_projection=self.freeze_input_projection,
            multiplicative_residual=self.multiplicative_residual,
            normalize_adjacency=self.normalize_adjacency, dtype=self.dtype,
        )

    def sampler_config(self):
        return SamplerConfig(depth=self.depth, fanout=self.fanout, budget=self.n_max,
                             exclude_query_edge=self.exclude_query_edge, seed=self.random_state)

    def _init_encoder(self, feature_dim):
        cfg = self.encoder_config(feature_dim)
        return LinkEncoder(cfg, init_params(cfg, substream(self.random_state, "init")))

    def attach(self, encoder, graph, node_features=None):
        """Use an already trained ``encoder`` (e.g. from a checkpoint) without fitting."""
        self.encoder_ = encoder
        self.graph_ = check_graph(graph)
        self.node_features_ = None if node_features is None else np.asarray(node_features, dtype=np.float64)
        if isinstance(self, ClassifierMixin):
            self.classes_ = np.array([0, 1])
        return self

    def _fit(self, graph, epoch_data, node_features, report):
        self.graph_ = check_graph(graph)
        self.node_features_ = None if node_features is None else np.asarray(node_features, dtype=np.float64)
        fdim = 0 if self.node_features_ is None else self.node_features_.shape[1]
        self.encoder_ = self._init_encoder(fdim)
        self.report_ = fit_encoder(
            self.encoder_, graph, epoch_data, task=self._task, sampler_cfg=self.sampler_config(),
            batch_size=self.batch_size, learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            epochs=self.epochs, seed=self.random_state, accumulation_steps=self.accumulation_steps,
            node_features=self.node_features_, checkpoint_dir=self.checkpoint_dir,
            report=report or TrainReport(seed=self.random_state),
        )
        self.loss_curve_ = list(self.report_.losses)
        return self

    def _raw_scores(self, X, graph=None, seed=None, batch_size=256):
        """Model outputs with sampling seeded per scored pair."""
        check_is_fitted(self, "encoder_")
        graph = self.graph_ if graph is None else check_graph(graph)
        X = check_pairs(X, graph.num_nodes)
        seed = self.random_state if seed is None else seed
        cfg = self.sampler_config()
        out = np.empty(len(X))
        self.encoder_.eval()
        with torch.no_grad():
            for start in range(0, len(X), batch_size):
                chunk = X[start:start + batch_size]
                seeds = [pair_stream(seed, u, v) for u, v in chunk.tolist()]
                batch = build_batch(graph, chunk, cfg, self.n_max, None, node_features=self.node_features_,
                                    seeds=seeds)
                A = reconstruct_adjacency(batch, normalize=self.encoder_.cfg.normalize_adjacency)
                logits, _ = self.encoder_.forward_batch(batch, A)
                out[start:start + len(chunk)] = logits.numpy()
        if self.symmetrize:
            self.symmetrize = False
            try:
                out = 0.5 * (out + self._raw_scores(X[:, ::-1], graph, seed, batch_size))
            finally:
                self.symmetrize = True
        return out


class LinkPredictor(ClassifierMixin, _EncoderEstimator):
    """Binary link classifier trained with BCE on positives and sampled negatives.

    ``fit(X, graph=g)`` treats every row of ``X`` as a positive and draws
    ``negatives_per_positive`` fresh non-edges per positive each epoch;
    ``fit(X, y, graph=g)`` trains on the given labels instead.
    """

    _task = "link_bce"

    def fit(self, X, y=None, graph=None, node_features=None, report=None):
        graph = check_graph(graph)
        X = check_pairs(X, graph.num_nodes)
        self.classes_ = np.array([0, 1])
        if y is not None:
            y = check_binary_labels(y, len(X))

            def epoch_data(epoch):
                return X, y
        else:
            k = self.negatives_per_positive
            pos_labels = np.ones(len(X))

            def epoch_data(epoch):
                neg = sample_negatives(graph, X, k, substream(self.random_state, "negatives", epoch))
                return np.concatenate([X, neg]), np.concatenate([pos_labels, np.zeros(len(neg))])

        return self._fit(graph, epoch_data, node_features, report)

    def decision_function(self, X, graph=None, seed=None):
        """Link logits; the same ``(pair, seed)`` always yields the same score."""
        return self._raw_scores(X, graph, seed)

    def predict_proba(self, X, graph=None, seed=None):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X, graph, seed)))
        return np.stack([1 - p, p], axis=1)

    def predict(self, X, graph=None, seed=None):
        return (self.decision_function(X, graph, seed) > 0).astype(int)


class HeuristicRegressor(RegressorMixin, _EncoderEstimator):
    """Regress scaled pairwise heuristic targets from sampled subgraphs.

    Without ``y``, targets are ``kind`` scores on ``full_graph`` (default:
    ``graph``) for the given pairs plus one fresh negative per pair each epoch,
    scaled by a :class:`HeuristicTargetScaler` fitted on the first epoch's pairs.
    """

    _task = "heuristic_regression"

    def __init__(self, kind="CN", hidden=64, intermediate=128, layers=2, heads=4, n_max=32, depth=1,
                 fanout=20, exclude_query_edge=True, dropout=0.0, layernorm=True, init_scheme="orthogonal",
                 init_mean=0.1, init_rank=5, freeze_input_projection=True, multiplicative_residual=True,
                 normalize_adjacency=True, learning_rate=1e-3, weight_decay=0.01, batch_size=128,
                 epochs=10, negatives_per_positive=1, accumulation_steps=1, symmetrize=False,
                 random_state=0, dtype="float64", checkpoint_dir=None):
        super().__init__(
            hidden=hidden, intermediate=intermediate, layers=layers, heads=heads, n_max=n_max, depth=depth,
            fanout=fanout, exclude_query_edge=exclude_query_edge, dropout=dropout, layernorm=layernorm,
            init_scheme=init_scheme, init_mean=init_mean, init_rank=init_rank,
            freeze_input_projection=freeze_input_projection, multiplicative_residual=multiplicative_residual,
            normalize_adjacency=normalize_adjacency, learning_rate=learning_rate, weight_decay=weight_decay,
            batch_size=batch_size, epochs=epochs, negatives_per_positive=negatives_per_positive,
            accumulation_steps=accumulation_steps, symmetrize=symmetrize, random_state=random_state,
            dtype=dtype, checkpoint_dir=checkpoint_dir,
        )
        self.kind = kind

    def fit(self, X, y=None, graph=None, full_graph=None, node_features=None, report=None):
        graph = check_graph(graph)
        X = check_pairs(X, graph.num_nodes)
        if y is not None:
            y = check_targets(y, len(X))

            def epoch_data(epoch):
                return X, y
        else:
            full = graph if full_graph is None else check_graph(full_graph)
            kind = HeuristicKind.parse(self.kind)
            d_max = max_component_diameter(graph) if kind is HeuristicKind.SPD else None
            k = self.negatives_per_positive

            def pairs_for(epoch):
                neg = sample_negatives(graph, X, k, substream(self.random_state, "negatives", epoch))
                return np.concatenate([X, neg])

            first = pairs_for(0)
            self.scaler_ = HeuristicTargetScaler(kind, d_max=d_max).fit(pair_scores(kind, full, first))

            def epoch_data(epoch):
                pairs = first if epoch == 0 else pairs_for(epoch)
                return pairs, self.scaler_.transform(pair_scores(kind, full, pairs))

        return self._fit(graph, epoch_data, node_features, report)

    def predict(self, X, graph=None, seed=None):
        return self._raw_scores(X, graph, seed)

    def rmse(self, X, y, graph=None, seed=None):
        y = check_targets(y, len(X))
        return float(np.sqrt(np.mean((self.predict(X, graph, seed) - y) ** 2)))
