"""Link prediction with a plain Transformer over adjacency-row tokens of sampled subgraphs."""

from .baselines import MPNNRegressor, SumMPNN
from .estimator import HeuristicRegressor, LinkPredictor
from .evaluator import EvalReport, evaluate, hits_at_k, mrr, rank_of_positive
from .exceptions import (
    BudgetOverflowError,
    CheckFailed,
    ConfigError,
    ConvergenceError,
    GraphFormatError,
    NodeIdError,
    NumericError,
)
from .graph import EdgeSplit, Graph, load_edge_list, split_edges
from .heuristics import HeuristicKind, HeuristicTargetScaler, NormalizationSpec, pair_score, pair_scores
from .model import EncoderConfig, LinkEncoder
from .sampler import SamplerConfig, SubgraphSample, sample_subgraph
from .tokenizer import TokenBatch, TokenMatrix, collate, encode, reconstruct_adjacency
from .trainer import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "BudgetOverflowError", "CheckFailed", "ConfigError", "ConvergenceError", "EdgeSplit", "EncoderConfig",
    "EvalReport", "Graph", "GraphFormatError", "HeuristicKind", "HeuristicRegressor", "HeuristicTargetScaler",
    "LinkEncoder", "LinkPredictor", "MPNNRegressor", "NodeIdError", "NormalizationSpec", "NumericError",
    "SamplerConfig", "SubgraphSample", "SumMPNN", "TokenBatch", "TokenMatrix", "TrainConfig", "TrainReport",
    "collate", "encode", "evaluate", "hits_at_k", "load_edge_list", "mrr", "pair_score", "pair_scores",
    "rank_of_positive", "reconstruct_adjacency", "sample_subgraph", "split_edges", "train",
]
