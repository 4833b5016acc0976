"""Plain message-passing baseline run on the same sampled subgraphs.

Every node starts from the same all-ones vector, so the network only sees
structure, but it has no node identifiers to tell shared neighbours apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ._rng import substream
from .estimator import HeuristicRegressor
from .exceptions import NumericError
from .tokenizer import reconstruct_adjacency


@dataclass(frozen=True)
class MPNNConfig:
    hidden: int = 64
    layers: int = 2
    n_max: int = 32
    normalize_adjacency: bool = False


class SumMPNN(nn.Module):
    """``h <- relu(h W_self + (A h) W_nbr + b)`` with sum aggregation.

    The readout is a two-layer MLP on ``h_u * h_v`` of the two task tokens.
    """

    def __init__(self, cfg, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        d = cfg.hidden

        def dense(fan_in, fan_out):
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            return nn.Parameter(torch.from_numpy(w))

        self.w_self = nn.ParameterList(dense(d, d) for _ in range(cfg.layers))
        self.w_nbr = nn.ParameterList(dense(d, d) for _ in range(cfg.layers))
        self.bias = nn.ParameterList(nn.Parameter(torch.zeros(d, dtype=torch.float64)) for _ in range(cfg.layers))
        self.head_in = dense(d, d)
        self.head_bias = nn.Parameter(torch.zeros(d, dtype=torch.float64))
        self.head_out = dense(d, 1)

    def forward(self, adjacency, valid_mask):
        A = torch.as_tensor(np.asarray(adjacency), dtype=torch.float64)
        m = torch.as_tensor(np.asarray(valid_mask)).to(torch.float64).unsqueeze(-1)
        h = m.expand(-1, -1, self.cfg.hidden) / math.sqrt(self.cfg.hidden)
        for ws, wn, b in zip(self.w_self, self.w_nbr, self.bias):
            h = torch.relu(h @ ws + (A @ h) @ wn + b) * m
            if not torch.isfinite(h).all():
                raise NumericError("non-finite hidden state in baseline")
        T = h.shape[1]
        z = torch.relu((h[:, T - 2] * h[:, T - 1]) @ self.head_in + self.head_bias)
        return (z @ self.head_out)[:, 0]

    def forward_batch(self, batch, adjacency=None):
        if adjacency is None:
            adjacency = reconstruct_adjacency(batch, normalize=self.cfg.normalize_adjacency)
        A = getattr(adjacency, "A_tilde", adjacency)
        return self(A, batch.valid_mask), None


class MPNNRegressor(HeuristicRegressor):
    """:class:`HeuristicRegressor` with the encoder swapped for :class:`SumMPNN`.

    Sampling, targets and optimisation are identical, which keeps comparisons fair.
    ``heads``, ``intermediate`` and the init options are ignored.
    """

    def _init_encoder(self, feature_dim):
        cfg = MPNNConfig(hidden=self.hidden, layers=self.layers, n_max=self.n_max)
        return SumMPNN(cfg, substream(self.random_state, "init"))
