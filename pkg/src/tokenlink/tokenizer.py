"""Adjacency-row tokenization, padded batching and adjacency-operator recovery."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetOverflowError, ConfigError, GraphFormatError

CONTEXT_ROLE = (1, 0)
TASK_ROLE = (0, 1)


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    """``(N + 2) x (2 * n_max + 2)`` 0/1 token rows for one sample.

    Rows ``0..N-1`` are context tokens, rows ``N`` and ``N + 1`` the task tokens.
    """

    rows: np.ndarray
    N: int
    n_max: int


@dataclass(frozen=True, eq=False)
class TokenBatch:
    tokens: np.ndarray  # (B, N_B + 2, 2 * n_max + 2) uint8
    valid_mask: np.ndarray  # (B, N_B + 2) bool
    n_b: np.ndarray  # (B,)
    n_max: int
    labels: np.ndarray | None = None
    features: np.ndarray | None = None  # (B, N_B + 2, f)

    @property
    def B(self):
        return self.tokens.shape[0]

    @property
    def N_B(self):
        return self.tokens.shape[1] - 2


@dataclass(frozen=True, eq=False)
class AdjacencyOperator:
    """``(B, N_B + 2, N_B + 2)`` propagation matrix; the last two columns are zero."""

    A_tilde: np.ndarray
    normalized: bool


def token_width(n_max):
    return 2 * n_max + 2


def encode(sample, n_max):
    """Token matrix of a :class:`~tokenlink.sampler.SubgraphSample`.

    Each context row is ``[one-hot index | adjacency row | 1 0]`` with both
    blocks padded to ``n_max``; the two task rows repeat rows 0 and 1 with
    the role flag set to ``0 1``.
    """
    n = sample.N
    if n > n_max:
        raise BudgetOverflowError(f"sample has {n} nodes, budget is {n_max}")
    rows = np.zeros((n + 2, token_width(n_max)), dtype=np.uint8)
    idx = np.arange(n)
    rows[idx, idx] = 1
    rows[:n, n_max:n_max + n] = sample.local_adjacency
    rows[:n, 2 * n_max:] = CONTEXT_ROLE
    rows[n:n + 2, : 2 * n_max] = rows[0:2, : 2 * n_max]
    rows[n:n + 2, 2 * n_max:] = TASK_ROLE
    return TokenMatrix(rows, n, n_max)


def collate(matrices, labels=None, features=None):
    """Pad token matrices to the largest context size and stack them.

    The task rows of every sample land at positions ``N_B`` and ``N_B + 1``.
    ``features`` is an optional list of per-sample ``(N, f)`` context feature
    arrays; task rows receive copies of the endpoint features.
    """
    if not matrices:
        raise ValueError("cannot collate an empty list")
    n_max = matrices[0].n_max
    if any(m.n_max != n_max for m in matrices):
        raise ConfigError("all samples in a batch must share n_max")
    n_b = np.fromiter((m.N for m in matrices), dtype=np.int64, count=len(matrices))
    nB = int(n_b.max())
    B = len(matrices)
    tokens = np.zeros((B, nB + 2, token_width(n_max)), dtype=np.uint8)
    mask = np.zeros((B, nB + 2), dtype=bool)
    for b, m in enumerate(matrices):
        tokens[b, : m.N] = m.rows[: m.N]
        tokens[b, nB:] = m.rows[m.N:]
        mask[b, : m.N] = True
    mask[:, nB:] = True
    feats = None
    if features is not None:
        f = np.asarray(features[0]).shape[1]
        feats = np.zeros((B, nB + 2, f))
        for b, (m, x) in enumerate(zip(matrices, features)):
            feats[b, : m.N] = x
            feats[b, nB:] = np.asarray(x)[:2]
    lab = None if labels is None else np.asarray(labels, dtype=np.float64).reshape(B)
    return TokenBatch(tokens, mask, n_b, n_max, lab, feats)


def reconstruct_adjacency(batch, normalize=True):
    """Recover the propagation operator from the token tensor alone.

    Identifier and adjacency slices over the first ``N_B`` slots are summed
    (self-loops plus neighbours), two zero columns are appended for the task
    tokens, and rows are optionally divided by their sums (0/0 -> 0).
    """
    nB, n_max = batch.N_B, batch.n_max
    x = batch.tokens
    src = x[:, :, :nB].astype(np.float64) + x[:, :, n_max:n_max + nB]
    A = np.concatenate([src, np.zeros(src.shape[:2] + (2,))], axis=2)
    if normalize:
        s = A.sum(axis=2, keepdims=True)
        A = np.divide(A, s, out=np.zeros_like(A), where=s > 0)
    return AdjacencyOperator(A, normalize)


_BATCH_MAGIC = b"TLBAT1\0\0"


def write_batch_cache(batch, path):
    """Header (B, N_B, n_max, has_labels), per-sample N_b, optional labels, packed token bits."""
    with open(path, "wb") as fh:
        fh.write(_BATCH_MAGIC)
        has_labels = batch.labels is not None
        fh.write(struct.pack("<IIIB", batch.B, batch.N_B, batch.n_max, has_labels))
        fh.write(batch.n_b.astype("<u4").tobytes())
        if has_labels:
            fh.write(batch.labels.astype("<f8").tobytes())
        fh.write(np.packbits(batch.tokens.ravel()).tobytes())


def read_batch_cache(path):
    with open(path, "rb") as fh:
        if fh.read(len(_BATCH_MAGIC)) != _BATCH_MAGIC:
            raise GraphFormatError(f"{path} is not a token batch cache")
        B, nB, n_max, has_labels = struct.unpack("<IIIB", fh.read(13))
        n_b = np.frombuffer(fh.read(4 * B), dtype="<u4").astype(np.int64)
        labels = np.frombuffer(fh.read(8 * B), dtype="<f8").copy() if has_labels else None
        shape = (B, nB + 2, token_width(n_max))
        tokens = np.unpackbits(np.frombuffer(fh.read(), dtype=np.uint8))[: int(np.prod(shape))].reshape(shape)
    mask = np.zeros((B, nB + 2), dtype=bool)
    mask[:, :nB] = np.arange(nB)[None, :] < n_b[:, None]
    mask[:, nB:] = True
    return TokenBatch(tokens, mask, n_b, n_max, labels)
