"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np
from sklearn.utils.validation import column_or_1d

from .exceptions import NodeIdError
from .graph import Graph


def check_graph(graph):
    if not isinstance(graph, Graph):
        raise TypeError(f"expected a tokenlink Graph, got {type(graph).__name__}")
    return graph


def check_pairs(X, num_nodes=None, allow_empty=False):
    """Coerce ``X`` to an ``(n, 2)`` int64 array of distinct-endpoint node pairs."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"pairs must have shape (n, 2), got {arr.shape}")
    if not allow_empty and len(arr) == 0:
        raise ValueError("empty pair array")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("node ids must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr[:, 0] == arr[:, 1]).any():
        raise ValueError("pairs must join two distinct nodes")
    if num_nodes is not None and arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        raise NodeIdError(f"pair references a node outside [0, {num_nodes})")
    return arr


def check_targets(y, n):
    y = column_or_1d(np.asarray(y, dtype=np.float64))
    if len(y) != n:
        raise ValueError(f"got {len(y)} targets for {n} pairs")
    if not np.isfinite(y).all():
        raise ValueError("targets must be finite")
    return y


def check_binary_labels(y, n):
    y = check_targets(y, n)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    return y
