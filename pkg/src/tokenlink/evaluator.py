"""Ranking metrics and the two negative-sampling evaluation protocols."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import roc_auc_score

from .heuristics import HeuristicKind, pair_scores
from .validation import check_pairs

TIE_RULES = ("mean", "optimistic", "pessimistic")
PROTOCOLS = ("global_negatives", "per_positive")
DEFAULT_KS = (1, 10, 20, 50, 100)


def rank_of_positive(pos_score, neg_scores, tie_rule="mean"):
    """1-based rank of a positive among its negatives.

    Ties count as half a place under ``mean`` (average of the optimistic and
    pessimistic ranks), zero places under ``optimistic`` and one under
    ``pessimistic``.
    """
    if tie_rule not in TIE_RULES:
        raise ValueError(f"tie_rule must be one of {TIE_RULES}")
    neg = np.asarray(neg_scores, dtype=np.float64)
    if np.isnan(pos_score) or np.isnan(neg).any():
        raise ValueError("scores must not be NaN")
    greater = np.count_nonzero(neg > pos_score)
    equal = np.count_nonzero(neg == pos_score)
    weight = {"mean": 0.5, "optimistic": 0.0, "pessimistic": 1.0}[tie_rule]
    return 1.0 + greater + weight * equal


def _ranks_against(pos, neg, tie_rule):
    """Vectorised :func:`rank_of_positive` for ``pos`` (n,) against rows of ``neg`` (n, m)."""
    pos = pos[:, None]
    weight = {"mean": 0.5, "optimistic": 0.0, "pessimistic": 1.0}[tie_rule]
    return 1.0 + (neg > pos).sum(axis=1) + weight * (neg == pos).sum(axis=1)


def _check_ranks(ranks):
    r = np.asarray(ranks, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("rank list is empty")
    if (r < 1).any():
        raise ValueError("ranks start at 1")
    return r


def mrr(ranks):
    return float(np.mean(1.0 / _check_ranks(ranks)))


def hits_at_k(ranks, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    return float(np.mean(_check_ranks(ranks) <= k))


def rmse(pred, target):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError("prediction and target shapes differ or are empty")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


@dataclass
class EvalReport:
    mrr: float
    hits: dict
    ranks: np.ndarray
    protocol: str
    seed: int
    auc: float | None = None
    rmse: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["ranks"] = self.ranks.tolist()
        d["hits"] = {str(k): v for k, v in self.hits.items()}
        return d

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({k: v for k, v in self.to_dict().items() if k != "ranks"}, fh, indent=2)

    def write_ranks_csv(self, path, positives):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("u,v,rank\n")
            for (u, v), r in zip(np.asarray(positives).tolist(), self.ranks.tolist()):
                fh.write(f"{u},{v},{r}\n")


def as_scorer(scorer, graph, seed):
    """Turn a heuristic name, fitted estimator or callable into ``pairs -> scores``.

    Heuristic names score on ``graph``; shortest-path distance is negated so
    that closer pairs rank higher. Estimators score with pair-keyed sampling
    seeds, so a pair gets the same score whichever list it appears in.
    """
    if isinstance(scorer, (str, HeuristicKind)):
        kind = HeuristicKind.parse(scorer)
        sign = -1.0 if kind is HeuristicKind.SPD else 1.0
        return lambda pairs: sign * pair_scores(kind, graph, pairs)
    for attr in ("decision_function", "predict"):
        if hasattr(scorer, attr):
            method = getattr(scorer, attr)
            return lambda pairs: np.asarray(method(pairs, graph=graph, seed=seed), dtype=np.float64)
    if callable(scorer):
        return lambda pairs: np.asarray(scorer(pairs), dtype=np.float64)
    raise TypeError(f"cannot score with {type(scorer).__name__}")


def _score_unique(score, pairs):
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    return score(uniq)[inv.ravel()]


def evaluate(scorer, g, positives, negatives, protocol="global_negatives", seed=0, ks=DEFAULT_KS,
             tie_rule="mean", targets=None):
    """Rank every positive against its negatives and summarise.

    ``global_negatives``: ``negatives`` is an ``(m, 2)`` array shared by all
    positives. ``per_positive``: ``negatives`` maps each positive ``(u, v)``
    to its own ``(m_i, 2)`` array. With ``targets`` the report also carries
    the RMSE between the positives' scores and those targets.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    pos = check_pairs(positives, g.num_nodes)
    score = as_scorer(scorer, g, seed)
    if protocol == "global_negatives":
        neg = check_pairs(negatives, g.num_nodes)
        s = _score_unique(score, np.concatenate([pos, neg]))
        pos_s, neg_s = s[: len(pos)], s[len(pos):]
        ranks = _ranks_against(pos_s, np.broadcast_to(neg_s, (len(pos), len(neg_s))), tie_rule)
        all_neg = neg_s
    else:
        lists = []
        for u, v in pos.tolist():
            neg = negatives.get((u, v))
            if neg is None:
                neg = negatives.get((v, u))
            if neg is None or len(neg) == 0:
                raise KeyError(f"no negatives for positive ({u}, {v})")
            lists.append(check_pairs(neg, g.num_nodes))
        sizes = np.array([len(x) for x in lists])
        s = _score_unique(score, np.concatenate([pos, *lists]))
        pos_s, flat = s[: len(pos)], s[len(pos):]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        ranks = np.array([
            rank_of_positive(pos_s[i], flat[bounds[i]:bounds[i + 1]], tie_rule) for i in range(len(pos))
        ])
        all_neg = flat
    if np.isnan(pos_s).any() or np.isnan(all_neg).any():
        raise ValueError("scorer produced NaN")
    y = np.concatenate([np.ones(len(pos_s)), np.zeros(len(all_neg))])
    finite = np.nan_to_num(np.concatenate([pos_s, all_neg]), posinf=1e300, neginf=-1e300)
    return EvalReport(
        mrr=mrr(ranks),
        hits={k: hits_at_k(ranks, k) for k in ks},
        ranks=ranks,
        protocol=protocol,
        seed=seed,
        auc=float(roc_auc_score(y, finite)),
        rmse=None if targets is None else rmse(pos_s, targets),
    )


def global_negatives(g, count, seed=0):
    """Fixed shared evaluation negatives: ``count`` distinct non-edges."""
    from ._rng import substream
    from .trainer import sample_negatives

    rng = substream(seed, "negatives", 2**31 - 1)
    out = np.unique(np.sort(sample_negatives(g, np.zeros((count, 2)), 1, rng), axis=1), axis=0)
    return out


def per_positive_negatives(g, positives, count, seed=0):
    """Fixed curated-style negatives: for each positive, ``count`` non-edges sharing an endpoint."""
    from ._rng import substream

    rng = substream(seed, "negatives", 2**31 - 2)
    out = {}
    m = g.num_nodes
    for u, v in check_pairs(positives, m).tolist():
        negs = []
        tries = 0
        while len(negs) < count:
            tries += 1
            if tries > 1000 * count:
                raise ValueError(f"could not draw {count} negatives for ({u}, {v})")
            a = u if rng.random() < 0.5 else v
            b = int(rng.integers(m))
            if b != a and not g.has_edge(a, b) and {a, b} != {u, v}:
                negs.append((a, b))
        out[(u, v)] = np.asarray(negs, dtype=np.int64)
    return out
