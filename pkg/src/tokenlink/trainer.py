"""Mini-batch optimisation of encoders on sampled link subgraphs."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ._rng import substream
from .exceptions import ConfigError, NumericError
from .model import EncoderConfig, bce_loss, save_checkpoint
from .sampler import SamplerConfig, sample_subgraph
from .tokenizer import collate, encode, reconstruct_adjacency

logger = logging.getLogger(__name__)

# AdamW accumulator constants
BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

TASKS = ("link_bce", "heuristic_regression")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "link_bce"
    heuristic: str | None = None
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: float = 10.0
    seed: int = 0
    negatives_per_positive: int = 1
    accumulation_steps: int = 1
    include_valid: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.task == "heuristic_regression" and self.heuristic is None:
            raise ConfigError("heuristic_regression needs a heuristic kind")
        if not self.learning_rate > 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate > 0, epochs >= 0 and batch_size >= 1 are required")
        if self.task == "link_bce" and self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")
        if self.accumulation_steps < 1:
            raise ConfigError("accumulation_steps must be >= 1")
        if self.encoder.n_max < self.sampler.budget:
            raise ConfigError("encoder n_max must be at least the sampling budget")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    batch_seconds: list = field(default_factory=list)
    checkpoint: str | None = None
    seed: int = 0
    config_digest: str = ""

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for epoch, loss in enumerate(self.losses, 1):
                fh.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")
            fh.write(json.dumps({
                "final": True, "checkpoint": self.checkpoint, "seed": self.seed,
                "config_digest": self.config_digest,
                "mean_batch_seconds": float(np.mean(self.batch_seconds)) if self.batch_seconds else None,
            }) + "\n")


def sample_negatives(g, positives, k, rng):
    """``k`` uniformly drawn non-edges of ``g`` per positive pair, in positive order."""
    m = g.num_nodes
    total = m * (m - 1) // 2
    n_non = total - g.num_edges
    if n_non <= 0:
        raise ValueError("graph has no non-edges to sample negatives from")
    need = len(positives) * k
    if n_non < 0.5 * total:
        dense = g.to_dense()
        iu, ju = np.triu_indices(m, 1)
        keep = dense[iu, ju] == 0
        cand = np.stack([iu[keep], ju[keep]], axis=1)
        return cand[rng.integers(0, len(cand), size=need)]
    out = np.empty((need, 2), dtype=np.int64)
    filled = 0
    while filled < need:
        draw = rng.integers(0, m, size=(2 * (need - filled) + 8, 2))
        draw = draw[draw[:, 0] != draw[:, 1]]
        ok = [not g.has_edge(a, b) for a, b in draw.tolist()]
        draw = draw[np.asarray(ok, dtype=bool)][: need - filled]
        out[filled:filled + len(draw)] = draw
        filled += len(draw)
    return out


def build_batch(graph, pairs, sampler_cfg, n_max, rng, labels=None, node_features=None, seeds=None):
    """Sample, tokenize and collate subgraphs for ``pairs``.

    ``seeds`` optionally supplies one generator per pair (evaluation); otherwise
    ``rng`` is shared across the batch.
    """
    samples = [
        sample_subgraph(graph, int(u), int(v), sampler_cfg, rng if seeds is None else seeds[i])
        for i, (u, v) in enumerate(pairs)
    ]
    feats = None if node_features is None else [node_features[s.node_index_to_global] for s in samples]
    return collate([encode(s, n_max) for s in samples], labels, feats)


def set_determinism():
    torch.set_num_threads(1)


def _loss(task, logits, targets):
    if task == "link_bce":
        return bce_loss(logits, targets)
    t = torch.as_tensor(targets).to(logits.dtype)
    return torch.mean((logits - t) ** 2)


def fit_encoder(model, graph, epoch_data, *, task, sampler_cfg, batch_size, learning_rate,
                weight_decay, epochs, seed, accumulation_steps=1, node_features=None,
                checkpoint_dir=None, report=None):
    """Optimise ``model`` with AdamW; return a :class:`TrainReport`.

    ``epoch_data(epoch)`` returns ``(pairs, targets)`` for that epoch. A
    fractional final epoch trains on the matching prefix of the shuffled
    batches. Checkpoints (when ``checkpoint_dir`` is given) are written before
    training, after every epoch and at the end.
    """
    report = report or TrainReport(seed=seed)
    set_determinism()
    torch.manual_seed(int(substream(seed, "init", 1).integers(2**31)))
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=learning_rate, weight_decay=weight_decay, betas=BETAS, eps=ADAM_EPS)
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    last_good = None

    def checkpoint(tag):
        nonlocal last_good
        if ckdir is not None and hasattr(model, "cfg") and isinstance(model.cfg, EncoderConfig):
            ckdir.mkdir(parents=True, exist_ok=True)
            path = ckdir / f"{tag}.ckpt"
            save_checkpoint(model, path)
            last_good = str(path)

    checkpoint("epoch_0000")
    n_full = int(math.floor(epochs))
    frac = epochs - n_full
    for epoch in range(n_full + (1 if frac > 0 else 0)):
        pairs, targets = epoch_data(epoch)
        order = substream(seed, "shuffle", epoch).permutation(len(pairs))
        n_batches = -(-len(pairs) // batch_size)
        if epoch == n_full:
            n_batches = max(1, int(math.floor(frac * n_batches)))
        rng = substream(seed, "sampler", epoch)
        model.train()
        total, count = 0.0, 0
        opt.zero_grad(set_to_none=True)
        for i in range(n_batches):
            idx = order[i * batch_size:(i + 1) * batch_size]
            t0 = time.perf_counter()
            batch = build_batch(graph, pairs[idx], sampler_cfg, model.cfg.n_max, rng, node_features=node_features)
            A = reconstruct_adjacency(batch, normalize=getattr(model.cfg, "normalize_adjacency", True))
            try:
                logits, _ = model.forward_batch(batch, A)
            except NumericError as exc:
                exc.checkpoint = last_good
                raise
            loss = _loss(task, logits, targets[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"loss diverged in epoch {epoch + 1}", checkpoint=last_good)
            (loss / accumulation_steps).backward()
            if (i + 1) % accumulation_steps == 0 or i == n_batches - 1:
                opt.step()
                opt.zero_grad(set_to_none=True)
            report.batch_seconds.append(time.perf_counter() - t0)
            total += loss.detach().item() * len(idx)
            count += len(idx)
        report.losses.append(total / count)
        logger.info("epoch %d loss %.6f", epoch + 1, report.losses[-1])
        checkpoint(f"epoch_{epoch + 1:04d}")
    model.eval()
    checkpoint("final")
    report.checkpoint = last_good
    return report


def train(cfg, g, split, out_dir=None):
    """Train a predictor from a :class:`TrainConfig`; return ``(report, estimator)``.

    Sampling and heuristics see only the observed graph (train edges, plus
    valid edges when ``cfg.include_valid``). Regression targets are computed
    on the full graph ``g``.
    """
    from .estimator import HeuristicRegressor, LinkPredictor

    observed = split.observed_graph(g.num_nodes, include_valid=cfg.include_valid)
    report = TrainReport(seed=cfg.seed, config_digest=cfg.digest())
    if cfg.task == "link_bce":
        est = LinkPredictor.from_config(cfg, checkpoint_dir=out_dir)
        est.fit(split.train, graph=observed, report=report)
    else:
        est = HeuristicRegressor.from_config(cfg, checkpoint_dir=out_dir)
        est.fit(split.train, graph=observed, full_graph=g, report=report)
    if out_dir is not None:
        report.write_jsonl(Path(out_dir) / "report.jsonl")
    return report, est
