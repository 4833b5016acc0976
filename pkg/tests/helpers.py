import numpy as np
import torch

from tokenlink import EncoderConfig, Graph, LinkEncoder, SamplerConfig, collate, encode, sample_subgraph
from tokenlink.model import backward, bce_loss, init_params
from tokenlink.tokenizer import reconstruct_adjacency


def make_model(seed=0, **kw):
    cfg = EncoderConfig(**{"hidden": 8, "intermediate": 16, "layers": 2, "heads": 2, "n_max": 8, **kw})
    return LinkEncoder(cfg, init_params(cfg, np.random.default_rng(seed)))


def random_batch(n_max, count, rng, n=12, p=0.35, budget=None, features=0):
    g = Graph.from_dense(np.triu(rng.random((n, n)) < p, 1))
    cfg = SamplerConfig(depth=2, fanout=4, budget=budget or n_max)
    samples = []
    for _ in range(count):
        a, b = rng.choice(n, size=2, replace=False)
        samples.append(sample_subgraph(g, int(a), int(b), cfg, rng))
    feats = None
    if features:
        table = rng.standard_normal((n, features))
        feats = [table[s.node_index_to_global] for s in samples]
    return collate([encode(s, n_max) for s in samples], labels=rng.integers(0, 2, size=count), features=feats)


def finite_difference_check(model, batch, step=1e-5, rtol=1e-4, abs_floor=1e-9):
    """Compare autograd gradients with central differences for every trainable entry.

    An entry fails when ``|a - f|`` exceeds both ``rtol * max(|a|, |f|)`` and
    ``abs_floor``; the floor absorbs difference-quotient roundoff on entries
    whose gradient is itself near zero. Returns the largest relative error over
    entries above the floor and the list of failing entries.
    """
    A = reconstruct_adjacency(batch, normalize=model.cfg.normalize_adjacency)
    grads = backward(model, batch, A, batch.labels)
    worst, failures = 0.0, []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            assert name not in grads
            continue
        flat = p.data.view(-1)
        # parameters outside the graph (e.g. propagation with the residual ablated) have zero gradient
        g = np.asarray(grads.get(name, np.zeros(p.shape))).reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = bce_loss(model.forward_batch(batch, A)[0], batch.labels).item()
                flat[i] = orig - step
                down = bce_loss(model.forward_batch(batch, A)[0], batch.labels).item()
                flat[i] = orig
            fd = (up - down) / (2 * step)
            err = abs(fd - g[i])
            if err <= abs_floor:
                continue
            rel = err / max(abs(fd), abs(g[i]))
            worst = max(worst, rel)
            if rel > rtol:
                failures.append((name, i, g[i], fd))
    return worst, failures
