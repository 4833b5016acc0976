"""Transformer encoder over adjacency-row tokens with a multiplicative residual.

Each layer applies a pre-norm Transformer block ``Z = T(H)`` and then adds the
propagation branch ``H' = Z + (A Z) P`` where ``A`` is the operator rebuilt
from the tokens. The link logit is a linear readout of the two task tokens.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigError, GraphFormatError, NumericError
from .tokenizer import reconstruct_adjacency, token_width

INIT_SCHEMES = ("orthogonal", "mean_shifted_gaussian", "low_rank")
BLOCK_MODES = ("full", "attention_off", "attention_identity")


@dataclass(frozen=True)
class EncoderConfig:
    hidden: int = 64
    intermediate: int = 128
    layers: int = 2
    heads: int = 4
    n_max: int = 32
    dropout: float = 0.0
    use_features: bool = False
    feature_dim: int = 0
    layernorm: bool = True
    init_scheme: str = "orthogonal"
    init_mean: float = 0.1
    init_rank: int = 5
    freeze_input_projection: bool = True
    multiplicative_residual: bool = True
    normalize_adjacency: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} must be a positive multiple of heads={self.heads}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.layers < 0 or self.intermediate < 1 or self.n_max < 2:
            raise ConfigError("layers >= 0, intermediate >= 1 and n_max >= 2 are required")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"init_scheme must be one of {INIT_SCHEMES}")
        if self.init_scheme == "low_rank" and not 1 <= self.init_rank <= min(self.hidden, self.token_dim):
            raise ConfigError(f"low-rank init rank {self.init_rank} exceeds the projection dimensions")
        if self.use_features and self.feature_dim < 1:
            raise ConfigError("use_features requires feature_dim >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    @property
    def token_dim(self):
        return token_width(self.n_max)

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _orthogonal_rows(rows, d, rng):
    """Stack independent random orthogonal d x d blocks and keep ``rows`` rows.

    The first ``min(rows, d)`` rows are orthonormal.
    """
    blocks = []
    for _ in range(-(-rows // d)):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        blocks.append(q * np.sign(np.diag(r)))
    return np.concatenate(blocks)[:rows]


def init_input_projection(cfg, rng):
    rows, d = cfg.token_dim, cfg.hidden
    if cfg.init_scheme == "orthogonal":
        return _orthogonal_rows(rows, d, rng)
    if cfg.init_scheme == "mean_shifted_gaussian":
        return rng.normal(cfg.init_mean, 1.0 / math.sqrt(d), size=(rows, d))
    r = cfg.init_rank
    return rng.standard_normal((rows, r)) @ rng.standard_normal((r, d)) / math.sqrt(r * d)


def init_params(cfg, rng):
    """Fresh parameter arrays keyed by the names used in :class:`LinkEncoder`."""
    d, m = cfg.hidden, cfg.intermediate

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))

    p = {"input_projection": init_input_projection(cfg, rng)}
    if cfg.use_features:
        p["feature_weight"] = dense(cfg.feature_dim, d)
        p["feature_bias"] = np.zeros(d)
    for k in range(cfg.layers):
        pre = f"blocks.{k}."
        p[pre + "ln1_weight"], p[pre + "ln1_bias"] = np.ones(d), np.zeros(d)
        for name in ("query", "key", "value", "attn_out"):
            p[pre + name + "_weight"] = dense(d, d)
            p[pre + name + "_bias"] = np.zeros(d)
        p[pre + "ln2_weight"], p[pre + "ln2_bias"] = np.ones(d), np.zeros(d)
        p[pre + "mlp_in_weight"], p[pre + "mlp_in_bias"] = dense(d, m), np.zeros(m)
        p[pre + "mlp_out_weight"], p[pre + "mlp_out_bias"] = dense(m, d), np.zeros(d)
        p[pre + "propagation"] = dense(d, d)
    p["readout_weight"] = dense(2 * d, 1)[:, 0]
    p["readout_bias"] = np.zeros(1)
    return p


class _Block(nn.Module):
    _NAMES = (
        "ln1_weight", "ln1_bias",
        "query_weight", "query_bias", "key_weight", "key_bias",
        "value_weight", "value_bias", "attn_out_weight", "attn_out_bias",
        "ln2_weight", "ln2_bias",
        "mlp_in_weight", "mlp_in_bias", "mlp_out_weight", "mlp_out_bias",
        "propagation",
    )

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d, m, dt = cfg.hidden, cfg.intermediate, cfg.torch_dtype
        shapes = {
            "ln1_weight": (d,), "ln1_bias": (d,), "ln2_weight": (d,), "ln2_bias": (d,),
            "mlp_in_weight": (d, m), "mlp_in_bias": (m,), "mlp_out_weight": (m, d), "mlp_out_bias": (d,),
            "propagation": (d, d),
        }
        for name in ("query", "key", "value", "attn_out"):
            shapes[name + "_weight"], shapes[name + "_bias"] = (d, d), (d,)
        for name in self._NAMES:
            setattr(self, name, nn.Parameter(torch.zeros(shapes[name], dtype=dt)))

    def _norm(self, x, w, b):
        if not self.cfg.layernorm:
            return x
        return F.layer_norm(x, (x.shape[-1],), w, b, eps=1e-5)

    def attention(self, x, key_bias):
        B, T, d = x.shape
        h = self.cfg.heads
        dh = d // h

        def split(t):
            return t.view(B, T, h, dh).transpose(1, 2)

        q = split(x @ self.query_weight + self.query_bias)
        k = split(x @ self.key_weight + self.key_bias)
        v = split(x @ self.value_weight + self.value_bias)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh) + key_bias
        att = torch.softmax(scores, dim=-1)
        if self.training and self.cfg.dropout:
            att = F.dropout(att, self.cfg.dropout)
        out = (att @ v).transpose(1, 2).reshape(B, T, d)
        return out @ self.attn_out_weight + self.attn_out_bias

    def transform(self, H, key_bias, mode):
        if mode == "attention_identity":
            return H
        gate = 0.0 if mode == "attention_off" else 1.0
        H = H + gate * self.attention(self._norm(H, self.ln1_weight, self.ln1_bias), key_bias)
        x = self._norm(H, self.ln2_weight, self.ln2_bias)
        x = F.gelu(x @ self.mlp_in_weight + self.mlp_in_bias) @ self.mlp_out_weight + self.mlp_out_bias
        if self.training and self.cfg.dropout:
            x = F.dropout(x, self.cfg.dropout)
        return H + gate * x


@dataclass
class ForwardTrace:
    H: list = field(default_factory=list)
    Z: list = field(default_factory=list)
    logits: torch.Tensor | None = None


class LinkEncoder(nn.Module):
    """The link predictor network. Parameters live in float64 unless ``cfg.dtype`` says otherwise."""

    def __init__(self, cfg, params=None, rng=None):
        super().__init__()
        self.cfg = cfg
        dt = cfg.torch_dtype
        d = cfg.hidden
        self.input_projection = nn.Parameter(torch.zeros(cfg.token_dim, d, dtype=dt),
                                             requires_grad=not cfg.freeze_input_projection)
        if cfg.use_features:
            self.feature_weight = nn.Parameter(torch.zeros(cfg.feature_dim, d, dtype=dt))
            self.feature_bias = nn.Parameter(torch.zeros(d, dtype=dt))
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.readout_weight = nn.Parameter(torch.zeros(2 * d, dtype=dt))
        self.readout_bias = nn.Parameter(torch.zeros(1, dtype=dt))
        if params is None:
            params = init_params(cfg, rng if rng is not None else np.random.default_rng(0))
        self.load_arrays(params)

    def load_arrays(self, params):
        named = dict(self.named_parameters())
        missing = set(named) - set(params)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)}")
        with torch.no_grad():
            for name, t in named.items():
                arr = np.asarray(params[name], dtype=np.float64)
                if arr.shape != tuple(t.shape):
                    raise ConfigError(f"{name}: expected shape {tuple(t.shape)}, got {arr.shape}")
                t.copy_(torch.from_numpy(arr))
        return self

    def arrays(self):
        return {k: v.detach().cpu().numpy().astype(np.float64) for k, v in self.named_parameters()}

    def _tensor(self, x):
        if torch.is_tensor(x):
            return x.to(self.cfg.torch_dtype)
        x = np.asarray(x)
        if not x.flags.writeable:
            x = x.copy()
        return torch.as_tensor(x).to(self.cfg.torch_dtype)

    def forward(self, tokens, adjacency, valid_mask, features=None, mode="full", input_offset=None):
        """Return ``(logits, trace)`` for a padded batch.

        ``tokens``: (B, T, 2 n_max + 2), ``adjacency``: (B, T, T), ``valid_mask``: (B, T)
        with the two task tokens last. ``input_offset`` is added to the first
        hidden state (used by diagnostics only).
        """
        if mode not in BLOCK_MODES:
            raise ConfigError(f"unknown block mode {mode!r}")
        x = self._tensor(tokens)
        A = self._tensor(adjacency)
        valid = valid_mask if torch.is_tensor(valid_mask) else torch.as_tensor(np.array(valid_mask, dtype=bool))
        m = valid.to(x.dtype).unsqueeze(-1)
        key_bias = torch.zeros(valid.shape, dtype=x.dtype).masked_fill(~valid, float("-inf"))[:, None, None, :]
        H = x @ self.input_projection
        if self.cfg.use_features:
            if features is None:
                raise ConfigError("model was configured with node features")
            H = H + self._tensor(features) @ self.feature_weight + self.feature_bias
        if input_offset is not None:
            H = H + self._tensor(input_offset)
        H = H * m
        trace = ForwardTrace(H=[H])
        for k, block in enumerate(self.blocks, 1):
            Z = block.transform(H, key_bias, mode) * m
            H = Z + (A @ Z) @ block.propagation if self.cfg.multiplicative_residual else Z
            H = H * m
            if not torch.isfinite(H).all():
                raise NumericError(f"non-finite hidden state in layer {k}", layer=k)
            trace.Z.append(Z)
            trace.H.append(H)
        T = H.shape[1]
        pair = torch.cat([H[:, T - 2], H[:, T - 1]], dim=-1)
        logits = pair @ self.readout_weight + self.readout_bias
        trace.logits = logits
        return logits, trace

    def forward_batch(self, batch, adjacency=None, mode="full", input_offset=None):
        if adjacency is None:
            adjacency = reconstruct_adjacency(batch, normalize=self.cfg.normalize_adjacency)
        A = getattr(adjacency, "A_tilde", adjacency)
        return self(batch.tokens, A, batch.valid_mask, batch.features, mode=mode, input_offset=input_offset)


def bce_loss(logits, labels):
    """Mean of ``log(1 + exp(-y z))`` with ``y = 2 label - 1``, computed stably."""
    z = torch.as_tensor(logits)
    y = torch.as_tensor(np.asarray(labels) if not torch.is_tensor(labels) else labels).to(z.dtype)
    return F.binary_cross_entropy_with_logits(z, y)


def backward(model, batch, adjacency, labels):
    """Gradients of the BCE loss for every trainable parameter, as numpy arrays."""
    model.zero_grad(set_to_none=True)
    logits, _ = model.forward_batch(batch, adjacency)
    loss = bce_loss(logits, labels)
    loss.backward()
    return {name: p.grad.detach().numpy().copy()
            for name, p in model.named_parameters() if p.requires_grad and p.grad is not None}


def degenerate_forward(model, batch, adjacency=None, mode="attention_off"):
    """Forward pass with the Transformer blocks reduced to the identity.

    ``attention_off`` runs each block with its attention and MLP branches
    zeroed; ``attention_identity`` skips the block entirely. Either way every
    layer becomes ``H' = H + (A H) P``. Returns ``(logits, final states)``.
    """
    if mode not in ("attention_off", "attention_identity"):
        raise ConfigError(f"degenerate mode must be attention_off or attention_identity, got {mode!r}")
    logits, trace = model.forward_batch(batch, adjacency, mode=mode)
    return logits, trace.H[-1]


_CKPT_MAGIC = b"TLCKPT01"


def save_checkpoint(model, path):
    """Flat binary checkpoint.

    Layout: magic, 32-byte config digest, u32 config-JSON length + JSON,
    u32 tensor count, then per tensor u16 name length, name, u8 ndim,
    u32 dims, row-major little-endian float64 data.
    """
    cfg_json = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    arrays = model.arrays()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(bytes.fromhex(model.cfg.digest()))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Return ``(EncoderConfig, {name: array})`` from :func:`save_checkpoint` output."""
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise GraphFormatError(f"{path} is not a checkpoint")
        digest = fh.read(32).hex()
        (n,) = struct.unpack("<I", fh.read(4))
        cfg = EncoderConfig(**json.loads(fh.read(n)))
        if cfg.digest() != digest:
            raise GraphFormatError(f"{path}: config digest mismatch")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
    return cfg, arrays


def file_digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()
