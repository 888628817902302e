"""Shared transformer encoder over byte token sequences.

Input rows are byte embeddings plus learned positional embeddings; the
stack is made of bidirectional self-attention blocks with key-side
masking of PAD positions, so padding can never influence content rows.
Two pooling modes feed the task heads: the first-row summary vector and
a content-only mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .exceptions import SequenceTooLong
from .tokenizer import NUM_BYTES, VOCAB_SIZE, TokenSequence


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int = VOCAB_SIZE
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    dropout: float = 0.1
    norm_style: str = "pre"  # "pre" or "post" residual blocks
    activation: str = "gelu"  # or "relu"

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.max_len < 3:
            raise ValueError("max_len must be >= 3")
        if self.norm_style not in ("pre", "post"):
            raise ValueError(f"unknown norm_style {self.norm_style!r}")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


def init_backbone_params(
    cfg: BackboneConfig, seed: int, dtype=np.float32
) -> ParameterSet:
    """Fresh parameters: normal(0, 0.02) weights, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    ps = ParameterSet()

    def w(name, *shape):
        ps.add(name, (rng.normal(0.0, 0.02, size=shape)).astype(dtype))

    def zeros(name, *shape):
        ps.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, *shape):
        ps.add(name, np.ones(shape, dtype=dtype))

    d, f = cfg.hidden_dim, cfg.ffn_dim
    w("embed.byte", cfg.vocab_size, d)
    w("embed.pos", cfg.max_len, d)
    for i in range(cfg.num_layers):
        p = f"layer{i:02d}"
        w(f"{p}.attn.wq", d, d)
        w(f"{p}.attn.wk", d, d)
        w(f"{p}.attn.wv", d, d)
        w(f"{p}.attn.wo", d, d)
        zeros(f"{p}.attn.bo", d)
        ones(f"{p}.norm1.scale", d)
        zeros(f"{p}.norm1.bias", d)
        w(f"{p}.ffn.w1", d, f)
        zeros(f"{p}.ffn.b1", f)
        w(f"{p}.ffn.w2", f, d)
        zeros(f"{p}.ffn.b2", d)
        ones(f"{p}.norm2.scale", d)
        zeros(f"{p}.norm2.bias", d)
    if cfg.num_layers > 0:
        ones("final_norm.scale", d)
        zeros("final_norm.bias", d)
    return ps


@dataclass
class HiddenStates:
    """Encoder output rows plus the masks heads need to ignore framing."""

    hidden: Tensor  # (B, L, d)
    attention_mask: np.ndarray  # (B, L) bool, False on PAD
    content_mask: np.ndarray  # (B, L) bool, True only on byte positions

    @property
    def batch_size(self) -> int:
        return self.hidden.shape[0]


@dataclass
class Batch:
    """Integer-encoded sequences ready for the encoder."""

    ids: np.ndarray  # (B, L) int
    attention_mask: np.ndarray  # (B, L) bool
    content_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.content_mask = self.ids < NUM_BYTES

    @classmethod
    def from_sequences(cls, seqs: list[TokenSequence]) -> "Batch":
        ids = np.array([s.ids for s in seqs], dtype=np.int64)
        mask = np.array([s.attention_mask for s in seqs], dtype=bool)
        return cls(ids=ids, attention_mask=mask)


def embed(batch: Batch, params: ParameterSet, cfg: BackboneConfig) -> Tensor:
    """Byte embedding plus learned positional embedding, row by row."""
    L = batch.ids.shape[1]
    if L > cfg.max_len:
        raise SequenceTooLong(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if batch.ids.max() >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")
    byte_rows = ad.embedding_lookup(params["embed.byte"], batch.ids)
    pos_rows = ad.embedding_lookup(params["embed.pos"], np.arange(L)[None, :])
    return byte_rows + pos_rows


def self_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    attn_mask: np.ndarray,
    num_heads: int,
) -> Tensor:
    """Multi-head scaled dot-product attention over (B, L, d) rows.

    Scores of masked (PAD) key positions are forced to -inf before the
    softmax, so every attention row is a distribution over unmasked keys
    only. Heads split the model width evenly and are concatenated back.
    """
    B, L, d = x.shape
    dk = d // num_heads

    def heads(t: Tensor) -> Tensor:
        return ad.swapaxes(ad.reshape(t, (B, L, num_heads, dk)), 1, 2)

    q = heads(x @ wq)  # (B, H, L, dk)
    k = heads(x @ wk)
    v = heads(x @ wv)

    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
    bias = np.where(attn_mask[:, None, None, :], 0.0, -np.inf).astype(x.dtype)
    weights = ad.softmax_lastdim(scores + Tensor(bias))
    ctx = weights @ v  # (B, H, L, dk)
    return ad.reshape(ad.swapaxes(ctx, 1, 2), (B, L, d))


def _activation(cfg: BackboneConfig):
    return ad.gelu if cfg.activation == "gelu" else ad.relu


def encode_batch(
    batch: Batch,
    params: ParameterSet,
    cfg: BackboneConfig,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> HiddenStates:
    """Run the full encoder stack; a zero-layer stack is the raw embedding."""
    h = embed(batch, params, cfg)
    act = _activation(cfg)
    p_drop = cfg.dropout if train else 0.0
    if p_drop > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")

    for i in range(cfg.num_layers):
        p = f"layer{i:02d}"

        def block(x, sub):
            if p_drop > 0.0:
                sub = ad.dropout(sub, p_drop, rng)
            return x + sub

        if cfg.norm_style == "pre":
            n1 = ad.layer_norm(h, params[f"{p}.norm1.scale"], params[f"{p}.norm1.bias"])
            attn = self_attention(
                n1,
                params[f"{p}.attn.wq"],
                params[f"{p}.attn.wk"],
                params[f"{p}.attn.wv"],
                batch.attention_mask,
                cfg.num_heads,
            )
            h = block(h, attn @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"])
            n2 = ad.layer_norm(h, params[f"{p}.norm2.scale"], params[f"{p}.norm2.bias"])
            ffn = act(n2 @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"])
            h = block(h, ffn @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"])
        else:
            attn = self_attention(
                h,
                params[f"{p}.attn.wq"],
                params[f"{p}.attn.wk"],
                params[f"{p}.attn.wv"],
                batch.attention_mask,
                cfg.num_heads,
            )
            h = block(h, attn @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"])
            h = ad.layer_norm(h, params[f"{p}.norm1.scale"], params[f"{p}.norm1.bias"])
            ffn = act(h @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"])
            h = block(h, ffn @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"])
            h = ad.layer_norm(h, params[f"{p}.norm2.scale"], params[f"{p}.norm2.bias"])

    if cfg.num_layers > 0 and cfg.norm_style == "pre":
        h = ad.layer_norm(h, params["final_norm.scale"], params["final_norm.bias"])

    return HiddenStates(
        hidden=h,
        attention_mask=batch.attention_mask,
        content_mask=batch.content_mask,
    )


def encode(
    seq: TokenSequence, params: ParameterSet, cfg: BackboneConfig
) -> HiddenStates:
    """Single-sequence convenience wrapper (batch of one)."""
    return encode_batch(Batch.from_sequences([seq]), params, cfg)


def pool_cls(h: HiddenStates) -> Tensor:
    """The first-row summary vector, (B, d)."""
    B = h.batch_size
    return ad.select_positions(
        h.hidden, np.arange(B), np.zeros(B, dtype=np.int64)
    )


def pool_mean(h: HiddenStates) -> Tensor:
    """Mean over content byte rows only; framing and PAD are excluded."""
    mask = h.content_mask.astype(h.hidden.dtype)
    counts = mask.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("cannot mean-pool a sequence with no content rows")
    weighted = h.hidden * Tensor(mask[:, :, None])
    return ad.tsum(weighted, axis=1) * Tensor(1.0 / counts)
