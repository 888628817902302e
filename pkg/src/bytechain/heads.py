"""Task heads and their losses.

Three families share the encoder output: token-level classifiers score
every content byte, sequence-level classifiers score the first-row
summary vector, and the embedding head maps the content mean through a
two-layer MLP for similarity training. Every loss here is a scalar
Tensor wired into the autodiff graph.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .backbone import HiddenStates, pool_cls, pool_mean
from .exceptions import DegenerateLabel, EmptyMaskPlan, LabelRangeError, ZeroNorm
from .tokenizer import MaskPlan, VOCAB_SIZE


class HeadKind(enum.Enum):
    MLM = "mlm"
    INST_BOUNDARY = "inst_boundary"
    FUNC_BOUNDARY = "func_boundary"
    FUNC_SIGNATURE = "func_signature"
    FUNC_SIMILARITY = "func_similarity"
    FUNC_NAME = "func_name"
    COMPILER_PROV = "compiler_prov"
    MALWARE_CLASS = "malware_class"


# token-level label conventions
INST_CLASSES = ("SI", "MI")
FUNC_CLASSES = ("SF", "MF", "EF")


@dataclass(frozen=True)
class HeadConfig:
    hidden_dim: int = 64
    mlm_vocab: int = VOCAB_SIZE
    num_arg_classes: int = 7  # argument counts 0..5 plus "others"
    num_ret_classes: int = 6
    num_compilers: int = 2
    num_opt_classes: int = 6
    num_families: int = 9
    name_vocab_size: int = 32
    margin: float = 0.5
    mlp_activation: str = "gelu"  # "gelu", "relu" or "linear"

    def __post_init__(self):
        if not 0.0 <= self.margin <= 1.0:
            raise ValueError(f"margin must be in [0, 1], got {self.margin}")
        if self.mlp_activation not in ("gelu", "relu", "linear"):
            raise ValueError(f"unknown mlp_activation {self.mlp_activation!r}")

    def class_counts(self, kind: HeadKind) -> tuple[int, ...]:
        return {
            HeadKind.MLM: (self.mlm_vocab,),
            HeadKind.INST_BOUNDARY: (len(INST_CLASSES),),
            HeadKind.FUNC_BOUNDARY: (len(FUNC_CLASSES),),
            HeadKind.FUNC_SIGNATURE: (self.num_arg_classes, self.num_ret_classes),
            HeadKind.COMPILER_PROV: (self.num_compilers, self.num_opt_classes),
            HeadKind.MALWARE_CLASS: (self.num_families,),
            HeadKind.FUNC_NAME: (self.name_vocab_size,),
            HeadKind.FUNC_SIMILARITY: (),
        }[kind]


def init_head_params(
    kind: HeadKind, cfg: HeadConfig, seed: int, dtype=np.float32
) -> ParameterSet:
    """Fresh head weights; heads are task-shaped and never inherited."""
    rng = np.random.default_rng(seed)
    ps = ParameterSet()
    d = cfg.hidden_dim

    def linear(prefix: str, n_in: int, n_out: int):
        ps.add(f"{prefix}.w", rng.normal(0.0, 0.02, size=(n_in, n_out)).astype(dtype))
        ps.add(f"{prefix}.b", np.zeros(n_out, dtype=dtype))

    if kind == HeadKind.MLM:
        linear("head.out", d, cfg.mlm_vocab)
    elif kind in (HeadKind.INST_BOUNDARY, HeadKind.FUNC_BOUNDARY):
        linear("head.token", d, cfg.class_counts(kind)[0])
    elif kind in (HeadKind.FUNC_SIGNATURE, HeadKind.COMPILER_PROV):
        ca, cb = cfg.class_counts(kind)
        linear("head.axis_a", d, ca)
        linear("head.axis_b", d, cb)
    elif kind == HeadKind.FUNC_NAME:
        linear("head.words", d, cfg.name_vocab_size)
    elif kind == HeadKind.MALWARE_CLASS:
        linear("head.family", d, cfg.num_families)
    elif kind == HeadKind.FUNC_SIMILARITY:
        linear("head.mlp1", d, d)
        linear("head.mlp2", d, d)
    else:  # pragma: no cover
        raise ValueError(f"unknown head kind {kind}")
    return ps


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(
            f"label outside [0, {num_classes}): "
            f"min {labels.min()}, max {labels.max()}"
        )


def _mean_nll(logits: Tensor, labels: np.ndarray) -> Tensor:
    picked = ad.pick_classes(ad.log_softmax_lastdim(logits), labels)
    return -ad.tmean(picked)


def mlm_loss(h: HiddenStates, plans: list[MaskPlan], params: ParameterSet) -> Tensor:
    """Mean negative log-likelihood of the original bytes at masked positions."""
    batch_idx, pos_idx, originals = [], [], []
    for b, plan in enumerate(plans):
        for pos, orig in zip(plan.positions, plan.originals):
            batch_idx.append(b)
            pos_idx.append(pos)
            originals.append(orig)
    if not batch_idx:
        raise EmptyMaskPlan("no masked positions in batch")
    rows = ad.select_positions(
        h.hidden, np.asarray(batch_idx), np.asarray(pos_idx)
    )
    logits = rows @ params["head.out.w"] + params["head.out.b"]
    return _mean_nll(logits, np.asarray(originals))


def token_classification_loss(
    h: HiddenStates,
    labels: np.ndarray,
    params: ParameterSet,
    num_classes: int,
    content_mask: np.ndarray | None = None,
) -> Tensor:
    """Mean cross-entropy over content byte positions only."""
    mask = h.content_mask if content_mask is None else content_mask
    batch_idx, pos_idx = np.nonzero(mask)
    if batch_idx.size == 0:
        raise ValueError("no content positions to classify")
    picked_labels = labels[batch_idx, pos_idx]
    _check_labels(picked_labels, num_classes)
    rows = ad.select_positions(h.hidden, batch_idx, pos_idx)
    logits = rows @ params["head.token.w"] + params["head.token.b"]
    return _mean_nll(logits, picked_labels)


def joint_pair_loss(
    h: HiddenStates,
    labels: np.ndarray,
    params: ParameterSet,
    class_counts: tuple[int, int],
) -> Tensor:
    """Sum of two cross-entropies from parallel projections of the summary row."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[None, :]
    ca, cb = class_counts
    _check_labels(labels[:, 0], ca)
    _check_labels(labels[:, 1], cb)
    cls = pool_cls(h)
    logits_a = cls @ params["head.axis_a.w"] + params["head.axis_a.b"]
    logits_b = cls @ params["head.axis_b.w"] + params["head.axis_b.b"]
    return _mean_nll(logits_a, labels[:, 0]) + _mean_nll(logits_b, labels[:, 1])


def multilabel_name_loss(
    h: HiddenStates, name_labels: np.ndarray, params: ParameterSet
) -> Tensor:
    """Mean sigmoid binary cross-entropy over every vocabulary slot."""
    y = np.asarray(name_labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if (y.sum(axis=1) == 0).any():
        raise DegenerateLabel("a name label vector has no positive word")
    cls = pool_cls(h)
    z = cls @ params["head.words.w"] + params["head.words.b"]
    y = Tensor(y.astype(z.dtype))
    # stable BCE-with-logits: max(z,0) - z*y + log(1 + exp(-|z|))
    abs_z = ad.relu(z) + ad.relu(-z)
    per_slot = ad.relu(z) - z * y + ad.log(ad.exp(-abs_z) + 1.0)
    return ad.tmean(per_slot)


def function_embedding(h: HiddenStates, params: ParameterSet, cfg: HeadConfig) -> Tensor:
    """Content-mean vector pushed through the two-layer projector, (B, d)."""
    x = pool_mean(h)
    x = x @ params["head.mlp1.w"] + params["head.mlp1.b"]
    if cfg.mlp_activation == "gelu":
        x = ad.gelu(x)
    elif cfg.mlp_activation == "relu":
        x = ad.relu(x)
    return x @ params["head.mlp2.w"] + params["head.mlp2.b"]


def cosine_similarity(e1: Tensor, e2: Tensor) -> Tensor:
    """Row-wise cosine of two (B, d) embeddings."""
    if e1.data.ndim == 1:
        e1 = ad.reshape(e1, (1, -1))
    if e2.data.ndim == 1:
        e2 = ad.reshape(e2, (1, -1))
    n1 = ad.tsum(e1 * e1, axis=-1)
    n2 = ad.tsum(e2 * e2, axis=-1)
    if (n1.data == 0).any() or (n2.data == 0).any():
        raise ZeroNorm("cosine of a zero-norm embedding")
    return ad.tsum(e1 * e2, axis=-1) / ad.sqrt(n1 * n2)


def cosine_embedding_loss(e1: Tensor, e2: Tensor, y, margin: float) -> Tensor:
    """1 - cos for similar pairs; hinge max(0, cos - margin) for dissimilar."""
    y = np.atleast_1d(np.asarray(y))
    if not np.isin(y, (-1, 1)).all():
        raise ValueError("pair labels must be +1 or -1")
    if not 0.0 <= margin <= 1.0:
        raise ValueError(f"margin must be in [0, 1], got {margin}")
    cos = cosine_similarity(e1, e2)
    pos = np.asarray(y == 1, dtype=np.float64).astype(cos.dtype)
    per_pair = Tensor(pos) * (1.0 - cos) + Tensor(1.0 - pos) * ad.relu(cos - margin)
    return ad.tmean(per_pair)


def malware_loss(
    h: HiddenStates, family_ids: np.ndarray, params: ParameterSet, num_families: int
) -> Tensor:
    """Cross-entropy of the summary-row projection over malware families."""
    family_ids = np.atleast_1d(np.asarray(family_ids))
    _check_labels(family_ids, num_families)
    logits = pool_cls(h) @ params["head.family.w"] + params["head.family.b"]
    return _mean_nll(logits, family_ids)


# inference-side projections used by evaluation


def token_logits(h: HiddenStates, params: ParameterSet) -> np.ndarray:
    return (h.hidden @ params["head.token.w"] + params["head.token.b"]).data


def pair_logits(h: HiddenStates, params: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
    cls = pool_cls(h)
    a = (cls @ params["head.axis_a.w"] + params["head.axis_a.b"]).data
    b = (cls @ params["head.axis_b.w"] + params["head.axis_b.b"]).data
    return a, b


def name_logits(h: HiddenStates, params: ParameterSet) -> np.ndarray:
    return (pool_cls(h) @ params["head.words.w"] + params["head.words.b"]).data


def family_logits(h: HiddenStates, params: ParameterSet) -> np.ndarray:
    return (pool_cls(h) @ params["head.family.w"] + params["head.family.b"]).data
