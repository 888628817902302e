"""Evaluation kernels: macro-F1, reciprocal-rank pooling, and the
line-oriented report format the CLI tabulates.

Everything here is pure and stateless; ranking is made deterministic by
breaking cosine ties on ascending candidate id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyEvaluation, ZeroNorm


@dataclass
class ConfusionTally:
    """Per-class true/false positive and false negative counts.

    The class universe is the set of classes present in the ground truth;
    classes that are only ever predicted do not join the macro average.
    """

    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    truth_classes: set = field(default_factory=set)

    def update(self, y_true, y_pred) -> None:
        y_true = np.asarray(y_true).ravel()
        y_pred = np.asarray(y_pred).ravel()
        if y_true.shape != y_pred.shape:
            raise ValueError("prediction/truth length mismatch")
        for t, p in zip(y_true.tolist(), y_pred.tolist()):
            self.truth_classes.add(t)
            if t == p:
                self.tp[t] = self.tp.get(t, 0) + 1
            else:
                self.fn[t] = self.fn.get(t, 0) + 1
                self.fp[p] = self.fp.get(p, 0) + 1

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionTally":
        tally = cls()
        tally.update(y_true, y_pred)
        return tally


def macro_f1(tally: ConfusionTally) -> tuple[float, dict]:
    """Unweighted mean of per-class F1; a class with no P or R scores 0."""
    if not tally.truth_classes:
        raise EmptyEvaluation("no ground-truth classes in tally")
    per_class = {}
    for c in sorted(tally.truth_classes, key=repr):
        tp = tally.tp.get(c, 0)
        fp = tally.fp.get(c, 0)
        fn = tally.fn.get(c, 0)
        denom = 2 * tp + fp + fn
        per_class[c] = (2 * tp / denom) if denom else 0.0
    return sum(per_class.values()) / len(per_class), per_class


def micro_f1(tally: ConfusionTally) -> float:
    if not tally.truth_classes:
        raise EmptyEvaluation("no ground-truth classes in tally")
    tp = sum(tally.tp.values())
    fp = sum(tally.fp.values())
    fn = sum(tally.fn.values())
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


@dataclass
class PoolQuery:
    """One retrieval query: an embedding ranked against a candidate pool."""

    query: np.ndarray
    candidate_ids: list
    candidate_embeddings: np.ndarray  # (n, d), row i belongs to candidate_ids[i]
    gt_id: object

    def __post_init__(self):
        if len(self.candidate_ids) != len(set(self.candidate_ids)):
            raise ValueError("candidate ids must be unique")
        if self.gt_id not in self.candidate_ids:
            raise ValueError("ground-truth candidate missing from pool")
        if len(self.candidate_ids) != self.candidate_embeddings.shape[0]:
            raise ValueError("candidate id/embedding count mismatch")

    @property
    def pool_size(self) -> int:
        return len(self.candidate_ids)


def _cosine_to_query(q: PoolQuery) -> np.ndarray:
    qn = np.linalg.norm(q.query)
    cn = np.linalg.norm(q.candidate_embeddings, axis=1)
    if qn == 0 or (cn == 0).any():
        raise ZeroNorm("zero-norm embedding in ranking pool")
    return (q.candidate_embeddings @ q.query) / (cn * qn)


def rank_pool(q: PoolQuery) -> int:
    """1-based rank of the ground-truth candidate by descending cosine."""
    sims = _cosine_to_query(q)
    order = sorted(range(q.pool_size), key=lambda i: (-sims[i], q.candidate_ids[i]))
    return order.index(q.candidate_ids.index(q.gt_id)) + 1


def mrr(queries: list[PoolQuery]) -> float:
    if not queries:
        raise EmptyEvaluation("no queries")
    return float(np.mean([1.0 / rank_pool(q) for q in queries]))


def recall_at_k(queries: list[PoolQuery], k: int) -> float:
    if not queries:
        raise EmptyEvaluation("no queries")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(np.mean([1.0 if rank_pool(q) <= k else 0.0 for q in queries]))


@dataclass
class EvaluationReport:
    """Flat name -> value metric map with enough metadata to re-read it.

    Serialized one record per line as "name value"; names are dotted
    paths (macro_f1, f1.SI, mrr.pool32, meta.seed, ...).
    """

    kind: str
    primary: float
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_lines(self) -> list[str]:
        lines = [f"kind {self.kind}", f"primary {self.primary:.10g}"]
        for name in sorted(self.metrics):
            lines.append(f"{name} {self.metrics[name]:.10g}")
        for name in sorted(self.meta):
            lines.append(f"meta.{name} {self.meta[name]}")
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvaluationReport":
        kind, primary = "", 0.0
        metrics: dict = {}
        meta: dict = {}
        for raw in text.splitlines():
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            name, _, value = raw.partition(" ")
            if name == "kind":
                kind = value
            elif name == "primary":
                primary = float(value)
            elif name.startswith("meta."):
                meta[name[len("meta."):]] = value
            else:
                metrics[name] = float(value)
        return cls(kind=kind, primary=primary, metrics=metrics, meta=meta)
