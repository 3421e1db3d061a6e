"""Subtype scoring from the fused representation.

The scoring head is a linear map over the fusion vector concatenated
with the target summary vector, with an independent sigmoid per subtype.
An empty or fully self-excluded index degrades to a retrieval-free
forward pass (zero fusion vector, no-evidence flag).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .cases import ALL_LABELS, CaseRecord
from .encoder import encode
from .errors import EmptyIndex, UnknownId
from .fusion import FusionOutput, MaskSpec, apply_mask, build_concat, fuse
from .retrieval import RetrievedSet, VectorIndex, retrieve

LABEL_COUNT = len(ALL_LABELS)

BACKEND_LOCAL_FUSION = "local-fusion"
BACKEND_LOCAL_NO_RAG = "local-no-rag"
BACKEND_REMOTE_CONCAT = "remote-concat"


def label_vector(labels: frozenset) -> np.ndarray:
    y = np.zeros(LABEL_COUNT, dtype=np.float64)
    for lab in labels:
        y[int(lab)] = 1.0
    return y


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class HeadParams:
    w: np.ndarray    # (5, d_k + d)
    b: np.ndarray    # (5,)

    @classmethod
    def init(cls, d_in: int, seed: int = 0) -> "HeadParams":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_in)
        return cls(
            w=rng.uniform(-scale, scale, size=(LABEL_COUNT, d_in)),
            b=np.zeros(LABEL_COUNT, dtype=np.float64),
        )


def head_forward(
    head: HeadParams, fusion_vector: np.ndarray, t_cls: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (scores, logits)."""
    h_in = np.concatenate([fusion_vector, t_cls])
    logits = head.w @ h_in + head.b
    return sigmoid(logits), logits


def loss(scores: np.ndarray, gold: frozenset) -> float:
    """Mean binary cross-entropy over the five labels, scores clamped to
    [1e-7, 1 - 1e-7]."""
    y = label_vector(gold)
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def decide(scores: np.ndarray, threshold: float) -> frozenset:
    """Threshold is inclusive, so a 0.5 score is decided at the default."""
    return frozenset(lab for lab in ALL_LABELS if scores[int(lab)] >= threshold)


@dataclass(frozen=True)
class DiagnosisReport:
    scores: tuple            # 5 per-subtype scores in [0, 1]
    decided: frozenset
    evidence: tuple          # RetrievedItem view; empty iff no-RAG path
    backend: str
    threshold: float
    no_evidence: bool
    explanation: Optional[str] = None
    parse_failure: bool = False
    attempts: Optional[int] = None


def predict_local(
    record: CaseRecord,
    checkpoint,
    index: VectorIndex,
    case_store: Mapping[str, CaseRecord],
    k: Optional[int] = None,
    threshold: Optional[float] = None,
    mask_spec: Optional[MaskSpec] = None,
) -> DiagnosisReport:
    """Retrieve, fuse and score a case with the local head. Deterministic
    for a fixed (checkpoint, index) pair."""
    cfg = checkpoint.train_config
    if k is None:
        k = int(cfg.get("k", 5))
    if threshold is None:
        threshold = float(cfg.get("threshold", 0.5))

    stats = checkpoint.stats
    target = encode(record, checkpoint.encoder, stats)

    retrieved: Optional[RetrievedSet] = None
    if index.size > 0:
        try:
            retrieved = retrieve(
                record, index, checkpoint.encoder, stats, checkpoint.reranker, k=k
            )
        except EmptyIndex:
            retrieved = None

    if retrieved is not None and retrieved.k_actual > 0:
        sequences = []
        for item in retrieved.items:
            aux = case_store.get(item.id)
            if aux is None:
                raise UnknownId(item.id)
            sequences.append(encode(aux, checkpoint.encoder, stats))
        concat = build_concat(retrieved.k_actual, sequences)
        if mask_spec is not None:
            concat = apply_mask(concat, mask_spec)
        out = fuse(target.cls, concat, checkpoint.fusion)
    else:
        out = FusionOutput(
            vector=np.zeros(checkpoint.fusion.d_k, dtype=np.float64),
            weights=np.zeros(0, dtype=np.float64),
            no_evidence=True,
        )

    scores, _ = head_forward(checkpoint.head, out.vector, target.cls)
    evidence = () if out.no_evidence else retrieved.items
    return DiagnosisReport(
        scores=tuple(float(s) for s in scores),
        decided=decide(scores, threshold),
        evidence=evidence,
        backend=BACKEND_LOCAL_NO_RAG if out.no_evidence else BACKEND_LOCAL_FUSION,
        threshold=threshold,
        no_evidence=out.no_evidence,
    )
