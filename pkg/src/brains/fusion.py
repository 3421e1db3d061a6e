"""Case fusion: single-head cross-attention over retrieved-case vectors.

The target summary vector queries the concatenated rows of the retrieved
cases' hidden sequences; the attention output is a single fusion vector
that replaces the reserved retrieval slot in a prompt embedding sequence.
Forward and backward passes are implemented analytically so gradient
correctness is checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .encoder import HiddenSequence, fnv1a64
from .errors import (
    DimensionMismatch,
    EmptyRetrieval,
    MissingRagSlot,
    MultipleRagSlots,
    NonFiniteInput,
)

RAG_SLOT = "<RAGHere>"
FUSED_SLOT = "<fused>"


@dataclass
class FusionParams:
    w_q: np.ndarray                 # (d_k, d)
    w_k: np.ndarray                 # (d_k, d)
    w_v: Optional[np.ndarray]       # None when shared with w_k
    d_k: int
    shared_kv: bool = True

    @classmethod
    def init(
        cls, d: int, d_k: int = 64, shared_kv: bool = True, seed: int = 0
    ) -> "FusionParams":
        if d_k < 1:
            raise ValueError(f"d_k must be >= 1, got {d_k}")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d)
        w_q = rng.uniform(-scale, scale, size=(d_k, d))
        w_k = rng.uniform(-scale, scale, size=(d_k, d))
        w_v = None if shared_kv else rng.uniform(-scale, scale, size=(d_k, d))
        return cls(w_q=w_q, w_k=w_k, w_v=w_v, d_k=d_k, shared_kv=shared_kv)

    @property
    def value_matrix(self) -> np.ndarray:
        return self.w_k if self.shared_kv else self.w_v


@dataclass
class ConcatMatrix:
    """Row-stacked retrieved-case vectors with per-case block boundaries.

    ``mask[i]`` True excludes row i from attention entirely (weight is
    exactly zero and no gradient flows through it)."""

    rows: np.ndarray                       # (R, d)
    boundaries: tuple                      # ((start, end), ...) per case
    mask: np.ndarray                       # (R,) bool

    @property
    def n_cases(self) -> int:
        return len(self.boundaries)


@dataclass(frozen=True)
class MaskSpec:
    m: int
    seed: int

    def __post_init__(self):
        if not 0 <= self.m <= 4:
            raise ValueError(f"masked-case count must be in [0, 4], got {self.m}")


@dataclass
class FusionOutput:
    vector: np.ndarray       # (d_k,)
    weights: np.ndarray      # (R,) attention weights, exact 0 on masked rows
    no_evidence: bool


@dataclass
class FusionGrads:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: Optional[np.ndarray]
    t_cls: np.ndarray
    rows: np.ndarray         # (R, d), exact 0 on masked rows


def build_concat(
    retrieved_count: int, sequences: Sequence[HiddenSequence]
) -> ConcatMatrix:
    """Stack the hidden sequences of the retrieved cases, summary row
    first within each case block, in retrieval order."""
    if retrieved_count == 0 or not sequences:
        raise EmptyRetrieval("no retrieved cases to concatenate")
    if len(sequences) != retrieved_count:
        raise ValueError(
            f"{retrieved_count} retrieved cases but {len(sequences)} sequences"
        )
    d = sequences[0].cls.shape[0]
    blocks = []
    boundaries = []
    start = 0
    for seq in sequences:
        if seq.cls.shape[0] != d or (seq.tokens.size and seq.tokens.shape[1] != d):
            raise DimensionMismatch(d, seq.cls.shape[0])
        block = seq.rows
        blocks.append(block)
        boundaries.append((start, start + block.shape[0]))
        start += block.shape[0]
    rows = np.vstack(blocks)
    return ConcatMatrix(
        rows=rows, boundaries=tuple(boundaries),
        mask=np.zeros(rows.shape[0], dtype=bool),
    )


def apply_mask(concat: ConcatMatrix, spec: MaskSpec) -> ConcatMatrix:
    """Mask whole case blocks, chosen without replacement, deterministic
    given the spec seed. Returns a new matrix; input is untouched."""
    if spec.m > concat.n_cases:
        raise ValueError(
            f"cannot mask {spec.m} of {concat.n_cases} case blocks"
        )
    mask = concat.mask.copy()
    if spec.m > 0:
        rng = np.random.default_rng(spec.seed)
        chosen = rng.choice(concat.n_cases, size=spec.m, replace=False)
        for block in chosen:
            start, end = concat.boundaries[int(block)]
            mask[start:end] = True
    return replace(concat, mask=mask)


def _check_finite(*arrays: Optional[np.ndarray]) -> None:
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NonFiniteInput("non-finite values in fusion input")


def fuse(t_cls: np.ndarray, concat: ConcatMatrix, params: FusionParams) -> FusionOutput:
    """Cross-attention of the target summary over active retrieved rows.

    scores = (rows W_K^T) (W_Q t) / sqrt(d_k), softmax with
    max-subtraction, output = weights^T (rows W_V^T). Zero active rows
    degrade to a zero vector with the no-evidence flag set.
    """
    _check_finite(t_cls, concat.rows, params.w_q, params.w_k, params.w_v)
    d_k = params.d_k
    active = ~concat.mask
    weights = np.zeros(concat.rows.shape[0], dtype=np.float64)
    if concat.rows.shape[0] == 0 or not active.any():
        return FusionOutput(
            vector=np.zeros(d_k, dtype=np.float64), weights=weights, no_evidence=True
        )

    q = params.w_q @ t_cls
    rows = concat.rows[active]
    keys = rows @ params.w_k.T
    values = rows @ params.value_matrix.T
    scores = keys @ q / np.sqrt(d_k)
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    w = exp / exp.sum()
    weights[active] = w
    return FusionOutput(vector=w @ values, weights=weights, no_evidence=False)


def fuse_backward(
    t_cls: np.ndarray,
    concat: ConcatMatrix,
    params: FusionParams,
    upstream: np.ndarray,
) -> FusionGrads:
    """Analytic gradients of ``upstream . fuse(...)`` for both projections,
    the target summary and every row. Masked rows get exact zeros."""
    _check_finite(t_cls, concat.rows, params.w_q, params.w_k, params.w_v, upstream)
    d_k = params.d_k
    d = t_cls.shape[0]
    rows_grad = np.zeros_like(concat.rows)
    zero = FusionGrads(
        w_q=np.zeros_like(params.w_q),
        w_k=np.zeros_like(params.w_k),
        w_v=None if params.shared_kv else np.zeros_like(params.w_v),
        t_cls=np.zeros(d, dtype=np.float64),
        rows=rows_grad,
    )
    active = ~concat.mask
    if concat.rows.shape[0] == 0 or not active.any():
        return zero

    w_v = params.value_matrix
    q = params.w_q @ t_cls
    rows = concat.rows[active]
    keys = rows @ params.w_k.T
    values = rows @ w_v.T
    scale = 1.0 / np.sqrt(d_k)
    scores = keys @ q * scale
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    w = exp / exp.sum()

    g = np.asarray(upstream, dtype=np.float64)
    d_values = np.outer(w, g)
    d_w = values @ g
    d_scores = w * (d_w - float(w @ d_w))
    d_q = keys.T @ d_scores * scale
    d_keys = np.outer(d_scores, q) * scale

    grad_w_q = np.outer(d_q, t_cls)
    grad_t = params.w_q.T @ d_q
    grad_w_k = d_keys.T @ rows
    grad_w_v = d_values.T @ rows
    d_rows = d_keys @ params.w_k + d_values @ w_v

    rows_grad[active] = d_rows
    if params.shared_kv:
        return FusionGrads(
            w_q=grad_w_q, w_k=grad_w_k + grad_w_v, w_v=None,
            t_cls=grad_t, rows=rows_grad,
        )
    return FusionGrads(
        w_q=grad_w_q, w_k=grad_w_k, w_v=grad_w_v, t_cls=grad_t, rows=rows_grad
    )


# --------------------------------------------------------------------------
# Prompt sequence splicing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptSlot:
    role: str
    vector: np.ndarray


@dataclass(frozen=True)
class PromptSequence:
    slots: tuple

    def __len__(self) -> int:
        return len(self.slots)


def _slot_embedding(role: str, d_k: int) -> np.ndarray:
    rng = np.random.default_rng(fnv1a64(role.encode("utf-8")) % (2**63))
    return rng.uniform(-1.0 / np.sqrt(d_k), 1.0 / np.sqrt(d_k), size=d_k)


DEFAULT_PROMPT_ROLES = ("<s>", "system", "user", RAG_SLOT, "user", "assistant", "</s>")


def build_prompt_template(
    d_k: int, roles: Sequence[str] = DEFAULT_PROMPT_ROLES
) -> PromptSequence:
    """Deterministic embedding sequence with one retrieval slot."""
    return PromptSequence(
        slots=tuple(PromptSlot(role=r, vector=_slot_embedding(r, d_k)) for r in roles)
    )


def splice_prompt(template: PromptSequence, fusion_vector: np.ndarray) -> PromptSequence:
    """Replace the single retrieval slot with the fusion vector. Every
    other slot is carried over bit-identically."""
    positions = [i for i, slot in enumerate(template.slots) if slot.role == RAG_SLOT]
    if not positions:
        raise MissingRagSlot("prompt template has no retrieval slot")
    if len(positions) > 1:
        raise MultipleRagSlots(f"prompt template has {len(positions)} retrieval slots")
    pos = positions[0]
    expected = template.slots[pos].vector.shape[0]
    vec = np.asarray(fusion_vector, dtype=np.float64).reshape(-1)
    if vec.shape[0] != expected:
        raise DimensionMismatch(expected, vec.shape[0])
    slots = list(template.slots)
    slots[pos] = PromptSlot(role=FUSED_SLOT, vector=vec)
    return PromptSequence(slots=tuple(slots))
