"""Training loop: dynamic retrieval masking, analytic backprop, AdamW.

Only the scoring head and the fusion projections train by default; the
encoder summary projection and the bilinear reranker can be unfrozen via
config flags. The per-example objective is label-wise binary
cross-entropy, plus (when the reranker is unfrozen) a listwise ranking
term that pushes rerank scores toward label-overlap relevance — the task
loss itself carries no gradient through the discrete top-k selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cases import CaseRecord
from .checkpoint import Checkpoint
from .diagnose import HeadParams, LABEL_COUNT, head_forward, label_vector
from .encoder import EncoderParams, init_encoder, normalize_cls
from .errors import EmptyIndex, EmptyTrainSplit
from .fusion import (
    ConcatMatrix,
    FusionOutput,
    FusionParams,
    MaskSpec,
    apply_mask,
    fuse,
    fuse_backward,
)
from .preprocess import PreprocessStats, apply_preprocess
from .retrieval import RerankerParams, VectorIndex, rerank

# Reference backbone fine-tune constants, recorded for provenance only;
# the local trainer does not consume them.
PRETRAIN_REFERENCE = {
    "epochs": 10,
    "batch_size": 64,
    "learning_rate": 1e-4,
    "warmup_steps": 1000,
    "token_block_size": 2048,
}
LORA_REFERENCE = {"alpha": 32, "r": 8}


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    mask_max: int = 4
    k: int = 5
    n1: Optional[int] = None
    seed: int = 0
    threshold: float = 0.5
    unfreeze_encoder: bool = False
    unfreeze_reranker: bool = False
    rerank_loss_weight: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "mask_max": self.mask_max,
            "k": self.k,
            "n1": self.n1,
            "seed": self.seed,
            "threshold": self.threshold,
            "unfreeze_encoder": self.unfreeze_encoder,
            "unfreeze_reranker": self.unfreeze_reranker,
            "rerank_loss_weight": self.rerank_loss_weight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class TrainableModel:
    encoder: EncoderParams
    fusion: FusionParams
    head: HeadParams
    reranker: RerankerParams

    @classmethod
    def init(
        cls,
        d: int = 64,
        d_k: int = 64,
        seed: int = 0,
        shared_kv: bool = True,
        encoder_mode: str = "structured",
        reranker_trainable: bool = False,
    ) -> "TrainableModel":
        encoder = init_encoder(mode=encoder_mode, d=d, seed=seed)
        fusion = FusionParams.init(d=d, d_k=d_k, shared_kv=shared_kv, seed=seed + 1)
        head = HeadParams.init(d_in=d_k + d, seed=seed + 2)
        reranker = RerankerParams.identity(d, trainable=reranker_trainable)
        return cls(encoder=encoder, fusion=fusion, head=head, reranker=reranker)


def trainable_parameters(model: TrainableModel, cfg: TrainConfig) -> dict[str, np.ndarray]:
    params = {
        "head.w": model.head.w,
        "head.b": model.head.b,
        "fusion.w_q": model.fusion.w_q,
        "fusion.w_k": model.fusion.w_k,
    }
    if not model.fusion.shared_kv:
        params["fusion.w_v"] = model.fusion.w_v
    if cfg.unfreeze_encoder:
        params["encoder.projection"] = model.encoder.weights["projection"]
    if cfg.unfreeze_reranker:
        params["reranker.m"] = model.reranker.matrix
    return params


class AdamW:
    """Decoupled-weight-decay adaptive moment estimation."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.params = params
        self.lr = cfg.learning_rate
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps
        self.weight_decay = cfg.weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                            + self.weight_decay * p)


@dataclass
class ForwardExample:
    """One training example with retrieval already resolved, so the
    objective below is a pure (finite-differentiable) function of the
    model parameters."""

    x: np.ndarray                       # target feature vector
    y: np.ndarray                       # (5,) gold indicators
    aux_xs: tuple = ()                  # feature vectors of retrieved cases
    mask_m: int = 0
    mask_seed: int = 0
    cand_vectors: Optional[np.ndarray] = None    # (C, d) unit rows
    cand_relevance: Optional[np.ndarray] = None  # (C,) sums to 1


def _build_concat_from_features(
    aux_xs: Sequence[np.ndarray], encoder: EncoderParams
) -> ConcatMatrix:
    proj = encoder.weights["projection"]
    dirs = encoder.weights["directions"]
    blocks = []
    boundaries = []
    start = 0
    for x in aux_xs:
        rows = np.vstack([(proj @ x)[None, :], x[:, None] * dirs])
        blocks.append(rows)
        boundaries.append((start, start + rows.shape[0]))
        start += rows.shape[0]
    all_rows = np.vstack(blocks)
    return ConcatMatrix(
        rows=all_rows,
        boundaries=tuple(boundaries),
        mask=np.zeros(all_rows.shape[0], dtype=bool),
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def example_loss_and_grads(
    model: TrainableModel,
    cfg: TrainConfig,
    ex: ForwardExample,
    want_grads: bool = True,
) -> tuple[float, Optional[dict[str, np.ndarray]]]:
    """Objective value and analytic gradients for one example.

    Retrieval results inside ``ex`` are treated as given; gradients flow
    through the head, the fusion projections and, when unfrozen, the
    encoder summary projection and the reranker bilinear form.
    """
    proj = model.encoder.weights["projection"]
    d_k = model.fusion.d_k
    t_cls = proj @ ex.x

    if ex.aux_xs:
        concat = _build_concat_from_features(ex.aux_xs, model.encoder)
        if ex.mask_m > 0:
            concat = apply_mask(concat, MaskSpec(m=ex.mask_m, seed=ex.mask_seed))
        out = fuse(t_cls, concat, model.fusion)
    else:
        concat = None
        out = FusionOutput(
            vector=np.zeros(d_k), weights=np.zeros(0), no_evidence=True
        )

    scores, _ = head_forward(model.head, out.vector, t_cls)
    p = np.clip(scores, 1e-7, 1.0 - 1e-7)
    total = float(-(ex.y * np.log(p) + (1.0 - ex.y) * np.log(1.0 - p)).mean())

    # Listwise ranking term for the unfrozen reranker.
    aux_soft = None
    q_unit = None
    u_norm = None
    if (
        cfg.unfreeze_reranker
        and ex.cand_vectors is not None
        and ex.cand_relevance is not None
    ):
        u_norm = float(np.linalg.norm(t_cls))
        if u_norm > 0.0:
            q_unit = t_cls / u_norm
            s = (q_unit @ model.reranker.matrix) @ ex.cand_vectors.T
            aux_soft = _softmax(s)
            total += cfg.rerank_loss_weight * float(
                -(ex.cand_relevance * np.log(np.clip(aux_soft, 1e-12, None))).sum()
            )

    if not want_grads:
        return total, None

    grads: dict[str, np.ndarray] = {}
    h_in = np.concatenate([out.vector, t_cls])
    dz = (p - ex.y) / LABEL_COUNT
    grads["head.w"] = np.outer(dz, h_in)
    grads["head.b"] = dz.copy()
    dh = model.head.w.T @ dz
    d_fusion_vec = dh[:d_k]
    d_t = dh[d_k:].copy()

    if concat is not None:
        fg = fuse_backward(t_cls, concat, model.fusion, d_fusion_vec)
        grads["fusion.w_q"] = fg.w_q
        grads["fusion.w_k"] = fg.w_k
        if not model.fusion.shared_kv:
            grads["fusion.w_v"] = fg.w_v
        d_t += fg.t_cls
    else:
        grads["fusion.w_q"] = np.zeros_like(model.fusion.w_q)
        grads["fusion.w_k"] = np.zeros_like(model.fusion.w_k)
        if not model.fusion.shared_kv:
            grads["fusion.w_v"] = np.zeros_like(model.fusion.w_v)
        fg = None

    if cfg.unfreeze_reranker:
        grads["reranker.m"] = np.zeros_like(model.reranker.matrix)
        if aux_soft is not None:
            ds = cfg.rerank_loss_weight * (aux_soft - ex.cand_relevance)
            weighted = ex.cand_vectors.T @ ds
            grads["reranker.m"] = np.outer(q_unit, weighted)
            if cfg.unfreeze_encoder:
                dq = model.reranker.matrix @ weighted
                du = (dq - q_unit * float(q_unit @ dq)) / u_norm
                d_t += du

    if cfg.unfreeze_encoder:
        g_proj = np.outer(d_t, ex.x)
        if fg is not None:
            for (start, _), x_r in zip(concat.boundaries, ex.aux_xs):
                g_proj += np.outer(fg.rows[start], x_r)
        grads["encoder.projection"] = g_proj

    return total, grads


def _label_overlap_relevance(
    cand_labels: Sequence[frozenset], gold: frozenset
) -> Optional[np.ndarray]:
    raw = np.array([len(labels & gold) for labels in cand_labels], dtype=np.float64)
    total = raw.sum()
    if total == 0.0:
        return None
    return raw / total


def train(
    train_split: Sequence[CaseRecord],
    val_split: Sequence[CaseRecord],
    cfg: TrainConfig,
    index: VectorIndex,
    stats: PreprocessStats,
    model: Optional[TrainableModel] = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train head + fusion (+ unfrozen extras) and return the checkpoint
    plus a per-epoch loss log. Bit-identical results for a fixed config
    and seed."""
    if not train_split:
        raise EmptyTrainSplit("training requires a non-empty train split")
    if model is None:
        model = TrainableModel.init(seed=cfg.seed)

    frozen_retrieval = not (cfg.unfreeze_encoder or cfg.unfreeze_reranker)
    proj = model.encoder.weights["projection"]

    xs = [apply_preprocess(r.case, stats) for r in train_split]
    ys = [label_vector(r.labels) for r in train_split]
    val_xs = [apply_preprocess(r.case, stats) for r in val_split]
    val_ys = [label_vector(r.labels) for r in val_split]
    x_by_id = {r.case.id: x for r, x in zip(train_split, xs)}

    def resolve_retrieval(record: CaseRecord, x: np.ndarray):
        """Retrieved aux feature vectors plus reranker candidate data."""
        query = normalize_cls(proj @ x)
        try:
            n1 = cfg.n1 if cfg.n1 is not None else min(1000, index.size)
            candidates = index.search(query, n1) if index.size else []
            candidates = [c for c in candidates if c.id != record.case.id]
        except EmptyIndex:
            candidates = []
        if not candidates:
            return (), None, None
        retrieved = rerank(query, candidates, model.reranker, cfg.k)
        aux = tuple(x_by_id[item.id] for item in retrieved.items)
        cand_vectors = None
        cand_relevance = None
        if cfg.unfreeze_reranker:
            rel = _label_overlap_relevance(
                [c.labels for c in candidates], frozenset(record.labels)
            )
            if rel is not None:
                cand_vectors = np.stack(
                    [c.vector.astype(np.float64) for c in candidates]
                )
                cand_relevance = rel
        return aux, cand_vectors, cand_relevance

    cache = {}
    if frozen_retrieval:
        for record, x in zip(train_split, xs):
            cache[record.case.id] = resolve_retrieval(record, x)
        val_cache = [
            resolve_retrieval(record, x) for record, x in zip(val_split, val_xs)
        ]
    else:
        val_cache = None

    param_registry = trainable_parameters(model, cfg)
    optimizer = AdamW(param_registry, cfg)
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []

    n = len(train_split)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_start in range(0, n, cfg.batch_size):
            batch = order[batch_start:batch_start + cfg.batch_size]
            acc = {name: np.zeros_like(p) for name, p in param_registry.items()}
            for idx in batch:
                idx = int(idx)
                record = train_split[idx]
                if frozen_retrieval:
                    aux, cand_vectors, cand_relevance = cache[record.case.id]
                else:
                    aux, cand_vectors, cand_relevance = resolve_retrieval(
                        record, xs[idx]
                    )
                mask_rng = np.random.default_rng([cfg.seed, 7919, epoch, idx])
                k_actual = len(aux)
                m_hi = min(cfg.mask_max, k_actual, 4)
                m = int(mask_rng.integers(0, m_hi + 1)) if m_hi > 0 else 0
                ex = ForwardExample(
                    x=xs[idx],
                    y=ys[idx],
                    aux_xs=aux,
                    mask_m=m,
                    mask_seed=int(mask_rng.integers(2**62)),
                    cand_vectors=cand_vectors,
                    cand_relevance=cand_relevance,
                )
                value, grads = example_loss_and_grads(model, cfg, ex)
                epoch_loss += value
                for name in acc:
                    acc[name] += grads[name]
            for name in acc:
                acc[name] /= len(batch)
            optimizer.step(acc)

        val_loss = None
        if val_split:
            val_total = 0.0
            for i, (record, x) in enumerate(zip(val_split, val_xs)):
                if frozen_retrieval:
                    aux, _, _ = val_cache[i]
                else:
                    aux, _, _ = resolve_retrieval(record, x)
                ex = ForwardExample(x=x, y=val_ys[i], aux_xs=aux)
                value, _ = example_loss_and_grads(model, cfg, ex, want_grads=False)
                val_total += value
            val_loss = val_total / len(val_split)

        log.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "val_loss": val_loss,
        })

    checkpoint = Checkpoint(
        encoder=model.encoder,
        fusion=model.fusion,
        head=model.head,
        reranker=model.reranker,
        stats=stats,
        train_config=cfg.to_dict(),
    )
    return checkpoint, log
