"""Exact cosine vector index, bilinear reranking, two-stage retrieval.

The index is an exhaustive in-process scan — no approximation — so search
results are checkable against a brute-force sort oracle. Vectors are held
as little-endian float32, exactly as persisted, which makes save/load a
bit-exact round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cases import CaseRecord, SubtypeLabel
from .encoder import EncoderParams, embed_cls
from .errors import (
    CorruptIndex,
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
    IoFailure,
)
from .preprocess import PreprocessStats

INDEX_MAGIC = b"BRIX"
INDEX_FORMAT_VERSION = 1


def labels_to_mask(labels: frozenset) -> int:
    mask = 0
    for lab in labels:
        mask |= 1 << int(lab)
    return mask


def mask_to_labels(mask: int) -> frozenset:
    return frozenset(lab for lab in SubtypeLabel if mask & (1 << int(lab)))


@dataclass
class Candidate:
    id: str
    cosine: float
    vector: np.ndarray            # stored float32 row
    labels: frozenset
    rerank_score: Optional[float] = None


@dataclass(frozen=True)
class RetrievedItem:
    id: str
    cosine: float
    rerank_score: float
    labels: frozenset


@dataclass(frozen=True)
class RetrievedSet:
    items: tuple
    k_requested: int

    @property
    def k_actual(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> tuple:
        return tuple(item.id for item in self.items)


@dataclass
class RerankerParams:
    """Bilinear scorer s(q, c) = q^T M c; identity M degrades to cosine."""

    matrix: np.ndarray
    trainable: bool = False

    @classmethod
    def identity(cls, d: int, trainable: bool = False) -> "RerankerParams":
        return cls(matrix=np.eye(d, dtype=np.float64), trainable=trainable)


class VectorIndex:
    """Append-only exact-search index over unit vectors."""

    def __init__(self, d: int):
        self.d = int(d)
        self._ids: list[str] = []
        self._labels: list[frozenset] = []
        self._digests: list[bytes] = []
        self._rows: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None
        self._matrix64: Optional[np.ndarray] = None
        self._positions: dict[str, int] = {}
        self.insertions = 0

    @property
    def size(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> tuple:
        return tuple(self._ids)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._positions

    def matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self._rows):
            self._matrix = (
                np.vstack(self._rows)
                if self._rows
                else np.empty((0, self.d), dtype=np.float32)
            )
            self._matrix64 = self._matrix.astype(np.float64)
        return self._matrix

    def vector(self, record_id: str) -> np.ndarray:
        return self._rows[self._positions[record_id]]

    def labels(self, record_id: str) -> frozenset:
        return self._labels[self._positions[record_id]]

    def digest(self, record_id: str) -> bytes:
        return self._digests[self._positions[record_id]]

    def add(
        self,
        record_id: str,
        vector: np.ndarray,
        labels: frozenset = frozenset(),
        digest: bytes = b"\x00" * 32,
    ) -> None:
        if record_id in self._positions:
            raise DuplicateId(record_id)
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.d:
            raise DimensionMismatch(self.d, vec.shape[0])
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"vector for {record_id!r} is not unit norm ({norm})")
        if len(digest) != 32:
            raise ValueError("narrative digest must be 32 bytes")
        self._positions[record_id] = len(self._ids)
        self._ids.append(record_id)
        self._labels.append(frozenset(labels))
        self._digests.append(bytes(digest))
        self._rows.append(vec)
        self._matrix = None
        self.insertions += 1

    def search(self, query: np.ndarray, n1: int) -> list[Candidate]:
        """Exact top-min(n1, size) by cosine, descending, ties broken by
        ascending id. Exhaustive scan."""
        if n1 < 1:
            raise ValueError(f"n1 must be >= 1, got {n1}")
        if self.size == 0:
            raise EmptyIndex("search on empty index")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.d:
            raise DimensionMismatch(self.d, q.shape[0])
        self.matrix()
        # einsum reduces each row independently, so byte-identical vectors
        # always score byte-identically (BLAS gemv does not guarantee that)
        # and duplicate ties resolve purely by the id tie-break.
        scores = np.einsum("ij,j->i", self._matrix64, q)
        order = sorted(range(self.size), key=lambda i: (-scores[i], self._ids[i]))
        top = order[: min(n1, self.size)]
        return [
            Candidate(
                id=self._ids[i],
                cosine=float(scores[i]),
                vector=self._rows[i],
                labels=self._labels[i],
            )
            for i in top
        ]

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        try:
            with open(path, "wb") as fh:
                fh.write(INDEX_MAGIC)
                fh.write(struct.pack("<IIQ", INDEX_FORMAT_VERSION, self.d, self.size))
                for i, record_id in enumerate(self._ids):
                    raw = record_id.encode("utf-8")
                    fh.write(struct.pack("<H", len(raw)))
                    fh.write(raw)
                    fh.write(struct.pack("<B", labels_to_mask(self._labels[i])))
                    fh.write(self._digests[i])
                fh.write(self.matrix().astype("<f4").tobytes(order="C"))
        except OSError as exc:
            raise IoFailure(f"cannot write index to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "VectorIndex":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read index from {path}: {exc}") from exc
        try:
            if blob[:4] != INDEX_MAGIC:
                raise CorruptIndex("bad magic bytes")
            version, d, count = struct.unpack_from("<IIQ", blob, 4)
            if version != INDEX_FORMAT_VERSION:
                raise CorruptIndex(f"unsupported index format_version {version}")
            index = cls(d)
            offset = 4 + 16
            metas = []
            for _ in range(count):
                (idlen,) = struct.unpack_from("<H", blob, offset)
                offset += 2
                record_id = blob[offset:offset + idlen].decode("utf-8")
                if len(blob[offset:offset + idlen]) != idlen:
                    raise CorruptIndex("truncated id table")
                offset += idlen
                (mask,) = struct.unpack_from("<B", blob, offset)
                offset += 1
                digest = blob[offset:offset + 32]
                if len(digest) != 32:
                    raise CorruptIndex("truncated digest")
                offset += 32
                metas.append((record_id, mask, digest))
            expected = count * d * 4
            body = blob[offset:]
            if len(body) != expected:
                raise CorruptIndex(
                    f"vector payload has {len(body)} bytes, expected {expected}"
                )
            vectors = np.frombuffer(body, dtype="<f4").reshape(count, d)
            for (record_id, mask, digest), vec in zip(metas, vectors):
                index.add(record_id, vec, mask_to_labels(mask), digest)
            return index
        except (
            struct.error, UnicodeDecodeError, ValueError,
            DuplicateId, DimensionMismatch,
        ) as exc:
            raise CorruptIndex(f"malformed index file: {exc}") from exc


def build_index(
    records: Sequence[CaseRecord],
    encoder_params: EncoderParams,
    stats: PreprocessStats,
) -> VectorIndex:
    """Embed and index a corpus in record order (deterministic files)."""
    from .cases import narrative_digest

    index = VectorIndex(encoder_params.d)
    for record in records:
        index.add(
            record.case.id,
            embed_cls(record, encoder_params, stats),
            record.labels,
            narrative_digest(record.narrative),
        )
    return index


def rerank(
    query: np.ndarray,
    candidates: Sequence[Candidate],
    params: RerankerParams,
    k: int,
) -> RetrievedSet:
    """Score s(q, c) = q^T M c, keep the top-k, ties by ascending id."""
    if not candidates:
        raise ValueError("rerank requires a non-empty candidate list")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    left = q @ params.matrix
    scores = [float(left @ c.vector.astype(np.float64)) for c in candidates]
    order = sorted(
        range(len(candidates)), key=lambda i: (-scores[i], candidates[i].id)
    )
    items = tuple(
        RetrievedItem(
            id=candidates[i].id,
            cosine=candidates[i].cosine,
            rerank_score=scores[i],
            labels=candidates[i].labels,
        )
        for i in order[: min(k, len(candidates))]
    )
    return RetrievedSet(items=items, k_requested=k)


def retrieve(
    record: CaseRecord,
    index: VectorIndex,
    encoder_params: EncoderParams,
    stats: PreprocessStats,
    reranker_params: RerankerParams,
    k: int = 5,
    n1: Optional[int] = None,
) -> RetrievedSet:
    """Two-stage retrieval: embed, cosine top-n1, self-exclude, rerank to
    the top-k auxiliary set."""
    query = embed_cls(record, encoder_params, stats)
    return retrieve_by_vector(query, record.case.id, index, reranker_params, k, n1)


def retrieve_by_vector(
    query: np.ndarray,
    exclude_id: Optional[str],
    index: VectorIndex,
    reranker_params: RerankerParams,
    k: int = 5,
    n1: Optional[int] = None,
) -> RetrievedSet:
    if index.size == 0:
        raise EmptyIndex("retrieve on empty index")
    if n1 is None:
        n1 = min(1000, index.size)
    candidates = index.search(query, n1)
    if exclude_id is not None:
        candidates = [c for c in candidates if c.id != exclude_id]
    if not candidates:
        raise EmptyIndex("index empty after self-exclusion")
    return rerank(query, candidates, reranker_params, k)
