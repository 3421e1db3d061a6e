import math

import numpy as np
import pytest

from brains.cases import SubtypeLabel
from brains.errors import (
    CorruptIndex,
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
)
from brains.retrieval import (
    Candidate,
    RerankerParams,
    VectorIndex,
    labels_to_mask,
    mask_to_labels,
    rerank,
    retrieve,
    retrieve_by_vector,
)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _fill(index, vectors, prefix="v"):
    for i, v in enumerate(vectors):
        index.add(f"{prefix}{i:04d}", _unit(v))


def brute_force_search(ids, vectors, query, n1):
    """Independent oracle: per-row compensated dot product, full sort."""
    scores = [
        math.fsum(float(a) * float(b) for a, b in zip(vec.astype(np.float64), query))
        for vec in vectors
    ]
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:n1]]


class TestIndexBasics:
    def test_add_and_size(self):
        index = VectorIndex(4)
        index.add("a", _unit([1, 0, 0, 0]))
        assert index.size == 1

    def test_duplicate_id(self):
        index = VectorIndex(4)
        index.add("a", _unit([1, 0, 0, 0]))
        with pytest.raises(DuplicateId):
            index.add("a", _unit([0, 1, 0, 0]))

    def test_dimension_mismatch(self):
        index = VectorIndex(64)
        with pytest.raises(DimensionMismatch):
            index.add("a", _unit(np.ones(32)))

    def test_non_unit_rejected(self):
        index = VectorIndex(4)
        with pytest.raises(ValueError):
            index.add("a", np.array([1.0, 1.0, 0.0, 0.0]))

    def test_search_empty(self):
        with pytest.raises(EmptyIndex):
            VectorIndex(4).search(np.zeros(4), 1)

    def test_label_mask_round_trip(self):
        labels = frozenset({SubtypeLabel.EarlyOnset, SubtypeLabel.Atypical})
        assert mask_to_labels(labels_to_mask(labels)) == labels


class TestSearch:
    def test_exact_match_first(self, rng):
        # exactly float32-representable unit vectors (four +-0.5 entries),
        # so storing them loses nothing and self-similarity is exactly 1
        index = VectorIndex(8)
        for i in range(20):
            v = np.zeros(8)
            slots = rng.choice(8, size=4, replace=False)
            v[slots] = rng.choice([-0.5, 0.5], size=4)
            index.add(f"v{i:04d}", v)
        query = index.vector("v0007").astype(np.float64)
        top = index.search(query, 3)
        assert top[0].id == "v0007"
        assert top[0].cosine == pytest.approx(1.0, abs=1e-9)

    def test_generic_self_query_ranks_first(self, rng):
        index = VectorIndex(8)
        vectors = [rng.normal(size=8) for _ in range(20)]
        _fill(index, vectors)
        top = index.search(_unit(vectors[7]), 3)
        assert top[0].id == "v0007"
        assert top[0].cosine == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_basis(self):
        index = VectorIndex(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            index.add(f"e{i}", e)
        result = index.search(np.array([1.0, 0.0, 0.0]), 3)
        assert [c.id for c in result] == ["e0", "e1", "e2"]
        assert result[0].cosine == pytest.approx(1.0, abs=1e-9)
        assert result[1].cosine == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force_oracle(self, rng):
        index = VectorIndex(64)
        vectors = [rng.normal(size=64) for _ in range(256)]
        _fill(index, vectors)
        query = _unit(rng.normal(size=64))
        got = [c.id for c in index.search(query, 16)]
        want = brute_force_search(
            list(index.ids), [index.vector(i) for i in index.ids], query, 16
        )
        assert got == want

    def test_tie_break_by_ascending_id(self):
        index = VectorIndex(4)
        v = _unit([1, 2, 3, 4])
        index.add("zz", v)
        index.add("aa", v)
        index.add("mm", v)
        result = index.search(_unit([4, 3, 2, 1]), 3)
        assert [c.id for c in result] == ["aa", "mm", "zz"]

    def test_n1_clamps(self, rng):
        index = VectorIndex(8)
        _fill(index, [rng.normal(size=8) for _ in range(5)])
        assert len(index.search(_unit(rng.normal(size=8)), 50)) == 5
        with pytest.raises(ValueError):
            index.search(_unit(rng.normal(size=8)), 0)


class TestRerank:
    def _candidates(self, rng, n=8, d=16):
        out = []
        for i in range(n):
            vec = _unit(rng.normal(size=d)).astype(np.float32)
            out.append(Candidate(id=f"c{i}", cosine=0.0, vector=vec, labels=frozenset()))
        return out

    def test_identity_matches_cosine_order(self, rng):
        d = 16
        index = VectorIndex(d)
        _fill(index, [rng.normal(size=d) for _ in range(32)])
        query = _unit(rng.normal(size=d))
        cands = index.search(query, 32)
        reranked = rerank(query, cands, RerankerParams.identity(d), k=32)
        assert [c.id for c in cands] == [item.id for item in reranked.items]

    def test_positive_scaling_invariant(self, rng):
        d = 16
        cands = self._candidates(rng, d=d)
        query = _unit(rng.normal(size=d))
        a = rerank(query, cands, RerankerParams(matrix=np.eye(d)), k=8)
        b = rerank(query, cands, RerankerParams(matrix=2.0 * np.eye(d)), k=8)
        assert a.ids == b.ids

    def test_top3_matches_score_all_oracle(self, rng):
        d = 12
        cands = self._candidates(rng, n=8, d=d)
        query = _unit(rng.normal(size=d))
        m = rng.normal(size=(d, d))
        result = rerank(query, cands, RerankerParams(matrix=m), k=3)
        scores = {
            c.id: float(query @ m @ c.vector.astype(np.float64)) for c in cands
        }
        want = sorted(scores, key=lambda cid: (-scores[cid], cid))[:3]
        assert list(result.ids) == want
        assert result.k_actual == 3

    def test_k_clamps(self, rng):
        cands = self._candidates(rng, n=3)
        result = rerank(_unit(rng.normal(size=16)), cands,
                        RerankerParams.identity(16), k=10)
        assert result.k_actual == 3
        assert result.k_requested == 10


class TestRetrieve:
    def test_self_exclusion_and_k(self, mini_pipeline):
        mp = mini_pipeline
        record = mp["train"][0]
        result = retrieve(
            record, mp["index"], mp["checkpoint"].encoder, mp["stats"],
            mp["checkpoint"].reranker, k=5,
        )
        assert record.case.id not in result.ids
        assert result.k_actual == 5
        assert len(set(result.ids)) == 5
        scores = [item.rerank_score for item in result.items]
        assert scores == sorted(scores, reverse=True)

    def test_small_index_clamp(self, rng):
        index = VectorIndex(8)
        _fill(index, [rng.normal(size=8) for _ in range(3)])
        result = retrieve_by_vector(
            _unit(rng.normal(size=8)), None, index, RerankerParams.identity(8), k=5
        )
        assert result.k_actual == 3

    def test_empty_after_self_exclusion(self, rng):
        index = VectorIndex(8)
        v = rng.normal(size=8)
        index.add("only", _unit(v))
        with pytest.raises(EmptyIndex):
            retrieve_by_vector(_unit(v), "only", index, RerankerParams.identity(8), k=5)


class TestPersistence:
    def test_round_trip_search_identical(self, rng, tmp_path):
        index = VectorIndex(16)
        for i in range(100):
            index.add(
                f"r{i:03d}", _unit(rng.normal(size=16)),
                frozenset({SubtypeLabel(i % 5)}), bytes(range(32)),
            )
        path = tmp_path / "t.idx"
        index.save(path)
        loaded = VectorIndex.load(path)
        assert loaded.ids == index.ids
        for _ in range(100):
            q = _unit(rng.normal(size=16))
            a = [(c.id, c.cosine) for c in index.search(q, 10)]
            b = [(c.id, c.cosine) for c in loaded.search(q, 10)]
            assert a == b
        assert loaded.labels("r001") == index.labels("r001")

    def test_byte_identical_files(self, rng, tmp_path):
        vectors = [rng.normal(size=8) for _ in range(20)]
        blobs = []
        for run in range(2):
            index = VectorIndex(8)
            _fill(index, vectors)
            path = tmp_path / f"run{run}.idx"
            index.save(path)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "empty.idx"
        VectorIndex(32).save(path)
        loaded = VectorIndex.load(path)
        assert loaded.size == 0 and loaded.d == 32

    def test_truncated_file(self, rng, tmp_path):
        index = VectorIndex(8)
        _fill(index, [rng.normal(size=8) for _ in range(5)])
        path = tmp_path / "t.idx"
        index.save(path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(CorruptIndex):
            VectorIndex.load(path)

    def test_bad_magic_and_version(self, rng, tmp_path):
        index = VectorIndex(8)
        _fill(index, [rng.normal(size=8) for _ in range(2)])
        path = tmp_path / "t.idx"
        index.save(path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptIndex):
            VectorIndex.load(path)
        blob[0] ^= 0xFF          # restore magic
        blob[4] = 99             # bogus version
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptIndex):
            VectorIndex.load(path)
