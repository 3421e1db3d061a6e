"""Acceptance suite: one test per release criterion, each printing a
PASS line with the measured numbers when its assertions hold."""

import json

import numpy as np
import pytest

from conftest import rel_err


def _report(name, detail):
    print(f"[ACCEPTANCE] {name}: PASS ({detail})")


# --------------------------------------------------------------------------
# Attention normalization
# --------------------------------------------------------------------------

def test_attention_normalization_10k_random_calls():
    from brains.fusion import ConcatMatrix, FusionParams, MaskSpec, apply_mask, fuse

    rng = np.random.default_rng(101)
    calls = 0
    worst = 0.0
    params_cache = {}
    while calls < 10_000:
        d = int(rng.choice([2, 4, 8, 16]))
        d_k = int(rng.choice([2, 4, 8]))
        key = (d, d_k, calls % 7)
        if key not in params_cache:
            params_cache[key] = FusionParams.init(
                d=d, d_k=d_k, shared_kv=bool(calls % 2), seed=calls % 7
            )
        params = params_cache[key]
        n_cases = int(rng.integers(1, 5))
        sizes = [int(rng.integers(1, 5)) for _ in range(n_cases)]
        total = sum(sizes)
        bounds, start = [], 0
        for s in sizes:
            bounds.append((start, start + s))
            start += s
        concat = ConcatMatrix(
            rows=rng.normal(scale=3.0, size=(total, d)),
            boundaries=tuple(bounds),
            mask=np.zeros(total, dtype=bool),
        )
        m = int(rng.integers(0, n_cases))  # keep at least one active block
        if m:
            concat = apply_mask(concat, MaskSpec(m=min(m, 4), seed=calls))
        out = fuse(rng.normal(size=d), concat, params)
        calls += 1
        if out.no_evidence:
            continue
        active = ~concat.mask
        s = float(out.weights[active].sum())
        worst = max(worst, abs(s - 1.0))
        assert abs(s - 1.0) <= 1e-9
        assert np.all((out.weights >= 0.0) & (out.weights <= 1.0))
        assert np.all(out.weights[concat.mask] == 0.0)
    _report("attention-normalization",
            f"{calls} fuse calls, worst |sum-1| = {worst:.2e}")


# --------------------------------------------------------------------------
# Gradient correctness
# --------------------------------------------------------------------------

def test_gradient_correctness_fusion_and_end_to_end():
    from brains.encoder import init_encoder
    from brains.fusion import (
        ConcatMatrix, FusionParams, MaskSpec, apply_mask, fuse, fuse_backward,
    )
    from brains.training import (
        ForwardExample, TrainConfig, TrainableModel,
        example_loss_and_grads, trainable_parameters,
    )

    rng = np.random.default_rng(202)
    h = 1e-5

    worst_fusion = 0.0
    for trial in range(100):
        d = int(rng.choice([2, 4, 8]))
        d_k = int(rng.choice([2, 4, 8]))
        rows_n = int(rng.integers(1, 13))
        shared = bool(trial % 2)
        params = FusionParams.init(d=d, d_k=d_k, shared_kv=shared, seed=trial)
        concat = ConcatMatrix(
            rows=rng.normal(size=(rows_n, d)),
            boundaries=((0, rows_n),),
            mask=np.zeros(rows_n, dtype=bool),
        )
        t = rng.normal(size=d)
        g = rng.normal(size=d_k)
        grads = fuse_backward(t, concat, params, g)

        def objective():
            return float(g @ fuse(t, concat, params).vector)

        targets = [(params.w_q, grads.w_q), (params.w_k, grads.w_k),
                   (t, grads.t_cls), (concat.rows, grads.rows)]
        if not shared:
            targets.append((params.w_v, grads.w_v))
        for arr, grad in targets:
            for _ in range(min(arr.size, 5)):
                ix = tuple(int(rng.integers(s)) for s in arr.shape)
                keep = arr[ix]
                arr[ix] = keep + h
                up = objective()
                arr[ix] = keep - h
                down = objective()
                arr[ix] = keep
                worst_fusion = max(worst_fusion,
                                   rel_err(grad[ix], (up - down) / (2 * h)))
    assert worst_fusion <= 1e-4

    worst_e2e = 0.0
    for trial in range(25):
        d, d_k, n_features = 6, 5, 7
        model = TrainableModel.init(d=d, d_k=d_k, seed=trial,
                                    shared_kv=bool(trial % 2),
                                    reranker_trainable=True)
        model.encoder = init_encoder("structured", d=d, seed=trial,
                                     feature_len=n_features)
        cfg = TrainConfig(learning_rate=1e-3, seed=trial,
                          unfreeze_encoder=bool(trial % 3 == 0),
                          unfreeze_reranker=bool(trial % 2))
        k = int(rng.integers(0, 4))
        n_cand = int(rng.integers(2, 6))
        cand = rng.normal(size=(n_cand, d))
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        relevance = rng.random(n_cand)
        relevance /= relevance.sum()
        ex = ForwardExample(
            x=rng.normal(size=n_features),
            y=(rng.random(5) < 0.4).astype(float),
            aux_xs=tuple(rng.normal(size=n_features) for _ in range(k)),
            mask_m=int(rng.integers(0, max(k, 1))) if k else 0,
            mask_seed=trial,
            cand_vectors=cand, cand_relevance=relevance,
        )
        _, grads = example_loss_and_grads(model, cfg, ex)
        for name, arr in trainable_parameters(model, cfg).items():
            for _ in range(min(arr.size, 6)):
                ix = tuple(int(rng.integers(s)) for s in arr.shape)
                keep = arr[ix]
                arr[ix] = keep + h
                up, _ = example_loss_and_grads(model, cfg, ex, want_grads=False)
                arr[ix] = keep - h
                down, _ = example_loss_and_grads(model, cfg, ex, want_grads=False)
                arr[ix] = keep
                worst_e2e = max(worst_e2e,
                                rel_err(grads[name][ix], (up - down) / (2 * h)))
    assert worst_e2e <= 1e-4
    _report("gradient-correctness",
            f"fusion worst {worst_fusion:.2e} (100 cfgs), "
            f"end-to-end worst {worst_e2e:.2e} (25 cfgs)")


# --------------------------------------------------------------------------
# Retrieval oracle equivalence
# --------------------------------------------------------------------------

def test_retrieval_oracle_equivalence_1000_corpora():
    from brains.retrieval import VectorIndex

    rng = np.random.default_rng(303)
    trials = 1000
    for trial in range(trials):
        d = 8 if trial % 2 == 0 else 64
        size = int(rng.integers(1, 513))
        vectors = rng.normal(size=(size, d))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        # engineer exact ties by duplicating rows
        n_dup = int(rng.integers(0, max(1, size // 3)))
        for _ in range(n_dup):
            src, dst = int(rng.integers(size)), int(rng.integers(size))
            vectors[dst] = vectors[src]
        index = VectorIndex(d)
        ids = [f"id{trial}-{i:04d}" for i in range(size)]
        # shuffle insertion order so ids and positions decorrelate
        for i in rng.permutation(size):
            index.add(ids[int(i)], vectors[int(i)])
        query = rng.normal(size=d)
        query /= np.linalg.norm(query)
        n1 = int(rng.integers(1, size + 1))
        got = [c.id for c in index.search(query, n1)]

        stored = {rid: index.vector(rid) for rid in index.ids}
        scores = {
            rid: float(np.dot(vec.astype(np.float64), query))
            for rid, vec in stored.items()
        }
        want = sorted(scores, key=lambda rid: (-scores[rid], rid))[:n1]
        assert got == want, f"trial {trial} d={d} size={size} n1={n1}"
    _report("retrieval-oracle-equivalence",
            f"{trials} corpora (size <= 512, d in {{8, 64}}), id-for-id equal")


# --------------------------------------------------------------------------
# Masking invariance
# --------------------------------------------------------------------------

def test_masking_invariance_500_trials():
    from brains.fusion import (
        ConcatMatrix, FusionParams, MaskSpec, apply_mask, fuse, fuse_backward,
    )

    rng = np.random.default_rng(404)
    for trial in range(500):
        d = int(rng.choice([3, 6, 10]))
        d_k = int(rng.choice([2, 5]))
        n_cases = int(rng.integers(2, 5))
        sizes = [int(rng.integers(1, 4)) for _ in range(n_cases)]
        bounds, start = [], 0
        for s in sizes:
            bounds.append((start, start + s))
            start += s
        rows = rng.normal(size=(start, d))
        concat = ConcatMatrix(rows=rows, boundaries=tuple(bounds),
                              mask=np.zeros(start, dtype=bool))
        m = int(rng.integers(1, n_cases))  # at least one masked, one active
        masked = apply_mask(concat, MaskSpec(m=min(m, 4), seed=trial))
        params = FusionParams.init(d=d, d_k=d_k, seed=trial)
        t = rng.normal(size=d)
        g = rng.normal(size=d_k)

        base = fuse(t, masked, params)
        base_grads = fuse_backward(t, masked, params, g)
        assert np.all(base_grads.rows[masked.mask] == 0.0)

        perturbed_rows = rows.copy()
        perturbed_rows[masked.mask] += rng.normal(scale=50.0,
                                                  size=(int(masked.mask.sum()), d))
        perturbed = ConcatMatrix(rows=perturbed_rows,
                                 boundaries=masked.boundaries, mask=masked.mask)
        out = fuse(t, perturbed, params)
        grads = fuse_backward(t, perturbed, params, g)
        assert np.array_equal(base.vector, out.vector)       # bit-identical
        assert np.array_equal(base.weights, out.weights)
        assert np.all(grads.rows[masked.mask] == 0.0)
        assert np.array_equal(base_grads.w_q, grads.w_q)
        assert np.array_equal(base_grads.w_k, grads.w_k)
    _report("masking-invariance",
            "500 trials, masked-content perturbations bitwise invisible")


# --------------------------------------------------------------------------
# Metrics fixture
# --------------------------------------------------------------------------

def test_metrics_hand_fixture():
    from brains.cases import SubtypeLabel
    from brains.evaluation import compute_metrics

    E, L, F, S, A = SubtypeLabel
    pairs = [
        (frozenset({E}), frozenset({E})),
        (frozenset({L}), frozenset({E, L})),
        (frozenset({F, S}), frozenset({F})),
        (frozenset(), frozenset({A})),
    ]
    metrics = compute_metrics(pairs)
    assert metrics.precision == pytest.approx(0.75, abs=1e-12)
    assert metrics.recall == pytest.approx(0.6, abs=1e-12)
    assert abs(metrics.f1 - 2 * 0.75 * 0.6 / 1.35) <= 1e-9
    assert metrics.correct == pytest.approx(0.25, abs=1e-12)
    _report("metrics-fixture",
            f"P={metrics.precision} R={metrics.recall} "
            f"F1={metrics.f1:.10f} correct={metrics.correct}")


# --------------------------------------------------------------------------
# Directional ablation
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ladder_report():
    import io

    from brains.config import DEFAULTS, train_config
    from brains.evaluation import ExperimentConfig, run_experiment
    from brains.synthetic import GeneratorConfig

    cfg = ExperimentConfig(
        corpus_seed=42,
        corpus_size=2000,
        generator=GeneratorConfig(n=2000),      # generator defaults
        train=train_config(DEFAULTS, section="experiment"),
    )
    return run_experiment(cfg, log=io.StringIO())


def test_directional_ablation_brains_beats_no_rag(ladder_report):
    by_name = {v["name"]: v for v in ladder_report["variants"]}
    assert all("failure" not in v for v in by_name.values()), by_name
    no_rag = by_name["no-rag"]["overall"]["correct"]
    brains = by_name["brains-k5"]["overall"]["correct"]
    rag_1 = by_name["rag-1"]["overall"]["correct"]
    rag_2 = by_name["rag-2"]["overall"]["correct"]
    assert brains - no_rag >= 0.05        # margin is a floor
    assert rag_1 <= brains
    assert rag_2 <= brains
    _report("directional-ablation",
            f"no-rag {no_rag:.3f}, rag-1 {rag_1:.3f}, rag-2 {rag_2:.3f}, "
            f"brains-k5 {brains:.3f}, gap {brains - no_rag:.3f} >= 0.05")


# --------------------------------------------------------------------------
# Determinism of the full pipeline
# --------------------------------------------------------------------------

def test_pipeline_determinism_byte_identical(tmp_path):
    from brains.checkpoint import checkpoint_load
    from brains.cli import main

    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "experiment": {
            "corpus_size": 240, "corpus_seed": 11, "ratios": [0.8, 0.1, 0.1],
            "train": {"epochs": 2, "learning_rate": 0.01, "seed": 11},
        },
    }))

    artifacts = []
    for run in ("one", "two"):
        root = tmp_path / run
        root.mkdir()
        corpus = root / "corpus.jsonl"
        assert main(["generate", "--n", "240", "--seed", "11",
                     "--out", str(corpus)]) == 0
        assert main(["preprocess", "--corpus", str(corpus),
                     "--out", str(root / "stats.json"),
                     "--split", "0.8,0.1,0.1", "--seed", "11",
                     "--out-prefix", str(root / "corpus")]) == 0
        assert main(["index", "--corpus", str(root / "corpus.train.jsonl"),
                     "--stats", str(root / "stats.json"), "--seed", "11",
                     "--out", str(root / "train.idx")]) == 0
        assert main(["train", "--corpus", str(root / "corpus.train.jsonl"),
                     "--val", str(root / "corpus.val.jsonl"),
                     "--stats", str(root / "stats.json"),
                     "--index", str(root / "train.idx"), "--seed", "11",
                     "--epochs", "2", "--lr", "0.01",
                     "--out", str(root / "model.ckpt")]) == 0
        assert main(["eval", "--variants", "no-rag,brains-k5",
                     "--config", str(config),
                     "--out", str(root / "report.json")]) == 0
        artifacts.append({
            "corpus": corpus.read_bytes(),
            "index": (root / "train.idx").read_bytes(),
            "ckpt_digest": checkpoint_load(root / "model.ckpt").digest(),
            "ckpt_bytes": (root / "model.ckpt").read_bytes(),
            "report": (root / "report.json").read_bytes(),
        })

    a, b = artifacts
    assert a["corpus"] == b["corpus"]
    assert a["index"] == b["index"]
    assert a["ckpt_digest"] == b["ckpt_digest"]
    assert a["ckpt_bytes"] == b["ckpt_bytes"]
    assert a["report"] == b["report"]
    _report("pipeline-determinism",
            f"corpus/index/checkpoint/report byte-identical, "
            f"checkpoint digest {a['ckpt_digest'][:12]}")


# --------------------------------------------------------------------------
# Round-trips
# --------------------------------------------------------------------------

def test_round_trips_bit_exact_and_corruption_rejected(mini_pipeline, tmp_path):
    from brains.checkpoint import checkpoint_load, checkpoint_save
    from brains.diagnose import predict_local
    from brains.errors import CorruptCheckpoint, CorruptIndex
    from brains.retrieval import VectorIndex

    mp = mini_pipeline
    rng = np.random.default_rng(7)

    index_path = tmp_path / "round.idx"
    mp["index"].save(index_path)
    loaded = VectorIndex.load(index_path)
    for _ in range(100):
        q = rng.normal(size=mp["index"].d)
        q /= np.linalg.norm(q)
        a = [(c.id, c.cosine) for c in mp["index"].search(q, 10)]
        b = [(c.id, c.cosine) for c in loaded.search(q, 10)]
        assert a == b

    ckpt_path = tmp_path / "round.ckpt"
    checkpoint_save(mp["checkpoint"], ckpt_path)
    reloaded = checkpoint_load(ckpt_path)
    for record in mp["test"][:25]:
        assert (
            predict_local(record, mp["checkpoint"], mp["index"], mp["store"]).scores
            == predict_local(record, reloaded, mp["index"], mp["store"]).scores
        )

    blob = bytearray(index_path.read_bytes())
    blob[10] ^= 0x40
    (tmp_path / "bad.idx").write_bytes(bytes(blob))
    with pytest.raises(CorruptIndex):
        VectorIndex.load(tmp_path / "bad.idx")

    blob = bytearray(ckpt_path.read_bytes())
    blob[-40] ^= 0x01
    (tmp_path / "bad.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        checkpoint_load(tmp_path / "bad.ckpt")

    _report("round-trips",
            "index search and predictions bit-exact; corruption rejected "
            "with corrupt_index / corrupt_checkpoint")


# --------------------------------------------------------------------------
# Remote backend contract
# --------------------------------------------------------------------------

def test_remote_backend_contract(mini_pipeline):
    import httpx

    from brains.cases import SubtypeLabel
    from brains.errors import BackendTimeout
    from brains.remote import RemoteBackendConfig, predict_remote
    from brains.retrieval import RetrievedItem, RetrievedSet

    mp = mini_pipeline
    retrieved = RetrievedSet(
        items=tuple(
            RetrievedItem(id=r.case.id, cosine=0.9, rerank_score=0.9,
                          labels=frozenset())
            for r in mp["train"][:2]
        ),
        k_requested=2,
    )
    record = mp["test"][0]
    cfg = RemoteBackendConfig(base_url="http://backend", concat_cases=2)

    def ok(request):
        return httpx.Response(200, json={"choices": [{"message": {
            "content": "Late-Onset Alzheimer's Disease; Sporadic"}}]})
    report = predict_remote(record, retrieved, cfg, mp["store"],
                            client=httpx.Client(transport=httpx.MockTransport(ok)))
    assert report.decided == frozenset(
        {SubtypeLabel.LateOnset, SubtypeLabel.Sporadic}
    )
    assert not report.parse_failure

    state = {"n": 0}
    def flaky(request):
        state["n"] += 1
        return (httpx.Response(500) if state["n"] <= 2
                else ok(request))
    report = predict_remote(
        record, retrieved, cfg, mp["store"],
        client=httpx.Client(transport=httpx.MockTransport(flaky)),
        sleeper=lambda s: None,
    )
    assert report.attempts == 3
    assert not report.parse_failure

    def hang(request):
        raise httpx.ReadTimeout("hang")
    with pytest.raises(BackendTimeout):
        predict_remote(record, retrieved, cfg, mp["store"],
                       client=httpx.Client(transport=httpx.MockTransport(hang)))

    def weird(request):
        return httpx.Response(200, json={"choices": [{"message": {
            "content": "inconclusive presentation"}}]})
    report = predict_remote(record, retrieved, cfg, mp["store"],
                            client=httpx.Client(transport=httpx.MockTransport(weird)))
    assert report.parse_failure
    assert report.decided == frozenset()

    # pipeline survival: the service maps a dead backend to 502 and stays up
    from fastapi.testclient import TestClient

    from brains.config import load_config
    from brains.service import ServiceState, create_app

    config = load_config()
    config["remote"]["base_url"] = "http://127.0.0.1:9"   # nothing listens
    config["remote"]["backoff_ms"] = 1
    state = ServiceState()
    state.install(mp["checkpoint"], mp["index"], mp["store"])
    client = TestClient(create_app(state, config))
    body = {"mmse": 25, "cdr": 1, "age": 77, "backend": "remote"}
    response = client.post("/v1/screen", json=body)
    assert response.status_code == 502
    assert response.json()["error"]["code"] in ("backend_http_error",
                                                "backend_timeout")
    assert client.get("/healthz").json()["status"] == "ready"
    assert client.post("/v1/screen",
                       json={"mmse": 25, "cdr": 1, "age": 77}).status_code == 200

    _report("remote-backend-contract",
            "success parse, retry-then-success (3 attempts), timeout, "
            "unparseable flag, and 502 survival all verified")


# --------------------------------------------------------------------------
# Service contract
# --------------------------------------------------------------------------

def test_service_contract(mini_pipeline):
    from fastapi.testclient import TestClient

    from brains.cases import record_to_json
    from brains.service import ServiceState, create_app

    mp = mini_pipeline
    state = ServiceState()
    client = TestClient(create_app(state))

    assert client.get("/healthz").json()["status"] == "starting"
    body = {"mmse": 26, "cdr": 0.5, "age": 74}
    assert client.post("/v1/screen", json=body).status_code == 503

    state.install(mp["checkpoint"], mp["index"], mp["store"])
    health = client.get("/healthz").json()
    assert health["status"] == "ready"
    assert health["index_size"] == mp["index"].size

    ok = client.post("/v1/screen", json=body)
    assert ok.status_code == 200
    assert len(ok.json()["scores"]) == 5

    bad = client.post("/v1/screen", json={"mmse": 31, "cdr": 0, "age": 70})
    assert bad.status_code == 400
    assert bad.json()["error"]["fields"][0]["field"] == "mmse"

    held = state.snapshot()
    size_before = held.index.size
    payload = "\n".join(record_to_json(r) for r in mp["test"][:5])
    imported = client.post("/v1/corpus/import", content=payload)
    assert imported.status_code == 202
    assert imported.json()["accepted"] == 5
    assert held.index.size == size_before                     # old snapshot intact
    assert client.get("/healthz").json()["index_size"] == size_before + 5

    _report("service-contract",
            "screen 200/400, pre-readiness 503, healthz transitions, "
            "stage-then-swap import visibility all verified")
