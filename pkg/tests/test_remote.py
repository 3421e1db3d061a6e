import httpx
import pytest

from brains.cases import SubtypeLabel
from brains.errors import BackendHttpError, BackendTimeout, BadConfig
from brains.remote import (
    RemoteBackendConfig,
    build_messages,
    chat_complete,
    parse_subtypes,
    predict_remote,
)
from brains.retrieval import RetrievedItem, RetrievedSet
from brains.stubllm import create_stub_app, rule_based_subtypes

MESSAGES = [{"role": "user", "content": "target"}]


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def _ok_response(text):
    return httpx.Response(
        200, json={"choices": [{"message": {"role": "assistant", "content": text}}]}
    )


class TestConfig:
    def test_defaults(self):
        cfg = RemoteBackendConfig(base_url="http://b")
        assert cfg.timeout_ms == 30000
        assert cfg.max_retries == 2
        assert cfg.backoff_ms == 250
        assert cfg.temperature == 0.0

    def test_validation(self):
        with pytest.raises(BadConfig):
            RemoteBackendConfig(base_url="http://b", concat_cases=-1)
        with pytest.raises(BadConfig):
            RemoteBackendConfig(base_url="http://b", timeout_ms=0)


class TestParse:
    def test_alias_table(self):
        labels, ok = parse_subtypes("Late-Onset Alzheimer's Disease; Sporadic")
        assert ok
        assert labels == frozenset({SubtypeLabel.LateOnset, SubtypeLabel.Sporadic})

    def test_case_insensitive_and_spacing(self):
        labels, _ = parse_subtypes("likely EARLY ONSET with familial component")
        assert SubtypeLabel.EarlyOnset in labels
        assert SubtypeLabel.Familial in labels

    def test_word_boundaries(self):
        labels, ok = parse_subtypes("The workload was atypicality-free")
        assert labels == frozenset()
        assert not ok

    def test_unparseable(self):
        labels, ok = parse_subtypes("no diagnosis terms here")
        assert labels == frozenset() and not ok


class TestChatComplete:
    def test_retry_then_success_attempt_count(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] <= 2:
                return httpx.Response(500, text="boom")
            return _ok_response("Sporadic")

        sleeps = []
        cfg = RemoteBackendConfig(base_url="http://backend")
        content, attempts = chat_complete(
            cfg, MESSAGES, client=_client(handler), sleeper=sleeps.append
        )
        assert content == "Sporadic"
        assert attempts == 3
        assert sleeps == [0.25, 0.5]  # exponential backoff, 250 ms base

    def test_timeout_raises_backend_timeout(self):
        def handler(request):
            raise httpx.ReadTimeout("hang")

        cfg = RemoteBackendConfig(base_url="http://backend", timeout_ms=100)
        with pytest.raises(BackendTimeout):
            chat_complete(cfg, MESSAGES, client=_client(handler))

    def test_retries_exhausted(self):
        def handler(request):
            return httpx.Response(503, text="down")

        cfg = RemoteBackendConfig(base_url="http://backend")
        with pytest.raises(BackendHttpError) as err:
            chat_complete(cfg, MESSAGES, client=_client(handler),
                          sleeper=lambda s: None)
        assert err.value.status == 503

    def test_4xx_no_retry(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(404, text="nope")

        cfg = RemoteBackendConfig(base_url="http://backend")
        with pytest.raises(BackendHttpError):
            chat_complete(cfg, MESSAGES, client=_client(handler))
        assert calls["n"] == 1

    def test_malformed_envelope_returns_none(self):
        def handler(request):
            return httpx.Response(200, json={"unexpected": 1})

        cfg = RemoteBackendConfig(base_url="http://backend")
        content, attempts = chat_complete(cfg, MESSAGES, client=_client(handler))
        assert content is None and attempts == 1

    def test_request_wire_format(self):
        seen = {}

        def handler(request):
            import json
            seen.update(json.loads(request.content))
            seen["path"] = request.url.path
            return _ok_response("Familial")

        cfg = RemoteBackendConfig(base_url="http://backend", model="m1",
                                  max_tokens=64)
        chat_complete(cfg, MESSAGES, client=_client(handler))
        assert seen["path"] == "/v1/chat/completions"
        assert seen["model"] == "m1"
        assert seen["temperature"] == 0.0
        assert seen["max_tokens"] == 64
        assert seen["messages"] == MESSAGES


class TestPredictRemote:
    def _retrieved(self, mini_pipeline, k=3):
        ids = [r.case.id for r in mini_pipeline["train"][:k]]
        items = tuple(
            RetrievedItem(id=i, cosine=0.9, rerank_score=0.9, labels=frozenset())
            for i in ids
        )
        return RetrievedSet(items=items, k_requested=k)

    def test_success_parse(self, mini_pipeline):
        def handler(request):
            return _ok_response("Late-Onset Alzheimer's Disease; Sporadic")

        cfg = RemoteBackendConfig(base_url="http://backend", concat_cases=2)
        report = predict_remote(
            mini_pipeline["test"][0], self._retrieved(mini_pipeline), cfg,
            mini_pipeline["store"], client=_client(handler),
        )
        assert report.decided == frozenset(
            {SubtypeLabel.LateOnset, SubtypeLabel.Sporadic}
        )
        assert report.backend == "remote-concat"
        assert not report.parse_failure
        assert len(report.evidence) == 2  # clamped to concat_cases

    def test_unparseable_flag_not_fatal(self, mini_pipeline):
        def handler(request):
            return _ok_response("I cannot determine the diagnosis.")

        cfg = RemoteBackendConfig(base_url="http://backend", concat_cases=1)
        report = predict_remote(
            mini_pipeline["test"][0], self._retrieved(mini_pipeline), cfg,
            mini_pipeline["store"], client=_client(handler),
        )
        assert report.parse_failure
        assert report.decided == frozenset()

    def test_prompt_contains_similar_cases(self, mini_pipeline):
        captured = {}

        def handler(request):
            import json
            captured["body"] = json.loads(request.content)
            return _ok_response("Atypical")

        cfg = RemoteBackendConfig(base_url="http://backend", concat_cases=2)
        predict_remote(
            mini_pipeline["test"][0], self._retrieved(mini_pipeline), cfg,
            mini_pipeline["store"], client=_client(handler),
        )
        user = captured["body"]["messages"][1]["content"]
        assert "Target case:" in user
        assert "Similar case 1:" in user
        assert "Similar case 2:" in user
        assert "Similar case 3:" not in user


class TestStubBackend:
    def test_stub_speaks_wire_format(self):
        from fastapi.testclient import TestClient

        client = TestClient(create_stub_app())
        body = {
            "model": "stub",
            "messages": build_messages(
                _fake_record(age=80.0, wmh=6.0), []
            ),
            "temperature": 0,
            "max_tokens": 64,
        }
        response = client.post("/v1/chat/completions", json=body)
        assert response.status_code == 200
        content = response.json()["choices"][0]["message"]["content"]
        labels, ok = parse_subtypes(content)
        assert ok
        assert SubtypeLabel.LateOnset in labels
        assert SubtypeLabel.Sporadic in labels

    def test_rules_deterministic(self):
        prompt = build_messages(_fake_record(age=50.0), [])[1]["content"]
        assert rule_based_subtypes(prompt) == rule_based_subtypes(prompt)
        assert SubtypeLabel.EarlyOnset in rule_based_subtypes(prompt)


def _fake_record(age=70.0, wmh=1.0):
    from brains.cases import make_record, validate_case

    return make_record(
        validate_case({
            "id": "q", "mmse": 25, "cdr": "1", "age": age, "wmh_load": wmh,
        }),
        frozenset(),
    )
