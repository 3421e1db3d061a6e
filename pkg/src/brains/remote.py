"""Remote chat-completion backend for the prompt-concatenation variants.

Retrieved cases cannot be spliced into a text API as embeddings, so this
path textualizes them: the target narrative plus the first
``concat_cases`` retrieved narratives go into one user message, and the
response is parsed for subtype names against a fixed alias table. Every
backend failure maps to a tagged error or a parse-failure flag; nothing
here aborts the pipeline.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import httpx

from .cases import CaseRecord, SubtypeLabel
from .diagnose import BACKEND_REMOTE_CONCAT, DiagnosisReport
from .errors import BackendHttpError, BackendTimeout, BadConfig
from .retrieval import RetrievedSet

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"

DISPLAY_NAMES = {
    SubtypeLabel.EarlyOnset: "Early-Onset Alzheimer's Disease",
    SubtypeLabel.LateOnset: "Late-Onset Alzheimer's Disease",
    SubtypeLabel.Familial: "Familial Alzheimer's Disease",
    SubtypeLabel.Sporadic: "Sporadic Alzheimer's Disease",
    SubtypeLabel.Atypical: "Atypical Alzheimer's Disease",
}

# Lowercase aliases matched with word boundaries against the response.
ALIAS_TABLE = {
    SubtypeLabel.EarlyOnset: ("early-onset", "early onset", "earlyonset", "eoad"),
    SubtypeLabel.LateOnset: ("late-onset", "late onset", "lateonset"),
    SubtypeLabel.Familial: ("familial",),
    SubtypeLabel.Sporadic: ("sporadic",),
    SubtypeLabel.Atypical: ("atypical",),
}

DEFAULT_SYSTEM_TEXT = (
    "You are a clinical decision-support assistant for neurocognitive "
    "screening. Given a target case and similar historical cases, list "
    "every applicable diagnosis subtype."
)


@dataclass
class RemoteBackendConfig:
    base_url: str
    model: str = "screener"
    timeout_ms: int = 30000
    max_retries: int = 2
    backoff_ms: int = 250
    temperature: float = 0.0
    max_tokens: int = 256
    concat_cases: int = 1          # 1 -> rag-1, 2 -> rag-2

    def __post_init__(self):
        if self.concat_cases < 0:
            raise BadConfig(f"concat_cases must be >= 0, got {self.concat_cases}")
        if self.timeout_ms <= 0:
            raise BadConfig(f"timeout_ms must be > 0, got {self.timeout_ms}")


def parse_subtypes(text: str) -> tuple[frozenset, bool]:
    """Match response text against the alias table. Returns the decided
    set and whether anything parsed at all."""
    lowered = text.lower()
    found = set()
    for label, aliases in ALIAS_TABLE.items():
        for alias in aliases:
            if re.search(rf"(?<![a-z0-9]){re.escape(alias)}(?![a-z0-9])", lowered):
                found.add(label)
                break
    return frozenset(found), bool(found)


def build_messages(
    record: CaseRecord,
    retrieved_narratives: list[str],
    system_text: str = DEFAULT_SYSTEM_TEXT,
) -> list[dict]:
    parts = [f"Target case:\n{record.narrative}"]
    for i, narrative in enumerate(retrieved_narratives, start=1):
        parts.append(f"Similar case {i}:\n{narrative}")
    parts.append("Which Alzheimer's disease subtypes apply to the target case?")
    return [
        {"role": "system", "content": system_text},
        {"role": "user", "content": "\n\n".join(parts)},
    ]


def chat_complete(
    cfg: RemoteBackendConfig,
    messages: list[dict],
    client: Optional[httpx.Client] = None,
    sleeper: Callable[[float], None] = time.sleep,
) -> tuple[Optional[str], int]:
    """POST the chat request. Returns (content, attempts); content is None
    when the response envelope is not in the expected shape.

    5xx and connection errors are retried with exponential backoff
    (base ``backoff_ms``); timeouts raise :class:`BackendTimeout`
    immediately; 4xx raises :class:`BackendHttpError` without retrying.
    """
    body = {
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    url = cfg.base_url.rstrip("/") + CHAT_COMPLETIONS_PATH
    owns_client = client is None
    if owns_client:
        client = httpx.Client(timeout=cfg.timeout_ms / 1000.0)
    attempts = 0
    try:
        while True:
            attempts += 1
            try:
                response = client.post(url, json=body)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(
                    f"no response within {cfg.timeout_ms} ms: {exc}"
                ) from exc
            except httpx.HTTPError as exc:
                if attempts > cfg.max_retries:
                    raise BackendHttpError(
                        0, hashlib.sha256(str(exc).encode()).hexdigest()
                    ) from exc
                sleeper(cfg.backoff_ms * (2 ** (attempts - 1)) / 1000.0)
                continue

            if response.status_code >= 500 and attempts <= cfg.max_retries:
                sleeper(cfg.backoff_ms * (2 ** (attempts - 1)) / 1000.0)
                continue
            if response.status_code != 200:
                raise BackendHttpError(
                    response.status_code,
                    hashlib.sha256(response.content).hexdigest(),
                )
            try:
                content = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError):
                return None, attempts
            return str(content), attempts
    finally:
        if owns_client:
            client.close()


def predict_remote(
    record: CaseRecord,
    retrieved: RetrievedSet,
    cfg: RemoteBackendConfig,
    case_store: Mapping[str, CaseRecord],
    client: Optional[httpx.Client] = None,
    sleeper: Callable[[float], None] = time.sleep,
    threshold: float = 0.5,
) -> DiagnosisReport:
    """Prompt-concatenation diagnosis via the remote backend.

    Scores are indicator-valued (the backend gives no calibrated
    probabilities); an unparseable response yields an empty decided set
    with the parse-failure flag rather than an error.
    """
    used = retrieved.items[: min(cfg.concat_cases, retrieved.k_actual)]
    narratives = [case_store[item.id].narrative for item in used]
    messages = build_messages(record, narratives)
    content, attempts = chat_complete(cfg, messages, client=client, sleeper=sleeper)

    if content is None:
        decided, parsed = frozenset(), False
    else:
        decided, parsed = parse_subtypes(content)

    scores = tuple(1.0 if lab in decided else 0.0 for lab in SubtypeLabel)
    return DiagnosisReport(
        scores=scores,
        decided=decided,
        evidence=tuple(used),
        backend=BACKEND_REMOTE_CONCAT,
        threshold=threshold,
        no_evidence=len(used) == 0,
        explanation=content,
        parse_failure=not parsed,
        attempts=attempts,
    )
