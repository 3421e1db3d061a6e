"""Deterministic stand-in for a remote chat-completion backend.

Implements the chat wire format and answers with fixed threshold rules
over the feature values it can read out of the case narratives in the
prompt (target plus any "Similar case" sections, averaged equally). It
exists so the prompt-concatenation variants and the backend-contract
tests run self-contained; it is intentionally a coarse baseline.
"""

from __future__ import annotations

import re
from statistics import mean

from fastapi import FastAPI, Request

from .cases import SubtypeLabel
from .remote import DISPLAY_NAMES

_FIELD_PATTERNS = {
    "age": re.compile(r"Age is ([0-9.]+) years\."),
    "apoe": re.compile(r"APOE epsilon-4 allele count is ([0-9.]+)\."),
    "wmh": re.compile(r"White matter hyperintensity load is ([0-9.]+)\."),
    "gds": re.compile(r"GDS score is ([0-9.]+) out of 15\."),
}

_SECTION_RE = re.compile(r"(?:Target case|Similar case \d+):\n")


def _extract_sections(prompt: str) -> list[str]:
    parts = _SECTION_RE.split(prompt)
    return [p for p in parts[1:] if p.strip()]


def _combined_features(sections: list[str]) -> dict[str, float]:
    values: dict[str, list[float]] = {name: [] for name in _FIELD_PATTERNS}
    for section in sections:
        for name, pattern in _FIELD_PATTERNS.items():
            match = pattern.search(section)
            if match:
                values[name].append(float(match.group(1).rstrip(".")))
    return {name: mean(v) for name, v in values.items() if v}


def rule_based_subtypes(prompt: str) -> frozenset:
    """Threshold rules over the equally-weighted mean of every case
    narrative found in the prompt."""
    feats = _combined_features(_extract_sections(prompt))
    decided = set()
    age = feats.get("age")
    if age is not None:
        if age < 60.0:
            decided.add(SubtypeLabel.EarlyOnset)
        elif age > 73.0:
            decided.add(SubtypeLabel.LateOnset)
    if feats.get("apoe", 0.0) >= 1.5:
        decided.add(SubtypeLabel.Familial)
    if feats.get("wmh", 0.0) > 4.0:
        decided.add(SubtypeLabel.Sporadic)
    if feats.get("gds", 0.0) > 7.0:
        decided.add(SubtypeLabel.Atypical)
    return frozenset(decided)


def create_stub_app() -> FastAPI:
    app = FastAPI(title="stub chat backend")

    @app.post("/v1/chat/completions")
    async def chat_completions(request: Request):
        body = await request.json()
        prompt = ""
        for message in body.get("messages", []):
            if message.get("role") == "user":
                prompt = message.get("content", "")
        decided = rule_based_subtypes(prompt)
        if decided:
            text = "; ".join(DISPLAY_NAMES[lab] for lab in sorted(decided))
        else:
            text = "No clear subtype identified."
        return {
            "model": body.get("model", "stub"),
            "choices": [{"message": {"role": "assistant", "content": text}}],
        }

    return app


def main() -> None:  # pragma: no cover - manual utility
    import uvicorn

    uvicorn.run(create_stub_app(), host="127.0.0.1", port=8760)


if __name__ == "__main__":  # pragma: no cover
    main()
