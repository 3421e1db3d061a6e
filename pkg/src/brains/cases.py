"""Clinical case schema: validation, canonical narrative text, corpus IO.

The field registry below is the single source of truth for names, ranges
and category tables. The HTTP schema document, the preprocessing layout
and the web console validation are all derived from it.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, fields as dc_fields
from enum import IntEnum
from typing import Iterable, Mapping, Optional

from .errors import (
    DuplicateId,
    MissingRequired,
    RangeViolation,
    UnknownCategory,
)


class SubtypeLabel(IntEnum):
    """The five diagnosis subtypes with stable serialization codes."""

    EarlyOnset = 0
    LateOnset = 1
    Familial = 2
    Sporadic = 3
    Atypical = 4


ALL_LABELS = tuple(SubtypeLabel)
LabelSet = frozenset  # of SubtypeLabel


def parse_labels(names: Iterable) -> frozenset:
    out = set()
    for name in names:
        try:
            out.add(SubtypeLabel[str(name)])
        except KeyError:
            raise UnknownCategory("labels", name) from None
    return frozenset(out)


def labels_to_names(labels: frozenset) -> list[str]:
    return [lab.name for lab in sorted(labels)]


# --------------------------------------------------------------------------
# Field registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NumericField:
    name: str
    lo: float
    hi: float
    required: bool = False
    lo_exclusive: bool = False
    hi_exclusive: bool = False
    integer: bool = False
    unit: str = ""

    @property
    def bound(self) -> str:
        left = "(" if self.lo_exclusive else "["
        right = ")" if self.hi_exclusive or self.hi == float("inf") else "]"
        hi = "inf" if self.hi == float("inf") else _fmt_number(self.hi)
        text = f"{left}{_fmt_number(self.lo)},{hi}{right}"
        return text + " integer" if self.integer else text


@dataclass(frozen=True)
class CategoricalField:
    name: str
    tokens: tuple[str, ...]          # canonical tokens, code = position
    aliases: Mapping[str, str]       # accepted token -> canonical token
    required: bool = False


INF = float("inf")

NUMERIC_FIELDS: tuple[NumericField, ...] = (
    NumericField("mmse", 0, 30, required=True),
    NumericField("age", 18, 120, required=True, unit="years"),
    NumericField("etiv", 0, INF, lo_exclusive=True, unit="mL"),
    NumericField("nwbv", 0, 1, lo_exclusive=True, hi_exclusive=True),
    NumericField("education", 0, 30, unit="years"),
    NumericField("hippocampal_volume", 0, INF, unit="mL"),
    NumericField("amygdala_volume", 0, INF, unit="mL"),
    NumericField("ventricular_volume", 0, INF, unit="mL"),
    NumericField("temporal_thickness", 0, INF, unit="mm"),
    NumericField("wmh_load", 0, INF),
    NumericField("apoe_e4_count", 0, 2, integer=True),
    NumericField("moca", 0, 30),
    NumericField("gds", 0, 15),
)

CDR_LEVELS = ("0", "0.5", "1", "2", "3")

CATEGORICAL_FIELDS: tuple[CategoricalField, ...] = (
    CategoricalField("cdr", CDR_LEVELS, {}, required=True),
    CategoricalField(
        "gender", ("female", "male", "other"), {"unknown": "other", "f": "female", "m": "male"}
    ),
    CategoricalField(
        "handedness", ("left", "right", "ambi"), {"unknown": "ambi", "ambidextrous": "ambi"}
    ),
    CategoricalField("ses", ("1", "2", "3", "4", "5"), {}),
)

REQUIRED_FIELDS = ("id", "mmse", "cdr", "age")

# Serialization / narrative order is alphabetical by field name.
FIELD_ORDER = tuple(sorted(
    [f.name for f in NUMERIC_FIELDS] + [f.name for f in CATEGORICAL_FIELDS]
))


@dataclass(frozen=True)
class PatientCase:
    """One subject's demographic, cognitive and volumetric features.

    ``None`` marks an explicitly absent optional field. ``cdr`` and ``ses``
    hold their canonical category token; numeric fields hold floats.
    """

    id: str
    mmse: float
    cdr: str
    age: float
    etiv: Optional[float] = None
    nwbv: Optional[float] = None
    gender: Optional[str] = None
    handedness: Optional[str] = None
    education: Optional[float] = None
    ses: Optional[str] = None
    hippocampal_volume: Optional[float] = None
    amygdala_volume: Optional[float] = None
    ventricular_volume: Optional[float] = None
    temporal_thickness: Optional[float] = None
    wmh_load: Optional[float] = None
    apoe_e4_count: Optional[float] = None
    moca: Optional[float] = None
    gds: Optional[float] = None


CASE_FIELD_NAMES = tuple(f.name for f in dc_fields(PatientCase))


def _coerce_number(field: str, value, bound: str) -> float:
    if isinstance(value, bool) or value is None:
        raise RangeViolation(field, value, bound)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise RangeViolation(field, value, bound) from None


def _category_token(value) -> str:
    # Numeric category inputs (cdr 0.5, ses 3) normalize through float so
    # that 1, 1.0 and "1" all map to the same token.
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        f = float(value)
        return str(int(f)) if f.is_integer() else repr(f)
    text = str(value).strip().lower()
    try:
        f = float(text)
    except ValueError:
        return text
    return str(int(f)) if f.is_integer() else repr(f)


def validate_case(raw: Mapping) -> PatientCase:
    """Validate a raw field map into a :class:`PatientCase`.

    Raises :class:`MissingRequired`, :class:`RangeViolation` or
    :class:`UnknownCategory`. Unrecognized keys are ignored; optional
    fields that are missing (or ``None``/empty) come out as ``None``.
    """
    for name in REQUIRED_FIELDS:
        if raw.get(name) is None or raw.get(name) == "":
            raise MissingRequired(name)

    values: dict = {"id": str(raw["id"])}

    for spec in NUMERIC_FIELDS:
        value = raw.get(spec.name)
        if value is None or value == "":
            if spec.required:
                raise MissingRequired(spec.name)
            values[spec.name] = None
            continue
        num = _coerce_number(spec.name, value, spec.bound)
        below = num < spec.lo or (spec.lo_exclusive and num == spec.lo)
        above = num > spec.hi or (spec.hi_exclusive and num == spec.hi)
        if below or above or (spec.integer and not num.is_integer()):
            raise RangeViolation(spec.name, value, spec.bound)
        values[spec.name] = num

    for spec in CATEGORICAL_FIELDS:
        value = raw.get(spec.name)
        if value is None or value == "":
            if spec.required:
                raise MissingRequired(spec.name)
            values[spec.name] = None
            continue
        token = _category_token(value)
        if token == "unknown" and "unknown" not in spec.aliases and not spec.required:
            values[spec.name] = None  # ses: unknown band is an absent marker
            continue
        token = spec.aliases.get(token, token)
        if token not in spec.tokens:
            raise UnknownCategory(spec.name, token)
        values[spec.name] = token

    return PatientCase(**values)


# --------------------------------------------------------------------------
# Canonical narrative rendering
# --------------------------------------------------------------------------

def _fmt_number(value: float) -> str:
    f = float(value)
    return str(int(f)) if f.is_integer() else str(f)


_SENTENCE_TEMPLATES = {
    "age": lambda v: f"Age is {_fmt_number(v)} years.",
    "amygdala_volume": lambda v: f"Amygdala volume is {v:.1f} mL.",
    "apoe_e4_count": lambda v: f"APOE epsilon-4 allele count is {_fmt_number(v)}.",
    "cdr": lambda v: f"CDR rating is {v}.",
    "education": lambda v: f"Education is {_fmt_number(v)} years.",
    "etiv": lambda v: f"Estimated total intracranial volume is {v:.1f} mL.",
    "gds": lambda v: f"GDS score is {_fmt_number(v)} out of 15.",
    "gender": lambda v: f"Gender is {v}.",
    "handedness": lambda v: f"Handedness is {v}.",
    "hippocampal_volume": lambda v: f"Hippocampal volume is {v:.1f} mL.",
    "mmse": lambda v: f"MMSE score is {_fmt_number(v)} out of 30.",
    "moca": lambda v: f"MoCA score is {_fmt_number(v)} out of 30.",
    "nwbv": lambda v: f"Normalized whole-brain volume is {v:.3f}.",
    "ses": lambda v: f"Socioeconomic band is {v} of 5.",
    "temporal_thickness": lambda v: f"Temporal cortical thickness is {v:.2f} mm.",
    "ventricular_volume": lambda v: f"Ventricular volume is {v:.1f} mL.",
    "wmh_load": lambda v: f"White matter hyperintensity load is {v:.1f}.",
}


def render_text(case: PatientCase) -> str:
    """Render the deterministic one-sentence-per-present-field narrative.

    Field order is alphabetical; absent fields contribute no sentence.
    Byte-identical across runs for equal cases.
    """
    sentences = []
    for name in FIELD_ORDER:
        value = getattr(case, name)
        if value is None:
            continue
        sentences.append(_SENTENCE_TEMPLATES[name](value))
    return " ".join(sentences)


def narrative_digest(narrative: str) -> bytes:
    return hashlib.sha256(narrative.encode("utf-8")).digest()


# --------------------------------------------------------------------------
# Corpus text sanitization
# --------------------------------------------------------------------------

VISUAL_TOKENS = ("Figure", "Fig.", "see image", "shown in image")

_TERMINATORS = ".!?"


def _sentence_segments(text: str) -> list[str]:
    """Tile *text* into segments that concatenate back byte-identically.

    A segment ends after a run of sentence terminators that is followed by
    whitespace (the whitespace travels with the segment) or end-of-text,
    so decimals like ``3.5`` never split.
    """
    segments = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINATORS:
            j = i + 1
            while j < n and text[j] in _TERMINATORS:
                j += 1
            if j >= n or text[j].isspace():
                while j < n and text[j].isspace():
                    j += 1
                segments.append(text[start:j])
                start = i = j
            else:
                i = j
        else:
            i += 1
    if start < n:
        segments.append(text[start:])
    return segments


def sanitize_corpus_text(text: str, tokens: Iterable[str] = VISUAL_TOKENS) -> str:
    """Drop every sentence mentioning a visual-reference token.

    Matching is case-insensitive substring containment; surviving
    sentences keep their original bytes and order. Idempotent.
    """
    lowered = [t.lower() for t in tokens]
    segments = _sentence_segments(text)
    kept = [seg for seg in segments if not any(tok in seg.lower() for tok in lowered)]
    if len(kept) == len(segments):
        return text
    return "".join(kept).rstrip()


# --------------------------------------------------------------------------
# Case records and corpus IO
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseRecord:
    case: PatientCase
    labels: frozenset
    narrative: str


def make_record(case: PatientCase, labels: frozenset) -> CaseRecord:
    return CaseRecord(case=case, labels=frozenset(labels), narrative=render_text(case))


def case_to_dict(case: PatientCase) -> dict:
    out = {"id": case.id}
    for name in FIELD_ORDER:
        value = getattr(case, name)
        if value is None:
            continue
        out[name] = value
    return out


def record_to_dict(record: CaseRecord) -> dict:
    out = case_to_dict(record.case)
    out["labels"] = labels_to_names(record.labels)
    return out


def record_from_dict(raw: Mapping) -> CaseRecord:
    labels = parse_labels(raw.get("labels", ()))
    case = validate_case({k: v for k, v in raw.items() if k != "labels"})
    return make_record(case, labels)


def record_to_json(record: CaseRecord) -> str:
    return json.dumps(record_to_dict(record), separators=(",", ":"), sort_keys=False)


def write_jsonl(records: Iterable[CaseRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")


def load_jsonl(path) -> list[CaseRecord]:
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = record_from_dict(json.loads(line))
            if record.case.id in seen:
                raise DuplicateId(record.case.id)
            seen.add(record.case.id)
            records.append(record)
    return records


CSV_HEADER = ("id",) + FIELD_ORDER + ("labels",)


def load_csv(path) -> list[CaseRecord]:
    """Import records from CSV.

    Expected header: ``id`` plus any subset of the case field names plus a
    ``labels`` column holding ``;``-separated subtype names. Empty cells
    are absent fields.
    """
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            raw = {k: v for k, v in row.items() if v not in (None, "")}
            label_cell = raw.pop("labels", "")
            labels = parse_labels(
                [t for t in label_cell.replace("|", ";").split(";") if t.strip()]
            )
            case = validate_case(raw)
            if case.id in seen:
                raise DuplicateId(case.id)
            seen.add(case.id)
            records.append(make_record(case, labels))
    return records


def field_schema_document() -> dict:
    """JSON schema document served at ``/v1/schema`` and consumed by the
    console so client and server validation cannot drift."""
    fields = {}
    for spec in NUMERIC_FIELDS:
        fields[spec.name] = {
            "type": "number",
            "required": spec.required,
            "min": spec.lo,
            "max": None if spec.hi == INF else spec.hi,
            "min_exclusive": spec.lo_exclusive,
            "max_exclusive": spec.hi_exclusive,
            "integer": spec.integer,
            "unit": spec.unit,
        }
    for spec in CATEGORICAL_FIELDS:
        fields[spec.name] = {
            "type": "category",
            "required": spec.required,
            "values": list(spec.tokens),
            "aliases": dict(spec.aliases),
        }
    return {
        "format_version": 1,
        "required": list(REQUIRED_FIELDS),
        "labels": [lab.name for lab in ALL_LABELS],
        "fields": fields,
    }
