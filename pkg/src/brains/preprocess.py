"""Feature preprocessing: z-scores, one-hot encoding, outlier fences.

Statistics are fit on the training split only. The feature-vector layout
is fixed by the field registry: numeric slots, then presence bits for
optional fields, then one-hot blocks for categorical fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cases import CATEGORICAL_FIELDS, NUMERIC_FIELDS, CaseRecord, PatientCase
from .errors import EmptyCorpus, OutlierRejected

STATS_FORMAT_VERSION = 1

OPTIONAL_NUMERIC = tuple(f.name for f in NUMERIC_FIELDS if not f.required)
OPTIONAL_CATEGORICAL = tuple(f.name for f in CATEGORICAL_FIELDS if not f.required)
OPTIONAL_FIELDS = OPTIONAL_NUMERIC + OPTIONAL_CATEGORICAL

FEATURE_LENGTH = (
    len(NUMERIC_FIELDS)
    + len(OPTIONAL_FIELDS)
    + sum(len(f.tokens) for f in CATEGORICAL_FIELDS)
)


def feature_names() -> list[str]:
    names = [f"z:{f.name}" for f in NUMERIC_FIELDS]
    names += [f"present:{name}" for name in OPTIONAL_FIELDS]
    for spec in CATEGORICAL_FIELDS:
        names += [f"{spec.name}={tok}" for tok in spec.tokens]
    return names


@dataclass(frozen=True)
class NumericStats:
    mean: float
    std: float            # substituted by 1.0 when the field is constant
    constant: bool
    lo: float              # inlier fence Q1 - 1.5 IQR
    hi: float              # inlier fence Q3 + 1.5 IQR


@dataclass(frozen=True)
class PreprocessStats:
    numeric: dict[str, NumericStats]
    categorical: dict[str, dict[str, int]]   # field -> token -> code

    @property
    def feature_length(self) -> int:
        return FEATURE_LENGTH


def fit_preprocess(corpus: Sequence[CaseRecord]) -> PreprocessStats:
    """Fit per-field normalization parameters and inlier fences.

    Population standard deviation; a zero-variance (or never-present)
    field is flagged constant and its std substituted by 1.0.
    """
    if not corpus:
        raise EmptyCorpus("cannot fit preprocessing on an empty corpus")

    numeric = {}
    for spec in NUMERIC_FIELDS:
        values = np.array(
            [
                getattr(r.case, spec.name)
                for r in corpus
                if getattr(r.case, spec.name) is not None
            ],
            dtype=np.float64,
        )
        if values.size == 0:
            numeric[spec.name] = NumericStats(0.0, 1.0, True, -np.inf, np.inf)
            continue
        mean = float(values.mean())
        std = float(values.std())
        constant = std == 0.0
        q1, q3 = np.percentile(values, [25.0, 75.0])
        iqr = q3 - q1
        numeric[spec.name] = NumericStats(
            mean=mean,
            std=1.0 if constant else std,
            constant=constant,
            lo=float(q1 - 1.5 * iqr),
            hi=float(q3 + 1.5 * iqr),
        )

    categorical = {
        spec.name: {tok: i for i, tok in enumerate(spec.tokens)}
        for spec in CATEGORICAL_FIELDS
    }
    return PreprocessStats(numeric=numeric, categorical=categorical)


def apply_preprocess(
    case: PatientCase, stats: PreprocessStats, policy: str = "clip"
) -> np.ndarray:
    """Encode a case as a fixed-length float64 vector.

    Numeric fields are clipped to the inlier fences (``policy="clip"``) or
    rejected (``policy="reject"``) and z-scored; absent optional fields
    contribute 0 with their presence bit cleared.
    """
    if policy not in ("clip", "reject"):
        raise ValueError(f"unknown outlier policy {policy!r}")
    vec = np.zeros(FEATURE_LENGTH, dtype=np.float64)

    offset = 0
    for i, spec in enumerate(NUMERIC_FIELDS):
        value = getattr(case, spec.name)
        if value is None:
            continue
        st = stats.numeric[spec.name]
        if value < st.lo or value > st.hi:
            if policy == "reject":
                raise OutlierRejected(spec.name, value)
            value = min(max(value, st.lo), st.hi)
        vec[offset + i] = (value - st.mean) / st.std
    offset += len(NUMERIC_FIELDS)

    for i, name in enumerate(OPTIONAL_FIELDS):
        if getattr(case, name) is not None:
            vec[offset + i] = 1.0
    offset += len(OPTIONAL_FIELDS)

    for spec in CATEGORICAL_FIELDS:
        token = getattr(case, spec.name)
        if token is not None:
            vec[offset + stats.categorical[spec.name][token]] = 1.0
        offset += len(spec.tokens)

    return vec


# --------------------------------------------------------------------------
# Persistence (single JSON document)
# --------------------------------------------------------------------------

def stats_to_json(stats: PreprocessStats) -> str:
    doc = {
        "format_version": STATS_FORMAT_VERSION,
        "numeric": {
            name: {
                "mean": st.mean,
                "std": st.std,
                "constant": st.constant,
                "lo": None if st.lo == -np.inf else st.lo,
                "hi": None if st.hi == np.inf else st.hi,
            }
            for name, st in stats.numeric.items()
        },
        "categorical": stats.categorical,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def stats_from_json(text: str) -> PreprocessStats:
    doc = json.loads(text)
    if doc.get("format_version") != STATS_FORMAT_VERSION:
        raise ValueError(
            f"unsupported stats format_version {doc.get('format_version')!r}"
        )
    numeric = {
        name: NumericStats(
            mean=d["mean"],
            std=d["std"],
            constant=d["constant"],
            lo=-np.inf if d["lo"] is None else d["lo"],
            hi=np.inf if d["hi"] is None else d["hi"],
        )
        for name, d in doc["numeric"].items()
    }
    categorical = {
        name: {tok: int(code) for tok, code in table.items()}
        for name, table in doc["categorical"].items()
    }
    return PreprocessStats(numeric=numeric, categorical=categorical)


def save_stats(stats: PreprocessStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(stats_to_json(stats) + "\n")


def load_stats(path) -> PreprocessStats:
    with open(path, "r", encoding="utf-8") as fh:
        return stats_from_json(fh.read())
