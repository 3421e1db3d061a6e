"""Retrieval-augmented neurocognitive screening toolkit."""

__version__ = "0.1.0"

from .cases import CaseRecord, PatientCase, SubtypeLabel, validate_case
from .diagnose import DiagnosisReport, predict_local
from .retrieval import VectorIndex, retrieve

__all__ = [
    "CaseRecord",
    "PatientCase",
    "SubtypeLabel",
    "validate_case",
    "DiagnosisReport",
    "predict_local",
    "VectorIndex",
    "retrieve",
    "__version__",
]
