"""Pydantic request/response models for the HTTP surface.

Field-range enforcement intentionally lives in the domain validator, not
here, so the service returns the same machine-readable error codes as
the rest of the system.
"""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, ConfigDict


class ScreenRequest(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: Optional[str] = None
    mmse: Optional[float] = None
    cdr: Optional[Union[str, float]] = None
    age: Optional[float] = None
    etiv: Optional[float] = None
    nwbv: Optional[float] = None
    gender: Optional[str] = None
    handedness: Optional[str] = None
    education: Optional[float] = None
    ses: Optional[Union[str, int]] = None
    hippocampal_volume: Optional[float] = None
    amygdala_volume: Optional[float] = None
    ventricular_volume: Optional[float] = None
    temporal_thickness: Optional[float] = None
    wmh_load: Optional[float] = None
    apoe_e4_count: Optional[float] = None
    moca: Optional[float] = None
    gds: Optional[float] = None

    k: Optional[int] = None
    backend: Optional[str] = None   # "local" (default) or "remote"

    def case_fields(self) -> dict:
        data = self.model_dump(exclude_none=True)
        data.pop("k", None)
        data.pop("backend", None)
        return data


class EvidenceItem(BaseModel):
    id: str
    cosine: float
    rerank_score: float
    mmse: Optional[float] = None
    cdr: Optional[str] = None
    age: Optional[float] = None
    nwbv: Optional[float] = None


class ScreenResponse(BaseModel):
    request_id: str
    backend: str
    scores: list[float]
    decided: list[str]
    threshold: float
    no_evidence: bool
    evidence: list[EvidenceItem]
    checkpoint_digest: str
    explanation: Optional[str] = None
    parse_failure: bool = False


class SimilarResponse(BaseModel):
    id: str
    k_requested: int
    items: list[EvidenceItem]


class RejectedLine(BaseModel):
    line: int
    reason: str
    detail: str


class ImportResponse(BaseModel):
    accepted: int
    rejected: list[RejectedLine]
    index_size: int


class HealthResponse(BaseModel):
    status: str
    index_size: int
    checkpoint_digest: Optional[str] = None
