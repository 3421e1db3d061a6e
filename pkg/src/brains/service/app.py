"""HTTP API binding the screening pipeline.

Endpoints: POST /v1/screen, GET /v1/cases/{id}/similar, POST
/v1/corpus/import, GET /v1/schema, GET /healthz. Every 4xx/5xx body
carries ``{"error": {"code", "detail", ...}}`` with a code from the
closed error enumeration.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..cases import field_schema_document, labels_to_names, make_record, validate_case
from ..config import load_config, remote_config
from ..diagnose import predict_local
from ..errors import (
    BackendHttpError,
    BackendTimeout,
    BadConfig,
    BrainsError,
    EmptyIndex,
    MissingRequired,
    RangeViolation,
    UnknownCategory,
)
from ..remote import predict_remote
from ..retrieval import retrieve
from .schemas import (
    EvidenceItem,
    HealthResponse,
    ImportResponse,
    ScreenRequest,
    ScreenResponse,
    SimilarResponse,
)
from .state import ServiceState


def _error(status: int, code: str, detail: str, **extra) -> JSONResponse:
    body = {"error": {"code": code, "detail": detail, **extra}}
    if status == 503:
        body["status"] = "starting"
    return JSONResponse(status_code=status, content=body)


def _field_error(exc: BrainsError) -> dict:
    entry = {"code": exc.code, "detail": str(exc)}
    if isinstance(exc, RangeViolation):
        entry.update({"field": exc.field, "bound": exc.bound})
    elif isinstance(exc, (MissingRequired, UnknownCategory)):
        entry.update({"field": exc.field})
    return entry


def _evidence_items(report_evidence, records) -> list[EvidenceItem]:
    items = []
    for item in report_evidence:
        record = records.get(item.id)
        case = record.case if record else None
        items.append(EvidenceItem(
            id=item.id,
            cosine=item.cosine,
            rerank_score=item.rerank_score,
            mmse=case.mmse if case else None,
            cdr=case.cdr if case else None,
            age=case.age if case else None,
            nwbv=case.nwbv if case else None,
        ))
    return items


def create_app(state: ServiceState, config: Optional[dict] = None) -> FastAPI:
    config = config if config is not None else load_config()
    service_cfg = config["service"]
    app = FastAPI(title="brains screening service", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(service_cfg.get("cors_origins") or ["*"]),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    token = service_cfg.get("bearer_token")

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = [
            {
                "field": ".".join(str(p) for p in err.get("loc", ()) if p != "body"),
                "code": "bad_request",
                "detail": err.get("msg", "invalid value"),
            }
            for err in exc.errors()
        ]
        return JSONResponse(
            status_code=400,
            content={"error": {
                "code": "bad_request",
                "detail": "request body failed schema validation",
                "fields": fields,
            }},
        )

    def _authorized(request: Request) -> bool:
        if token is None:
            return True
        return request.headers.get("authorization") == f"Bearer {token}"

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        snap = state.snapshot()
        if snap is None:
            return HealthResponse(status="starting", index_size=0)
        return HealthResponse(
            status="ready",
            index_size=snap.index.size,
            checkpoint_digest=snap.checkpoint_digest,
        )

    @app.get("/v1/schema")
    def schema():
        return field_schema_document()

    @app.post("/v1/screen")
    def screen(body: ScreenRequest, request: Request):
        if not _authorized(request):
            return _error(401, "unauthorized", "missing or invalid bearer token")
        snap = state.snapshot()
        if snap is None:
            return _error(503, "not_ready", "model and index not loaded yet")

        raw = body.case_fields()
        raw.setdefault("id", "query")
        try:
            case = validate_case(raw)
        except BrainsError as exc:
            return JSONResponse(
                status_code=400,
                content={"error": {
                    "code": exc.code,
                    "detail": str(exc),
                    "fields": [_field_error(exc)],
                }},
            )
        if body.k is not None and body.k < 1:
            return _error(400, "bad_request", f"k must be >= 1, got {body.k}")

        record = make_record(case, frozenset())
        backend = body.backend or "local"
        if backend == "local":
            report = predict_local(
                record, snap.checkpoint, snap.index, snap.records, k=body.k
            )
        elif backend == "remote":
            try:
                backend_cfg = remote_config(config)
            except BadConfig as exc:
                return _error(400, exc.code, str(exc))
            try:
                k = body.k or int(snap.checkpoint.train_config.get("k", 5))
                try:
                    retrieved = retrieve(
                        record, snap.index, snap.checkpoint.encoder,
                        snap.checkpoint.stats, snap.checkpoint.reranker, k=k,
                    )
                except EmptyIndex:
                    from ..retrieval import RetrievedSet
                    retrieved = RetrievedSet(items=(), k_requested=k)
                report = predict_remote(
                    record, retrieved, backend_cfg, snap.records
                )
            except (BackendTimeout, BackendHttpError) as exc:
                return _error(502, exc.code, str(exc))
        else:
            return _error(400, "bad_request", f"unknown backend {backend!r}")

        return ScreenResponse(
            request_id=case.id,
            backend=report.backend,
            scores=list(report.scores),
            decided=labels_to_names(report.decided),
            threshold=report.threshold,
            no_evidence=report.no_evidence,
            evidence=_evidence_items(report.evidence, snap.records),
            checkpoint_digest=snap.checkpoint_digest,
            explanation=report.explanation,
            parse_failure=report.parse_failure,
        )

    @app.get("/v1/cases/{record_id}/similar")
    def similar(record_id: str, request: Request, k: int = 5):
        if not _authorized(request):
            return _error(401, "unauthorized", "missing or invalid bearer token")
        snap = state.snapshot()
        if snap is None:
            return _error(503, "not_ready", "model and index not loaded yet")
        if k < 1:
            return _error(400, "bad_request", f"k must be >= 1, got {k}")
        if record_id not in snap.index or record_id not in snap.records:
            return _error(404, "unknown_id", f"id {record_id!r} not indexed")
        record = snap.records[record_id]
        try:
            retrieved = retrieve(
                record, snap.index, snap.checkpoint.encoder,
                snap.checkpoint.stats, snap.checkpoint.reranker, k=k,
            )
            items = retrieved.items
        except EmptyIndex:
            items = ()
        return SimilarResponse(
            id=record_id,
            k_requested=k,
            items=_evidence_items(items, snap.records),
        )

    @app.post("/v1/corpus/import", status_code=202)
    async def import_corpus(request: Request):
        if not _authorized(request):
            return _error(401, "unauthorized", "missing or invalid bearer token")
        snap = state.snapshot()
        if snap is None:
            return _error(503, "not_ready", "model and index not loaded yet")
        raw = await request.body()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            return _error(400, "bad_request", "body is not valid UTF-8")
        if not text.strip():
            return _error(400, "bad_request", "empty import body")
        accepted, rejected = state.import_jsonl(text)
        fresh = state.snapshot()
        return ImportResponse(
            accepted=accepted,
            rejected=rejected,
            index_size=fresh.index.size if fresh else 0,
        )

    return app
