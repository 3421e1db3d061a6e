"""Exception taxonomy shared by every layer.

Each class carries a stable ``code`` string so the HTTP service and the
CLI can emit machine-readable errors from a closed set.
"""

from __future__ import annotations


class BrainsError(Exception):
    """Base class for all domain errors."""

    code = "error"


class RangeViolation(BrainsError):
    code = "range_violation"

    def __init__(self, field: str, value, bound: str):
        self.field = field
        self.value = value
        self.bound = bound
        super().__init__(f"{field}={value!r} outside {bound}")


class MissingRequired(BrainsError):
    code = "missing_required"

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"required field {field!r} is missing")


class UnknownCategory(BrainsError):
    code = "unknown_category"

    def __init__(self, field: str, token):
        self.field = field
        self.token = token
        super().__init__(f"{field}={token!r} is not an allowed category")


class EmptyCorpus(BrainsError):
    code = "empty_corpus"


class OutlierRejected(BrainsError):
    code = "outlier_rejected"

    def __init__(self, field: str, value: float):
        self.field = field
        self.value = value
        super().__init__(f"{field}={value!r} outside inlier bounds")


class BadConfig(BrainsError):
    code = "bad_config"


class BadRatios(BrainsError):
    code = "bad_ratios"


class EmptyText(BrainsError):
    code = "empty_text"


class DuplicateId(BrainsError):
    code = "duplicate_id"

    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"id {record_id!r} already present")


class DimensionMismatch(BrainsError):
    code = "dimension_mismatch"

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected dimension {expected}, got {got}")


class EmptyIndex(BrainsError):
    code = "empty_index"


class UnknownId(BrainsError):
    code = "unknown_id"

    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"id {record_id!r} not indexed")


class CorruptIndex(BrainsError):
    code = "corrupt_index"


class IoFailure(BrainsError):
    code = "io_failure"


class NonFiniteInput(BrainsError):
    code = "non_finite_input"


class EmptyRetrieval(BrainsError):
    code = "empty_retrieval"


class MissingRagSlot(BrainsError):
    code = "missing_rag_slot"


class MultipleRagSlots(BrainsError):
    code = "multiple_rag_slots"


class CorruptCheckpoint(BrainsError):
    code = "corrupt_checkpoint"


class VersionMismatch(BrainsError):
    code = "version_mismatch"

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"format version {got} not supported (expected {expected})")


class EmptyTrainSplit(BrainsError):
    code = "empty_train_split"


class EmptyPairs(BrainsError):
    code = "empty_pairs"


class BackendTimeout(BrainsError):
    code = "backend_timeout"


class BackendHttpError(BrainsError):
    code = "backend_http_error"

    def __init__(self, status: int, body_digest: str):
        self.status = status
        self.body_digest = body_digest
        super().__init__(f"backend returned HTTP {status} (body sha256 {body_digest[:12]})")


class NotReady(BrainsError):
    code = "not_ready"
