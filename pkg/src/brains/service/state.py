"""Service state with snapshot isolation and atomic swap.

Every request observes one immutable (checkpoint, index, corpus) triple.
Imports stage records, build a full replacement index offline, then swap
a single reference — in-flight requests keep reading the old snapshot.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Optional

from ..cases import CaseRecord, narrative_digest, record_from_dict
from ..checkpoint import Checkpoint, checkpoint_load
from ..encoder import embed_cls
from ..errors import BrainsError, CorruptIndex, DuplicateId
from ..retrieval import VectorIndex


@dataclass(frozen=True)
class Snapshot:
    checkpoint: Checkpoint
    index: VectorIndex
    records: dict
    checkpoint_digest: str


class ServiceState:
    def __init__(self):
        self._lock = threading.Lock()
        self._snapshot: Optional[Snapshot] = None

    @property
    def ready(self) -> bool:
        return self._snapshot is not None

    def snapshot(self) -> Optional[Snapshot]:
        return self._snapshot

    def install(self, checkpoint: Checkpoint, index: VectorIndex, records: dict) -> None:
        """Atomically publish a fully built state triple."""
        for record_id in index.ids:
            record = records.get(record_id)
            if record is None:
                raise CorruptIndex(f"indexed id {record_id!r} missing from corpus")
            if narrative_digest(record.narrative) != index.digest(record_id):
                raise CorruptIndex(f"narrative digest mismatch for {record_id!r}")
        snapshot = Snapshot(
            checkpoint=checkpoint,
            index=index,
            records=dict(records),
            checkpoint_digest=checkpoint.digest(),
        )
        with self._lock:
            self._snapshot = snapshot

    def load(
        self,
        checkpoint_path: str,
        index_path: Optional[str] = None,
        corpus_path: Optional[str] = None,
    ) -> None:
        """Load artifacts from disk and publish them. With no index path
        the service starts retrieval-free over an empty index."""
        from ..cases import load_jsonl

        checkpoint = checkpoint_load(checkpoint_path)
        if index_path is not None:
            index = VectorIndex.load(index_path)
        else:
            index = VectorIndex(checkpoint.encoder.d)
        records = {}
        if corpus_path is not None:
            records = {r.case.id: r for r in load_jsonl(corpus_path)}
        self.install(checkpoint, index, records)

    def import_jsonl(self, text: str) -> tuple[int, list[dict]]:
        """Stage JSONL lines, build the replacement index, swap.

        Returns (accepted, rejected) where rejected entries carry the
        1-based line number and a machine-readable reason code.
        """
        snapshot = self._snapshot
        if snapshot is None:
            raise BrainsError("service not ready")

        staged: list[CaseRecord] = []
        rejected: list[dict] = []
        seen = set(snapshot.records)
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = record_from_dict(json.loads(line))
                if record.case.id in seen:
                    raise DuplicateId(record.case.id)
                seen.add(record.case.id)
                staged.append(record)
            except BrainsError as exc:
                rejected.append(
                    {"line": line_no, "reason": exc.code, "detail": str(exc)}
                )
            except (json.JSONDecodeError, ValueError) as exc:
                rejected.append(
                    {"line": line_no, "reason": "bad_request", "detail": str(exc)}
                )

        checkpoint = snapshot.checkpoint
        replacement = VectorIndex(snapshot.index.d)
        for record_id in snapshot.index.ids:
            replacement.add(
                record_id,
                snapshot.index.vector(record_id),
                snapshot.index.labels(record_id),
                snapshot.index.digest(record_id),
            )
        records = dict(snapshot.records)
        for record in staged:
            replacement.add(
                record.case.id,
                embed_cls(record, checkpoint.encoder, checkpoint.stats),
                record.labels,
                narrative_digest(record.narrative),
            )
            records[record.case.id] = record

        self.install(checkpoint, replacement, records)
        return len(staged), rejected
