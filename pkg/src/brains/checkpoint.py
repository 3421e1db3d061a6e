"""Model checkpoint: versioned binary format with a content digest.

Layout: magic, format_version, length-prefixed JSON header (structure
metadata, preprocessing stats, training-config echo), length-prefixed
named float64 little-endian parameter blocks, then a trailing SHA-256
digest over everything before it. Loading verifies the digest, so a
flipped byte anywhere is rejected.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .diagnose import HeadParams
from .encoder import EncoderParams
from .errors import CorruptCheckpoint, IoFailure, VersionMismatch
from .fusion import FusionParams
from .preprocess import PreprocessStats, stats_from_json, stats_to_json
from .retrieval import RerankerParams

CHECKPOINT_MAGIC = b"BRCK"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    encoder: EncoderParams
    fusion: FusionParams
    head: HeadParams
    reranker: RerankerParams
    stats: PreprocessStats
    train_config: dict

    def digest(self) -> str:
        """Hex SHA-256 over the serialized payload (same value the file
        carries in its trailer)."""
        payload = _serialize_payload(self)
        return hashlib.sha256(payload).hexdigest()


def _parameter_blocks(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    blocks = [(f"encoder.{name}", ckpt.encoder.weights[name])
              for name in sorted(ckpt.encoder.weights)]
    blocks.append(("fusion.w_q", ckpt.fusion.w_q))
    blocks.append(("fusion.w_k", ckpt.fusion.w_k))
    if not ckpt.fusion.shared_kv:
        blocks.append(("fusion.w_v", ckpt.fusion.w_v))
    blocks.append(("head.w", ckpt.head.w))
    blocks.append(("head.b", ckpt.head.b))
    blocks.append(("reranker.m", ckpt.reranker.matrix))
    return blocks


def _serialize_payload(ckpt: Checkpoint) -> bytes:
    enc = ckpt.encoder
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder": {
            "mode": enc.mode,
            "d": enc.d,
            "seed": enc.seed,
            "feature_len": enc.feature_len,
            "vocab_size": enc.vocab_size,
            "layers": enc.layers,
            "heads": enc.heads,
            "max_len": enc.max_len,
        },
        "fusion": {"d_k": ckpt.fusion.d_k, "shared_kv": ckpt.fusion.shared_kv},
        "reranker": {"trainable": ckpt.reranker.trainable},
        "stats": json.loads(stats_to_json(ckpt.stats)),
        "train_config": ckpt.train_config,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_FORMAT_VERSION)
    out += struct.pack("<I", len(header_bytes))
    out += header_bytes
    for name, array in _parameter_blocks(ckpt):
        raw = name.encode("utf-8")
        arr = np.asarray(array, dtype=np.float64)
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.astype("<f8").tobytes(order="C")
    return bytes(out)


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    payload = _serialize_payload(ckpt)
    return payload + hashlib.sha256(payload).digest()


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(serialize_checkpoint(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint to {path}: {exc}") from exc


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 4 + 4 + 4 + 32:
        raise CorruptCheckpoint("file too short")
    payload, trailer = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != trailer:
        raise CorruptCheckpoint("content digest mismatch")
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatch(CHECKPOINT_FORMAT_VERSION, version)

    try:
        (header_len,) = struct.unpack_from("<I", payload, 8)
        offset = 12
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
        offset += header_len

        arrays: dict[str, np.ndarray] = {}
        while offset < len(payload):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = []
            for _ in range(ndim):
                (dim,) = struct.unpack_from("<I", payload, offset)
                offset += 4
                shape.append(dim)
            count = int(np.prod(shape)) if shape else 1
            end = offset + count * 8
            if end > len(payload):
                raise CorruptCheckpoint("truncated parameter block")
            arrays[name] = (
                np.frombuffer(payload[offset:end], dtype="<f8")
                .reshape(shape)
                .copy()
            )
            offset = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc

    enc_meta = header["encoder"]
    encoder = EncoderParams(
        mode=enc_meta["mode"],
        d=enc_meta["d"],
        seed=enc_meta["seed"],
        feature_len=enc_meta["feature_len"],
        vocab_size=enc_meta["vocab_size"],
        layers=enc_meta["layers"],
        heads=enc_meta["heads"],
        max_len=enc_meta["max_len"],
        weights={
            name[len("encoder."):]: arr
            for name, arr in arrays.items()
            if name.startswith("encoder.")
        },
    )
    shared_kv = header["fusion"]["shared_kv"]
    fusion = FusionParams(
        w_q=arrays["fusion.w_q"],
        w_k=arrays["fusion.w_k"],
        w_v=None if shared_kv else arrays["fusion.w_v"],
        d_k=header["fusion"]["d_k"],
        shared_kv=shared_kv,
    )
    head = HeadParams(w=arrays["head.w"], b=arrays["head.b"])
    reranker = RerankerParams(
        matrix=arrays["reranker.m"], trainable=header["reranker"]["trainable"]
    )
    stats = stats_from_json(json.dumps(header["stats"]))
    return Checkpoint(
        encoder=encoder,
        fusion=fusion,
        head=head,
        reranker=reranker,
        stats=stats,
        train_config=header["train_config"],
    )


def checkpoint_load(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint from {path}: {exc}") from exc
    return checkpoint_from_bytes(blob)
