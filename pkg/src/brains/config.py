"""Single structured JSON configuration shared by the CLI and service.

Precedence: built-in defaults, deep-merged with the file given by
``--config`` or the ``BRAINS_CONFIG`` environment variable, then
command-line flag overrides on top.
"""

from __future__ import annotations

import copy
import json
import os
from typing import Optional

from .errors import BadConfig
from .remote import RemoteBackendConfig
from .synthetic import GeneratorConfig
from .training import TrainConfig

ENV_CONFIG_PATH = "BRAINS_CONFIG"

DEFAULTS: dict = {
    "format_version": 1,
    "seed": 7,
    "threshold": 0.5,
    "generator": {
        "n": 2000,
        "mix": [0.6, 0.3, 0.1],
        "noise": 1.0,
        "neighbor_only_fraction": 0.5,
        "cluster_size": 8,
        "cluster_spread": 0.06,
        "optional_dropout": 0.03,
    },
    "encoder": {
        "mode": "structured",
        "d": 64,
        "vocab_size": 4096,
        "layers": 2,
        "heads": 4,
        "max_len": 128,
    },
    "fusion": {"d_k": 64, "shared_kv": True},
    "retrieval": {"k": 5, "n1": None},
    "train": {
        "epochs": 15,
        "batch_size": 4,
        "learning_rate": 1e-5,
        "mask_max": 4,
        "k": 5,
        "seed": 7,
        "threshold": 0.5,
        "unfreeze_encoder": False,
        "unfreeze_reranker": False,
    },
    # The experiment ladder trains the desk-scale head from scratch, so it
    # overrides the fine-tune-sized learning rate above.
    "experiment": {
        "variants": ["no-rag", "rag-1", "rag-2", "brains-k5"],
        "corpus_seed": 42,
        "corpus_size": 2000,
        "ratios": [0.8, 0.1, 0.1],
        "train": {"learning_rate": 1e-2, "epochs": 15, "batch_size": 4, "seed": 7},
    },
    "remote": {
        "base_url": None,
        "model": "screener",
        "timeout_ms": 30000,
        "max_retries": 2,
        "backoff_ms": 250,
        "temperature": 0.0,
        "max_tokens": 256,
        "concat_cases": 1,
    },
    "service": {
        "port": 8750,
        "host": "127.0.0.1",
        "cors_origins": ["*"],
        "bearer_token": None,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: Optional[str] = None) -> dict:
    """Defaults merged with the JSON file at *path* (or $BRAINS_CONFIG)."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_PATH)
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise BadConfig(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadConfig(f"config file {path} must hold a JSON object")
    return _deep_merge(DEFAULTS, doc)


def generator_config(cfg: dict, n: Optional[int] = None) -> GeneratorConfig:
    g = cfg["generator"]
    return GeneratorConfig(
        n=n if n is not None else int(g["n"]),
        mix=tuple(g["mix"]),
        noise=float(g["noise"]),
        neighbor_only_fraction=float(g["neighbor_only_fraction"]),
        cluster_size=int(g["cluster_size"]),
        cluster_spread=float(g["cluster_spread"]),
        optional_dropout=float(g["optional_dropout"]),
    )


def train_config(cfg: dict, section: str = "train") -> TrainConfig:
    base = dict(cfg["train"])
    if section == "experiment":
        base.update(cfg["experiment"].get("train", {}))
    return TrainConfig.from_dict(base)


def remote_config(cfg: dict, concat_cases: Optional[int] = None) -> RemoteBackendConfig:
    r = cfg["remote"]
    if r.get("base_url") is None:
        raise BadConfig("remote backend requires remote.base_url")
    return RemoteBackendConfig(
        base_url=r["base_url"],
        model=r["model"],
        timeout_ms=int(r["timeout_ms"]),
        max_retries=int(r["max_retries"]),
        backoff_ms=int(r["backoff_ms"]),
        temperature=float(r["temperature"]),
        max_tokens=int(r["max_tokens"]),
        concat_cases=concat_cases if concat_cases is not None else int(r["concat_cases"]),
    )
