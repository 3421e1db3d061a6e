"""Multi-label metrics and the variant-ladder experiment.

Metrics: exact-set-match rate ("correct") plus micro-averaged precision,
recall and F1 — overall and per gold-cardinality bucket (single, double,
triple). Cardinalities 0, 4 and 5 fall outside the buckets but still
count in the overall scores.

The experiment runner generates a corpus, splits it, trains once, then
evaluates every requested variant on the identical test split:
retrieval-free scoring, prompt-concatenation with one or two retrieved
narratives, and fused retrieval with the full auxiliary set.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .diagnose import predict_local
from .errors import EmptyPairs
from .preprocess import fit_preprocess
from .remote import RemoteBackendConfig, predict_remote
from .retrieval import VectorIndex, build_index, retrieve
from .synthetic import GeneratorConfig, generate_synthetic, split_corpus
from .training import TrainConfig, TrainableModel, train

REPORT_FORMAT_VERSION = 1

VARIANT_NO_RAG = "no-rag"
VARIANT_RAG_1 = "rag-1"
VARIANT_RAG_2 = "rag-2"
VARIANT_BRAINS = "brains-k5"
ALL_VARIANTS = (VARIANT_NO_RAG, VARIANT_RAG_1, VARIANT_RAG_2, VARIANT_BRAINS)

BUCKETS = ("single", "double", "triple")


def cardinality_bucket(gold: frozenset) -> str:
    return {1: "single", 2: "double", 3: "triple"}.get(len(gold), "other")


@dataclass(frozen=True)
class BucketMetrics:
    precision: float
    recall: float
    f1: float
    count: int


@dataclass(frozen=True)
class MetricsReport:
    correct: float
    precision: float
    recall: float
    f1: float
    total: int
    buckets: dict


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def compute_metrics(pairs: Sequence[tuple]) -> MetricsReport:
    """`pairs` is a sequence of (decided label set, gold label set)."""
    if not pairs:
        raise EmptyPairs("metrics require at least one prediction pair")

    exact = 0
    counts = {scope: [0, 0, 0] for scope in ("overall",) + BUCKETS}  # tp, fp, fn
    bucket_counts = {name: 0 for name in BUCKETS + ("other",)}

    for decided, gold in pairs:
        decided, gold = frozenset(decided), frozenset(gold)
        if decided == gold:
            exact += 1
        tp = len(decided & gold)
        fp = len(decided - gold)
        fn = len(gold - decided)
        bucket = cardinality_bucket(gold)
        bucket_counts[bucket] += 1
        for scope in ("overall", bucket) if bucket != "other" else ("overall",):
            counts[scope][0] += tp
            counts[scope][1] += fp
            counts[scope][2] += fn

    precision, recall, f1 = _prf(*counts["overall"])
    buckets = {}
    for name in BUCKETS:
        p, r, b_f1 = _prf(*counts[name])
        buckets[name] = BucketMetrics(
            precision=p, recall=r, f1=b_f1, count=bucket_counts[name]
        )
    buckets["other"] = BucketMetrics(0.0, 0.0, 0.0, bucket_counts["other"])
    return MetricsReport(
        correct=exact / len(pairs),
        precision=precision,
        recall=recall,
        f1=f1,
        total=len(pairs),
        buckets=buckets,
    )


# --------------------------------------------------------------------------
# Experiment runner
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    variants: tuple = ALL_VARIANTS
    corpus_seed: int = 42
    corpus_size: int = 2000
    ratios: tuple = (0.8, 0.1, 0.1)
    generator: Optional[GeneratorConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    d: int = 64
    d_k: int = 64
    remote_url: Optional[str] = None
    output_path: Optional[str] = None

    def resolved_generator(self) -> GeneratorConfig:
        if self.generator is not None:
            return self.generator
        return GeneratorConfig(n=self.corpus_size)

    def digest(self) -> str:
        doc = {
            "variants": list(self.variants),
            "corpus_seed": self.corpus_seed,
            "corpus_size": self.corpus_size,
            "ratios": list(self.ratios),
            "generator": vars(self.resolved_generator()),
            "train": self.train.to_dict(),
            "d": self.d,
            "d_k": self.d_k,
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def _metrics_to_dict(metrics: MetricsReport) -> dict:
    out = {
        "overall": {"correct": metrics.correct, "f1": metrics.f1},
        "bucket_counts": {
            name: metrics.buckets[name].count for name in BUCKETS + ("other",)
        },
    }
    for name in BUCKETS:
        b = metrics.buckets[name]
        out[name] = {"p": b.precision, "r": b.recall, "f1": b.f1}
    return out


def run_experiment(cfg: ExperimentConfig, log=sys.stderr) -> dict:
    """Run the ladder and return the machine-readable report.

    Per-variant wall time goes to the log stream; the report itself
    carries only deterministic content so identical configs produce
    byte-identical JSON.
    """
    unknown = [v for v in cfg.variants if v not in ALL_VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants: {unknown}")
    if not cfg.variants:
        raise ValueError("at least one variant is required")

    started = time.monotonic()
    records = generate_synthetic(cfg.resolved_generator(), cfg.corpus_seed)
    train_split, val_split, test_split = split_corpus(
        records, cfg.ratios, seed=cfg.corpus_seed
    )
    stats = fit_preprocess(train_split)
    model = TrainableModel.init(
        d=cfg.d, d_k=cfg.d_k, seed=cfg.train.seed,
        reranker_trainable=cfg.train.unfreeze_reranker,
    )
    index = build_index(train_split, model.encoder, stats)
    checkpoint, history = train(train_split, val_split, cfg.train, index, stats, model)
    print(
        f"[experiment] corpus={cfg.corpus_size} seed={cfg.corpus_seed} "
        f"trained {cfg.train.epochs} epochs in {time.monotonic() - started:.1f}s",
        file=log,
    )

    case_store = {r.case.id: r for r in train_split}
    golds = [frozenset(r.labels) for r in test_split]

    remote_client = None
    remote_base = cfg.remote_url
    needs_remote = any(v in (VARIANT_RAG_1, VARIANT_RAG_2) for v in cfg.variants)
    if needs_remote and remote_base is None:
        from fastapi.testclient import TestClient
        from .stubllm import create_stub_app

        remote_client = TestClient(create_stub_app())
        remote_base = "http://testserver"

    variants_out = []
    for name in cfg.variants:
        t0 = time.monotonic()
        entry: dict = {"name": name}
        try:
            decided = _run_variant(
                name, cfg, checkpoint, index, case_store, test_split,
                remote_base, remote_client,
            )
            metrics = compute_metrics(list(zip(decided, golds)))
            entry.update(_metrics_to_dict(metrics))
        except Exception as exc:  # partial report, not abort
            entry["failure"] = f"{type(exc).__name__}: {exc}"
        print(
            f"[experiment] variant={name} wall_ms="
            f"{int((time.monotonic() - t0) * 1000)}",
            file=log,
        )
        variants_out.append(entry)

    test_ids = ",".join(r.case.id for r in test_split)
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "averaging": "micro",
        "config_digest": cfg.digest(),
        "corpus": {"seed": cfg.corpus_seed, "size": cfg.corpus_size},
        "split": {
            "ratios": list(cfg.ratios),
            "sizes": {
                "train": len(train_split),
                "val": len(val_split),
                "test": len(test_split),
            },
            "test_ids_digest": hashlib.sha256(test_ids.encode()).hexdigest(),
        },
        "checkpoint_digest": checkpoint.digest(),
        "final_train_loss": history[-1]["train_loss"] if history else None,
        "variants": variants_out,
    }
    if cfg.output_path:
        write_report(report, cfg.output_path)
    return report


def _run_variant(
    name, cfg, checkpoint, index, case_store, test_split, remote_base, remote_client
):
    decided = []
    if name == VARIANT_NO_RAG:
        empty = VectorIndex(cfg.d)
        for record in test_split:
            decided.append(predict_local(record, checkpoint, empty, case_store).decided)
    elif name == VARIANT_BRAINS:
        for record in test_split:
            decided.append(
                predict_local(record, checkpoint, index, case_store, k=5).decided
            )
    else:
        concat = 1 if name == VARIANT_RAG_1 else 2
        backend = RemoteBackendConfig(base_url=remote_base, concat_cases=concat)
        for record in test_split:
            retrieved = retrieve(
                record, index, checkpoint.encoder, checkpoint.stats,
                checkpoint.reranker, k=max(concat, 1),
            )
            report = predict_remote(
                record, retrieved, backend, case_store, client=remote_client
            )
            decided.append(report.decided)
    return decided


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n")


def format_table(report: dict) -> str:
    """Aligned text table mirroring the ladder layout: overall correct
    and F1, then micro p/r/f1 per cardinality bucket."""
    header = (
        f"{'model':<12} {'correct':>8} {'f1':>7} "
        f"{'sgl-p':>7} {'sgl-r':>7} {'sgl-f1':>7} "
        f"{'dbl-p':>7} {'dbl-r':>7} {'dbl-f1':>7} "
        f"{'tpl-p':>7} {'tpl-r':>7} {'tpl-f1':>7}"
    )
    lines = [header, "-" * len(header)]
    for entry in report["variants"]:
        if "failure" in entry:
            lines.append(f"{entry['name']:<12} FAILED: {entry['failure']}")
            continue
        cells = [
            f"{entry['name']:<12}",
            f"{entry['overall']['correct']:>8.3f}",
            f"{entry['overall']['f1']:>7.3f}",
        ]
        for bucket in BUCKETS:
            b = entry[bucket]
            cells += [f"{b['p']:>7.3f}", f"{b['r']:>7.3f}", f"{b['f1']:>7.3f}"]
        lines.append(" ".join(cells))
    return "\n".join(lines)
