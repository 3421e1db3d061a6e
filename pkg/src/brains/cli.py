"""Command-line interface.

Subcommands compose into the full pipeline: generate -> preprocess ->
index -> train -> eval, plus single-case screening and the HTTP server.
Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading

from . import config as config_mod
from .cases import (
    case_to_dict,
    labels_to_names,
    load_jsonl,
    make_record,
    validate_case,
    write_jsonl,
)
from .checkpoint import checkpoint_load, checkpoint_save
from .diagnose import predict_local
from .errors import (
    BackendHttpError,
    BackendTimeout,
    BrainsError,
    IoFailure,
)
from .evaluation import ALL_VARIANTS, ExperimentConfig, format_table, run_experiment
from .preprocess import fit_preprocess, load_stats, save_stats
from .retrieval import VectorIndex, build_index
from .synthetic import generate_synthetic, split_corpus
from .training import TrainableModel, train


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_floats(text: str, count: int, what: str) -> tuple:
    parts = text.split(",")
    if len(parts) != count:
        raise UsageError(f"{what} expects {count} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"{what} expects numbers, got {text!r}") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to the JSON config file")
    parser.add_argument("--seed", type=int, help="seed override")


def build_parser() -> Parser:
    parser = Parser(prog="brains", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", help="write a synthetic corpus as JSONL")
    _add_common(p)
    p.add_argument("--n", type=int, help="record count")
    p.add_argument("--out", required=True)
    p.add_argument("--mix", help="single,double,triple shares (e.g. 0.6,0.3,0.1)")
    p.add_argument("--noise", type=float)
    p.add_argument("--neighbor-frac", type=float,
                   help="fraction whose label signal lives only in neighbours")

    p = sub.add_parser("preprocess", help="fit normalization stats (optionally split)")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="stats JSON output path")
    p.add_argument("--split", help="write train/val/test files with these ratios")
    p.add_argument("--out-prefix", help="path prefix for split files")

    p = sub.add_parser("index", help="embed a corpus into a binary index file")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="reuse a checkpoint's encoder weights")

    p = sub.add_parser("train", help="train fusion + head, write a checkpoint")
    _add_common(p)
    p.add_argument("--corpus", required=True, help="training split JSONL")
    p.add_argument("--val", help="validation split JSONL")
    p.add_argument("--stats", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("eval", help="run the variant ladder on a synthetic corpus")
    _add_common(p)
    p.add_argument("--variants", help=f"comma list from {','.join(ALL_VARIANTS)}")
    p.add_argument("--out", help="report JSON output path")
    p.add_argument("--corpus-size", type=int)
    p.add_argument("--corpus-seed", type=int)
    p.add_argument("--remote-url", help="chat backend for rag variants")

    p = sub.add_parser("screen", help="score a single case")
    _add_common(p)
    p.add_argument("--case", help="JSON file with the case fields")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--corpus", help="JSONL corpus backing the index")
    p.add_argument("--k", type=int)
    p.add_argument("--url", help="POST to a running service instead of local scoring")
    for name in ("mmse", "age", "etiv", "nwbv", "education", "hippocampal-volume",
                 "amygdala-volume", "ventricular-volume", "temporal-thickness",
                 "wmh-load", "apoe-e4-count", "moca", "gds"):
        p.add_argument(f"--{name}", type=float, dest=name.replace("-", "_"))
    for name in ("id", "cdr", "gender", "handedness", "ses"):
        p.add_argument(f"--{name}", dest=name)

    p = sub.add_parser("serve", help="boot the HTTP service")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index")
    p.add_argument("--corpus")
    p.add_argument("--port", type=int)
    p.add_argument("--host")

    return parser


# --------------------------------------------------------------------------
# Command implementations
# --------------------------------------------------------------------------

def cmd_generate(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg["seed"]
    gen = config_mod.generator_config(cfg, n=args.n)
    if args.mix:
        gen = type(gen)(**{**vars(gen), "mix": _parse_floats(args.mix, 3, "--mix")})
    if args.noise is not None:
        gen = type(gen)(**{**vars(gen), "noise": args.noise})
    if args.neighbor_frac is not None:
        gen = type(gen)(**{**vars(gen), "neighbor_only_fraction": args.neighbor_frac})
    records = generate_synthetic(gen, seed)
    write_jsonl(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_preprocess(args, cfg) -> int:
    records = load_jsonl(args.corpus)
    if args.split:
        ratios = _parse_floats(args.split, 3, "--split")
        seed = args.seed if args.seed is not None else cfg["seed"]
        prefix = args.out_prefix or args.corpus.rsplit(".jsonl", 1)[0]
        train_split, val_split, test_split = split_corpus(records, ratios, seed)
        for part, split in (
            ("train", train_split), ("val", val_split), ("test", test_split)
        ):
            write_jsonl(split, f"{prefix}.{part}.jsonl")
            print(f"wrote {len(split)} records to {prefix}.{part}.jsonl")
        stats = fit_preprocess(train_split)
    else:
        stats = fit_preprocess(records)
    save_stats(stats, args.out)
    print(f"wrote stats to {args.out}")
    return 0


def cmd_index(args, cfg) -> int:
    records = load_jsonl(args.corpus)
    stats = load_stats(args.stats)
    if args.checkpoint:
        encoder = checkpoint_load(args.checkpoint).encoder
    else:
        seed = args.seed if args.seed is not None else cfg["seed"]
        model = TrainableModel.init(
            d=cfg["encoder"]["d"], d_k=cfg["fusion"]["d_k"], seed=seed
        )
        encoder = model.encoder
    index = build_index(records, encoder, stats)
    index.save(args.out)
    print(f"indexed {index.size} records into {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    train_split = load_jsonl(args.corpus)
    val_split = load_jsonl(args.val) if args.val else []
    stats = load_stats(args.stats)
    index = VectorIndex.load(args.index)
    tc = config_mod.train_config(cfg)
    if args.seed is not None:
        tc.seed = args.seed
    if args.epochs is not None:
        tc.epochs = args.epochs
    if args.lr is not None:
        tc.learning_rate = args.lr
    if args.batch_size is not None:
        tc.batch_size = args.batch_size
    model = TrainableModel.init(
        d=cfg["encoder"]["d"], d_k=cfg["fusion"]["d_k"], seed=tc.seed,
        reranker_trainable=tc.unfreeze_reranker,
    )
    checkpoint, history = train(train_split, val_split, tc, index, stats, model)
    for row in history:
        val = f"{row['val_loss']:.6f}" if row["val_loss"] is not None else "n/a"
        print(f"epoch {row['epoch']:>3}  train_loss {row['train_loss']:.6f}  val_loss {val}")
    checkpoint_save(checkpoint, args.out)
    print(f"wrote checkpoint {checkpoint.digest()[:12]} to {args.out}")
    return 0


def cmd_eval(args, cfg) -> int:
    exp = cfg["experiment"]
    variants = tuple(
        v.strip() for v in (args.variants or ",".join(exp["variants"])).split(",")
        if v.strip()
    )
    unknown = [v for v in variants if v not in ALL_VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants: {', '.join(unknown)}")
    corpus_size = args.corpus_size or int(exp["corpus_size"])
    corpus_seed = (
        args.corpus_seed if args.corpus_seed is not None
        else (args.seed if args.seed is not None else int(exp["corpus_seed"]))
    )
    econfig = ExperimentConfig(
        variants=variants,
        corpus_seed=corpus_seed,
        corpus_size=corpus_size,
        ratios=tuple(exp["ratios"]),
        generator=config_mod.generator_config(cfg, n=corpus_size),
        train=config_mod.train_config(cfg, section="experiment"),
        d=cfg["encoder"]["d"],
        d_k=cfg["fusion"]["d_k"],
        remote_url=args.remote_url or cfg["remote"]["base_url"],
        output_path=args.out,
    )
    report = run_experiment(econfig)
    print(format_table(report))
    if args.out:
        print(f"wrote report to {args.out}", file=sys.stderr)
    return 0


def _collect_case_fields(args) -> dict:
    if args.case:
        with open(args.case, "r", encoding="utf-8") as fh:
            return json.load(fh)
    raw = {}
    for name in ("id", "mmse", "cdr", "age", "etiv", "nwbv", "gender", "handedness",
                 "education", "ses", "hippocampal_volume", "amygdala_volume",
                 "ventricular_volume", "temporal_thickness", "wmh_load",
                 "apoe_e4_count", "moca", "gds"):
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    raw.setdefault("id", "query")
    return raw


def cmd_screen(args, cfg) -> int:
    raw = _collect_case_fields(args)

    if args.url:
        import httpx

        body = dict(raw)
        if args.k is not None:
            body["k"] = args.k
        response = httpx.post(args.url.rstrip("/") + "/v1/screen", json=body,
                              timeout=30.0)
        print(json.dumps(response.json(), indent=2, sort_keys=True))
        return 0 if response.status_code == 200 else 2

    if not args.checkpoint:
        raise UsageError("screen requires --checkpoint (or --url)")
    case = validate_case(raw)
    checkpoint = checkpoint_load(args.checkpoint)
    index = VectorIndex.load(args.index) if args.index else VectorIndex(checkpoint.encoder.d)
    records = {}
    if args.corpus:
        records = {r.case.id: r for r in load_jsonl(args.corpus)}
    report = predict_local(
        make_record(case, frozenset()), checkpoint, index, records, k=args.k
    )
    print(json.dumps({
        "request_id": case.id,
        "backend": report.backend,
        "scores": list(report.scores),
        "decided": labels_to_names(report.decided),
        "threshold": report.threshold,
        "no_evidence": report.no_evidence,
        "evidence": [
            {"id": e.id, "cosine": e.cosine, "rerank_score": e.rerank_score}
            for e in report.evidence
        ],
        "case": case_to_dict(case),
    }, indent=2, sort_keys=True))
    return 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    state = ServiceState()
    app = create_app(state, cfg)

    def _load():
        state.load(args.checkpoint, args.index, args.corpus)

    threading.Thread(target=_load, daemon=True).start()
    uvicorn.run(
        app,
        host=args.host or cfg["service"]["host"],
        port=args.port or cfg["service"]["port"],
        log_level="info",
    )
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "index": cmd_index,
    "train": cmd_train,
    "eval": cmd_eval,
    "screen": cmd_screen,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        cfg = config_mod.load_config(getattr(args, "config", None))
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (IoFailure, BackendTimeout, BackendHttpError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except BrainsError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
