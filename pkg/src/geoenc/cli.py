"""`geo` command line: generate, chunk, train, sweep, evaluate, rerank, analyze.

Every artifact-producing subcommand writes one run manifest beside its
outputs (command line, resolved config, input digests, wall-clock). All
randomness flows from --seed; evaluation reports contain deterministic
fields only so identical recipes give byte-identical report files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import __version__
from .checkpoint import TrainedModel, load_checkpoint, save_checkpoint
from .corpus import GeneratorConfig, generate_corpus, load_jsonl, save_jsonl, stats
from .encoder import EncoderConfig
from .errors import GeoError
from .evaluator import (
    attention_report,
    class_mean_entropy,
    entropy_by_category,
    evaluate,
    rerank,
    spearman,
)
from .taxonomy import GENERAL, SPECIFIC, chunk, coarse_chunk, load_taxonomy
from .trainer import TrainConfig, sweep_gamma, train

CHECKPOINT_NAME = "ckpt.geoenc"

_ENCODER_KEYS = ("d_model", "n_layers", "n_heads", "d_out", "max_len")
_TRAIN_KEYS = (
    "base_lr", "gamma", "batch_size", "max_epochs", "early_stop_patience",
    "weight_decay", "seed", "fusion", "chunk_scheme", "attn_init",
)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_path: str, args, config: dict, inputs: list[str],
                    outputs: list[str], started: float, extra: dict | None = None):
    if os.path.isdir(out_path):
        manifest_path = os.path.join(out_path, "manifest.json")
    else:
        manifest_path = out_path + ".manifest.json"
    manifest = {
        "command": sys.argv if sys.argv else [],
        "resolved_config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "outputs": outputs,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    if extra:
        manifest.update(extra)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)


def _resolve_config(args) -> dict:
    """Precedence: CLI flag > config file > built-in default."""
    config = TrainConfig().to_dict()
    config.update({k: getattr(EncoderConfig(), k) for k in _ENCODER_KEYS})
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(config)
        if unknown:
            raise GeoError(f"unknown config keys: {sorted(unknown)}")
        config.update(file_cfg)
    for key in list(config):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _split_config(config: dict) -> tuple[TrainConfig, EncoderConfig]:
    train_cfg = TrainConfig.from_dict({k: config[k] for k in _TRAIN_KEYS})
    enc_cfg = EncoderConfig(**{k: config[k] for k in _ENCODER_KEYS})
    return train_cfg, enc_cfg


def _checkpoint_path(path: str) -> str:
    if os.path.isdir(path):
        path = os.path.join(path, CHECKPOINT_NAME)
    if not os.path.exists(path):
        raise GeoError(f"checkpoint not found: {path}")
    return path


def _cmd_generate(args) -> int:
    started = time.perf_counter()
    taxonomy = load_taxonomy(args.taxonomy)
    config = GeneratorConfig(
        seed=args.seed, n_queries=args.queries, n_candidates=args.candidates
    )
    instances = generate_corpus(config, taxonomy)
    save_jsonl(instances, args.out, taxonomy)
    s = stats(instances)
    _write_manifest(
        args.out, args,
        {"seed": args.seed, "n_queries": args.queries, "n_candidates": args.candidates},
        [args.taxonomy], [args.out], started,
        extra={"corpus_stats": s.__dict__},
    )
    print(f"wrote {s.n_queries} instances to {args.out} "
          f"(tokens={s.n_tokens}, asl={s.asl:.1f}, cands={s.cands})")
    return 0


def _cmd_chunk(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        with open(args.input, encoding="utf-8") as fh:
            for line in fh:
                text = line.rstrip("\n")
                ct = coarse_chunk(text) if args.scheme == "coarse" else chunk(text, taxonomy)
                names = taxonomy if args.scheme == "geo" else None
                record = {
                    "text": text,
                    "chunks": [
                        [c.start, c.end,
                         names.name_of(c.category_id) if names else str(c.category_id)]
                        for c in ct.chunks
                    ],
                }
                out.write(json.dumps(record, ensure_ascii=False) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_train(args) -> int:
    started = time.perf_counter()
    config = _resolve_config(args)
    train_cfg, enc_cfg = _split_config(config)
    taxonomy = load_taxonomy(args.taxonomy)
    train_set = load_jsonl(args.train, taxonomy)
    dev_set = load_jsonl(args.dev, taxonomy)
    trained, report = train(train_set, dev_set, train_cfg, enc_cfg, taxonomy)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    save_checkpoint(ckpt_path, trained)
    report_path = os.path.join(args.out, "train_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    curves_path = os.path.join(args.out, "curves.csv")
    with open(curves_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "loss_cls", "loss_u", "dev_hit1"])
        for e in report.epochs:
            writer.writerow([e.epoch, e.loss, e.loss_cls, e.loss_u, e.dev_hit1])
    _write_manifest(args.out, args, config, [args.train, args.dev, args.taxonomy],
                    [ckpt_path, report_path, curves_path], started)
    best = max(report.dev_curve())
    print(f"best dev Hit@1 {best:.4f} at epoch {report.best_epoch}; saved {ckpt_path}")
    return 0


def _cmd_sweep(args) -> int:
    started = time.perf_counter()
    config = _resolve_config(args)
    train_cfg, enc_cfg = _split_config(config)
    taxonomy = load_taxonomy(args.taxonomy)
    train_set = load_jsonl(args.train, taxonomy)
    dev_set = load_jsonl(args.dev, taxonomy)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    rows = sweep_gamma(train_set, dev_set, gammas, train_cfg, enc_cfg, taxonomy)
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "gamma_sweep.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["gamma", "best_dev_hit1", "best_epoch", "error"])
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(args.out, args, config, [args.train, args.dev, args.taxonomy],
                    [table_path], started)
    for row in rows:
        print(f"gamma={row['gamma']}: best dev Hit@1 {row['best_dev_hit1']}")
    return 0


def _cmd_evaluate(args) -> int:
    started = time.perf_counter()
    trained = load_checkpoint(_checkpoint_path(args.ckpt))
    taxonomy = load_taxonomy(args.taxonomy)
    test_set = load_jsonl(args.test, taxonomy)
    report = evaluate(test_set, trained)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.metrics_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, args, {"seed": None}, [args.test, args.taxonomy],
                    [args.out], started,
                    extra={"latency_ms_per_case": report.latency_ms_per_case})
    print(f"hit1={report.hit1:.4f} hit3={report.hit3:.4f} "
          f"ndcg1={report.ndcg1:.4f} mrr3={report.mrr3:.4f}")
    return 0


def _cmd_rerank(args) -> int:
    trained = load_checkpoint(_checkpoint_path(args.ckpt))
    with open(args.candidates, encoding="utf-8") as fh:
        candidates = [line.rstrip("\n") for line in fh if line.strip()]
    ranking = rerank(args.query, candidates, trained)
    for rank, (idx, score) in enumerate(ranking, start=1):
        print(f"{rank}\t{score:.6f}\t{candidates[idx]}")
    return 0


def _cmd_analyze(args) -> int:
    started = time.perf_counter()
    taxonomy = load_taxonomy(args.taxonomy)
    if args.what == "entropy":
        if not args.input:
            raise GeoError("analyze entropy requires --input")
        instances = load_jsonl(args.input, taxonomy)
        entropy = entropy_by_category(instances, taxonomy)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "class", "entropy_bits"])
            for cid in sorted(entropy):
                writer.writerow(
                    [taxonomy.name_of(cid), taxonomy.categories[cid].cls, entropy[cid]]
                )
        print(f"general mean {class_mean_entropy(entropy, taxonomy, GENERAL):.3f} bits, "
              f"specific mean {class_mean_entropy(entropy, taxonomy, SPECIFIC):.3f} bits")
        _write_manifest(args.out, args, {"seed": None}, [args.input], [args.out], started)
    elif args.what == "attention":
        if not args.ckpt:
            raise GeoError("analyze attention requires --ckpt")
        trained = load_checkpoint(_checkpoint_path(args.ckpt))
        rep = attention_report(trained, trained.taxonomy)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "weight"])
            for name, weight in rep.weights.items():
                writer.writerow([name, weight])
        print(f"general mean {rep.general_mean:.4f}, specific mean {rep.specific_mean:.4f}, "
              f"specific>general: {rep.specific_above_general}")
        _write_manifest(args.out, args, {"seed": None}, [], [args.out], started)
    else:  # correlate
        if not args.ckpt or not args.ckpt_b:
            raise GeoError("analyze correlate requires --ckpt and --ckpt-b")
        a = load_checkpoint(_checkpoint_path(args.ckpt))
        b = load_checkpoint(_checkpoint_path(args.ckpt_b))
        rho, p = spearman(a.attention.w, b.attention.w)
        result = {"spearman": rho, "p_value": p}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
        print(f"spearman={rho:.4f} p={p:.4g}")
        _write_manifest(args.out, args, {"seed": None}, [], [args.out], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--candidates", type=int, default=20)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("chunk", help="chunk raw address lines")
    p.add_argument("--input", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--scheme", choices=["geo", "coarse"], default="geo")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_chunk)

    for name, fn in (("train", _cmd_train), ("sweep", _cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} a model")
        p.add_argument("--config", default=None)
        p.add_argument("--train", required=True)
        p.add_argument("--dev", required=True)
        p.add_argument("--taxonomy", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--fusion", default=None)
        p.add_argument("--base-lr", dest="base_lr", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
        p.add_argument("--scheme", dest="chunk_scheme", choices=["geo", "coarse"],
                       default=None)
        if name == "sweep":
            p.add_argument("--gammas", required=True,
                           help="comma-separated gamma values")
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("rerank", help="rank candidates for one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--candidates", required=True, help="file with one candidate per line")
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("analyze", help="entropy / attention / correlate analyses")
    p.add_argument("what", choices=["entropy", "attention", "correlate"])
    p.add_argument("--input", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--ckpt-b", dest="ckpt_b", default=None)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except GeoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
