"""Command-line entry point: ``mtabsa synth|train|ensemble-train|predict|evaluate``.

Exit codes: 0 success, 2 config, 3 data, 4 divergence, 5 model/vocabulary
mismatch, 6 evaluation alignment.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import RunConfig
from .corpus import (
    SynthSpec,
    Vocabulary,
    build_vocabulary,
    generate_synthetic,
    labels_payload,
    load_dataset,
    save_dataset,
)
from .ensemble import (
    EnsembleModel,
    combine,
    ensemble_predict_dataset,
    load_ensemble,
    manifest_dict,
    member_filename,
    train_ensemble,
)
from .errors import ConfigError, DataError, ModelMismatchError, MtabsaError
from .io import atomic_write_text
from .metrics import align, decode_to_set, hamming_loss, jaccard_index, per_label_report, read_label_file
from .schema import CATEGORIES, POLARITIES
from .training import load_checkpoint, predict_dataset, save_checkpoint, train

log = logging.getLogger("mtabsa")

VOCAB_FILE = "vocab.tsv"


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, out_dir=args.out, format=args.format)


def _require_train_path(cfg: RunConfig) -> Path:
    if not cfg.train_path:
        raise ConfigError("config has no train_path")
    path = Path(cfg.train_path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    return path


def _run_meta(cfg: RunConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.config_hash(), "config": cfg.canonical(), **extra}


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.spec:
        try:
            obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"synthetic spec not found: {args.spec}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synthetic spec is not valid JSON: {exc.msg}") from None
        spec = SynthSpec.from_mapping(obj)
    else:
        spec = SynthSpec.table2(args.split)
    if not args.out:
        raise ConfigError("synth needs --out PATH")
    dataset = generate_synthetic(spec, seed=args.seed or 0)
    save_dataset(dataset, args.out)
    log.info("wrote %d reviews to %s", dataset.n, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    dataset = load_dataset(_require_train_path(cfg), split="train")
    out = Path(cfg.out_dir)
    vocab = build_vocabulary(dataset, min_count=cfg.min_count)
    start = time.perf_counter()
    ckpt, history = train(dataset, cfg.model_config(), cfg.train_config(), vocab=vocab)
    wall = time.perf_counter() - start
    vocab.save(out / VOCAB_FILE)
    save_checkpoint(ckpt, out / "model.ckpt")
    atomic_write_text(out / "history.json", _dump_json(history.as_dict()))
    atomic_write_text(out / "run.json", _dump_json(_run_meta(cfg, member_dims=[ckpt.config.embed_dim])))
    atomic_write_text(out / "timing.json", _dump_json({"train_wall_time_s": wall}))
    log.info("trained in %.1fs; artifacts in %s", wall, out)
    return 0


def cmd_ensemble_train(args) -> int:
    cfg = _load_run_config(args)
    dataset = load_dataset(_require_train_path(cfg), split="train")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists():
        manifest.unlink()
    vocab = build_vocabulary(dataset, min_count=cfg.min_count)
    vocab.save(out / VOCAB_FILE)
    ens_cfg = cfg.ensemble_config()

    def on_member(index, ckpt, history):
        save_checkpoint(ckpt, out / member_filename(index, ckpt.config.embed_dim))
        atomic_write_text(out / f"history_{index}.json", _dump_json(history.as_dict()))
        log.info("member %d (d=%d) done", index, ckpt.config.embed_dim)

    start = time.perf_counter()
    model = train_ensemble(
        dataset, ens_cfg, cfg.model_config(), vocab=vocab, on_member=on_member
    )
    wall = time.perf_counter() - start
    paths = [member_filename(i, m.config.embed_dim) for i, m in enumerate(model.members)]
    extra = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    atomic_write_text(out / "timing.json", _dump_json({"train_wall_time_s": wall}))
    atomic_write_text(manifest, json.dumps(manifest_dict(model, paths, extra), indent=2, sort_keys=True) + "\n")
    log.info("ensemble trained in %.1fs; manifest %s", wall, manifest)
    return 0


def _load_model(model_path: Path, vocab_path: Path | None):
    vocab_path = vocab_path or model_path.parent / VOCAB_FILE
    vocab = Vocabulary.load(vocab_path)
    if model_path.suffix == ".json":
        return load_ensemble(model_path, vocab=vocab)
    return load_checkpoint(model_path, vocab=vocab)


def _head_votes(member_probs, voting):
    """Audit record for one review: member votes and the winner per head."""
    classes = member_probs.argmax(axis=-1)  # (M, H)
    winners = combine(member_probs, voting)
    heads = {}
    for h, cat in enumerate(CATEGORIES):
        votes = [POLARITIES[c] for c in classes[:, h]]
        heads[cat] = {
            "votes": votes,
            "winner": POLARITIES[winners[h]],
            "soft_fallback": voting == "hard" and len(set(votes)) == len(votes) > 1,
        }
    return heads


def cmd_predict(args) -> int:
    if not args.model or not args.data or not args.pred_out:
        raise ConfigError("predict needs --model, --data and --pred-out")
    model = _load_model(Path(args.model), Path(args.vocab) if args.vocab else None)
    dataset = load_dataset(args.data)
    if isinstance(model, EnsembleModel):
        sets, member_probs = ensemble_predict_dataset(model, dataset)
        voting = model.config.voting
    else:
        voting = "hard"
        probs = predict_dataset(model, dataset)
        sets = [decode_to_set(p) for p in probs]
        member_probs = probs[None]
    lines = [
        json.dumps({"id": r.id, "labels": labels_payload(s)}, ensure_ascii=False) + "\n"
        for r, s in zip(dataset, sets)
    ]
    atomic_write_text(args.pred_out, "".join(lines))
    if args.audit:
        audit = [
            json.dumps({"id": r.id, "heads": _head_votes(member_probs[:, i], voting)}, ensure_ascii=False) + "\n"
            for i, r in enumerate(dataset)
        ]
        atomic_write_text(str(args.pred_out) + ".audit.jsonl", "".join(audit))
    return 0


def _model_metadata(model_path: Path) -> dict:
    if model_path.suffix == ".json":
        doc = json.loads(model_path.read_text(encoding="utf-8"))
        return {
            "seed": doc.get("seed"),
            "config_hash": doc.get("config_hash"),
            "member_dims": [m["embed_dim"] for m in doc["members"]],
            "voting": doc["voting"],
        }
    ckpt = load_checkpoint(model_path)
    meta = {"seed": None, "config_hash": None, "member_dims": [ckpt.config.embed_dim], "voting": None}
    run = model_path.parent / "run.json"
    if run.is_file():
        doc = json.loads(run.read_text(encoding="utf-8"))
        meta.update(seed=doc.get("seed"), config_hash=doc.get("config_hash"))
    return meta


def build_report(pred_path, gold_path, model_path=None) -> dict:
    pairs = align(read_label_file(pred_path), read_label_file(gold_path))
    return {
        "n": pairs.n,
        "jaccard_index": jaccard_index(pairs),
        "hamming_loss": hamming_loss(pairs),
        "per_label": [row.as_dict() for row in per_label_report(pairs)],
        "metadata": _model_metadata(Path(model_path)) if model_path else {},
    }


def format_text_report(report: dict) -> str:
    lines = [
        f"samples        {report['n']}",
        f"jaccard_index  {report['jaccard_index']!r}",
        f"hamming_loss   {report['hamming_loss']!r}",
    ]
    for key, value in sorted(report["metadata"].items()):
        lines.append(f"{key:<14} {value}")
    lines.append("")
    lines.append(f"{'category':<12} {'polarity':<9} {'prec':>7} {'recall':>7} {'f1':>7} {'support':>7}")
    for row in report["per_label"]:
        flag = "*" if row["precision_undefined"] or row["recall_undefined"] else " "
        lines.append(
            f"{row['category']:<12} {row['polarity']:<9} {row['precision']:7.4f} "
            f"{row['recall']:7.4f} {row['f1']:7.4f} {row['support']:7d}{flag}"
        )
    lines.append("* undefined ratio reported as 0")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    if not args.pred or not args.gold:
        raise ConfigError("evaluate needs --pred and --gold")
    if args.model and not Path(args.model).is_file():
        raise ModelMismatchError(f"model file not found: {args.model}")
    report = build_report(args.pred, args.gold, args.model)
    fmt = args.format or "text"
    text = _dump_json(report) if fmt == "json" else format_text_report(report)
    if args.report_out:
        atomic_write_text(args.report_out, text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file")
    common.add_argument("--seed", type=int, default=None, help="master seed (member i uses seed + i)")
    common.add_argument("--out", metavar="PATH", help="output directory (synth: output file)")
    common.add_argument("--format", choices=("text", "json"), default=None)
    common.add_argument("--audit", action="store_true", help="predict: write per-member votes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mtabsa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mtabsa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a planted-keyword synthetic dataset")
    p.add_argument("--preset", choices=("table2",), default="table2")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--spec", metavar="PATH", help="JSON counts spec instead of the preset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ensemble-train", parents=[common], help="train the voting ensemble")
    p.set_defaults(func=cmd_ensemble_train)

    p = sub.add_parser("predict", parents=[common], help="label a dataset with a checkpoint or manifest")
    p.add_argument("--model", required=True, metavar="PATH", help="checkpoint file or manifest.json")
    p.add_argument("--data", required=True, metavar="PATH")
    p.add_argument("--vocab", metavar="PATH", help="defaults to vocab.tsv beside the model")
    p.add_argument("--pred-out", dest="pred_out", metavar="PATH", help="prediction JSONL (default: --out)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold labels")
    p.add_argument("--pred", required=True, metavar="PATH")
    p.add_argument("--gold", required=True, metavar="PATH")
    p.add_argument("--model", metavar="PATH", help="checkpoint or manifest, for report metadata")
    p.add_argument("--report-out", dest="report_out", metavar="PATH", help="also write the report here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "predict" and not args.pred_out:
        args.pred_out = args.out
    try:
        return args.func(args)
    except MtabsaError as exc:
        print(f"mtabsa {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
