"""Batch-mode command-line entry points.

Subcommands wire corpus construction, adapter pre-training, and the
evaluation harness together under deterministic seeds. Every command
writes a JSON report (with its fully resolved configuration and input
fingerprints), a delimited metrics file, and figures where the output
has a natural picture; given identical seeds and inputs, every emitted
byte is identical across runs. Wall-clock timing goes to stdout only.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import report as rpt
from .checkpoint import load_checkpoint, save_checkpoint
from .configfile import (MODEL_KEYS, parse_config_file, resolve_model_config,
                         resolve_train_config)
from .corpus import (Instance, balance_low_frequency, compute_stats,
                     filter_pairs, read_instances, read_synsets,
                     write_instances, write_synsets)
from .errors import (DataError, InvalidSpanError, NumericError, SynAdaptError,
                     UsageError)
from .evalsuite import (ambiguity_probe, clustering_scores, embed_instances,
                        hac_cluster, holdout_split, retrieval_acc_at_k,
                        uid_gold_clustering)
from .gradcheck import full_model_gradcheck
from .model import Backbone, EncoderBundle
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .trainer import continual_train, derive_seed, train_adapter
from .vocab import Vocabulary

GRADCHECK_TOLERANCE = 1e-5


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    report_path: str | None = None


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through UsageError (exit 1)."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="synadapt",
                     description="contextual synonym adapters: corpus, "
                                 "training, and evaluation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build-corpus", help="construct a marked-span corpus")
    p_build.add_argument("--out", required=True, help="output directory")
    p_build.add_argument("--synthetic", help="generator spec NxSxC "
                                             "(synsets x surfaces x contexts)")
    p_build.add_argument("--ambiguous-fraction", type=float, default=0.0)
    p_build.add_argument("--instances", help="existing instance JSONL")
    p_build.add_argument("--synsets", help="existing synset JSONL")
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--min-edit", type=int, default=10)
    p_build.add_argument("--cap-per-uid", type=int, default=50)
    p_build.add_argument("--balance-quantile", type=float, default=0.2)
    p_build.add_argument("--balance-prob", type=float, default=0.5)
    p_build.set_defaults(func=cmd_build_corpus)

    p_train = sub.add_parser("pretrain", help="train one domain adapter")
    p_train.add_argument("--corpus", required=True, help="build-corpus output dir")
    p_train.add_argument("--domain", default="general")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--checkpoint", help="existing checkpoint to extend "
                                              "with a new domain")
    p_train.add_argument("--resume", help="checkpoint with saved training "
                                          "state to continue")
    p_train.set_defaults(func=cmd_pretrain)

    p_eval = sub.add_parser("eval", help="evaluation harness")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_ret = eval_sub.add_parser("retrieval", help="held-out same-uid Acc@k")
    _add_eval_common(p_ret)
    p_ret.add_argument("--k", type=int, default=5)
    p_ret.add_argument("--holdout-fraction", type=float, default=0.2)
    p_ret.set_defaults(func=cmd_eval_retrieval)

    p_canon = eval_sub.add_parser("canonicalize",
                                  help="agglomerative clustering vs uid gold")
    _add_eval_common(p_canon)
    p_canon.add_argument("--linkage", default="average",
                         choices=["single", "complete", "average"])
    p_canon.add_argument("--threshold", type=float, default=0.5)
    p_canon.set_defaults(func=cmd_eval_canonicalize)

    p_probe = eval_sub.add_parser("probe", help="context-ambiguity margin")
    _add_eval_common(p_probe)
    p_probe.set_defaults(func=cmd_eval_probe)

    p_grad = eval_sub.add_parser("gradcheck",
                                 help="finite-difference gradient audit")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out", required=True)
    p_grad.set_defaults(func=cmd_eval_gradcheck)

    return parser


def _add_eval_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--domain", default="general")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


# ---------------------------------------------------------------------------
# helpers


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus_dir(corpus_dir: str):
    base = Path(corpus_dir)
    vocab_path = base / "vocab.json"
    inst_path = base / "instances.jsonl"
    if not vocab_path.exists() or not inst_path.exists():
        raise DataError(f"{corpus_dir} is not a corpus directory "
                        "(expected vocab.json and instances.jsonl)")
    vocab = Vocabulary.load(vocab_path)
    instances = read_instances(inst_path, vocab)
    if not instances:
        raise DataError(f"{inst_path} holds no instances")
    return vocab, instances, rpt.file_sha256(inst_path)


def _load_bundle(path: str):
    if not Path(path).exists():
        raise DataError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def _write_reports(out: Path, name: str, payload: dict) -> Path:
    json_path = rpt.write_json(out / f"{name}.json", payload)
    rpt.write_csv(out / f"{name}.csv", payload)
    return json_path


# ---------------------------------------------------------------------------
# build-corpus


def cmd_build_corpus(args) -> CommandResult:
    out = _outdir(args.out)
    if bool(args.synthetic) == bool(args.instances):
        raise UsageError("give exactly one of --synthetic or --instances/--synsets")

    if args.synthetic:
        spec = SyntheticSpec.parse(args.synthetic, args.ambiguous_fraction)
        synsets, instances, vocab = generate_synthetic_corpus(spec, args.seed)
        source = {"synthetic": args.synthetic,
                  "ambiguous_fraction": args.ambiguous_fraction}
        retained_pairs = None
    else:
        if not args.synsets:
            raise UsageError("--instances requires --synsets")
        synsets = read_synsets(args.synsets)
        vocab = Vocabulary()
        instances = _ingest_instances(args.instances, vocab)
        surface_pairs = [
            (a, b, uid)
            for uid, synset in synsets.items()
            for i, a in enumerate(synset.surfaces)
            for b in synset.surfaces[i + 1:]
        ]
        kept = filter_pairs(surface_pairs, min_edit=args.min_edit,
                            cap_per_uid=args.cap_per_uid, rng_seed=args.seed)
        retained_pairs = len(kept)
        counts: dict[str, int] = {}
        for inst in instances:
            key = inst.surface(vocab)
            counts[key] = counts.get(key, 0) + 1
        instances = balance_low_frequency(
            instances, synsets, counts, quantile=args.balance_quantile,
            rng_seed=derive_seed(args.seed, "balance"), vocab=vocab,
            replace_prob=args.balance_prob)
        source = {"instances": Path(args.instances).name,
                  "synsets": Path(args.synsets).name}

    write_instances(out / "instances.jsonl", instances, vocab)
    write_synsets(out / "synsets.jsonl", synsets)
    vocab.save(out / "vocab.json")
    stats = compute_stats(instances, vocab)
    rpt.write_json(out / "stats.json", stats.to_dict())

    lengths = [float(len(inst.tokens) - 2) for inst in instances]
    rpt.save_figure(rpt.histogram_figure(lengths, "sentence lengths",
                                         "tokens per sentence"),
                    out / "sentence_lengths.png")

    payload = {
        "command": "build-corpus",
        "config": {
            "source": source,
            "seed": args.seed,
            "min_edit": args.min_edit,
            "cap_per_uid": args.cap_per_uid,
            "balance_quantile": args.balance_quantile,
            "balance_prob": args.balance_prob,
        },
        "stats": stats.to_dict(),
        "instance_count": len(instances),
        "synset_count": len(synsets),
        "vocab_size": len(vocab),
        "retained_synonym_pairs": retained_pairs,
        "corpus_fingerprint": rpt.file_sha256(out / "instances.jsonl"),
        "outputs": ["instances.jsonl", "synsets.jsonl", "vocab.json",
                    "stats.json", "stats.csv", "sentence_lengths.png"],
    }
    rpt.write_csv(out / "stats.csv", stats.to_dict())
    report_path = _write_reports(out, "build_report", payload)
    return CommandResult(0, f"built corpus with {len(instances)} instances "
                            f"over {len(synsets)} synsets -> {out}",
                         str(report_path))


def _ingest_instances(path: str, vocab: Vocabulary):
    """Read raw instance JSONL while growing the vocabulary."""
    instances = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tokens = tuple(vocab.add(t) for t in obj["tokens"])
            instances.append(Instance(uid=obj["uid"], tokens=tokens,
                                      p_s=int(obj["p_s"]), p_e=int(obj["p_e"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                InvalidSpanError) as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return instances


# ---------------------------------------------------------------------------
# pretrain


def cmd_pretrain(args) -> CommandResult:
    out = _outdir(args.out)
    vocab, instances, fingerprint = _load_corpus_dir(args.corpus)
    overrides = parse_config_file(args.config) if args.config else {}
    train_cfg = resolve_train_config(overrides, rng_seed=args.seed)

    if args.resume and args.checkpoint:
        raise UsageError("--resume and --checkpoint are mutually exclusive")

    started = time.perf_counter()
    if args.resume:
        bundle, state, saved_domain = _load_bundle(args.resume)
        if state is None:
            raise DataError(f"{args.resume} holds no training state to resume")
        domain = saved_domain or args.domain
        _check_model_overrides(overrides, bundle)
        train_report, state = train_adapter(
            bundle.backbone, bundle.adapter_for(domain),
            bundle.aggregator_for(domain), instances, train_cfg, state=state)
    elif args.checkpoint:
        bundle, _, _ = _load_bundle(args.checkpoint)
        _check_model_overrides(overrides, bundle)
        domain = args.domain
        train_report, state = continual_train(bundle, domain, instances, train_cfg)
    else:
        model_cfg = resolve_model_config(overrides, vocab_size=len(vocab))
        bundle = EncoderBundle(config=model_cfg,
                               backbone=Backbone(model_cfg,
                                                 seed=derive_seed(args.seed,
                                                                  "backbone")))
        domain = args.domain
        train_report, state = continual_train(bundle, domain, instances, train_cfg)
    wall = time.perf_counter() - started

    ckpt_path = out / "checkpoint.ckpt"
    save_checkpoint(ckpt_path, bundle, training=state, training_domain=domain)
    rpt.save_figure(rpt.loss_curve_figure(train_report.epoch_mean_losses,
                                          f"pre-training loss ({domain})"),
                    out / "loss_curve.png")
    payload = {
        "command": "pretrain",
        "config": {
            "domain": domain,
            "seed": args.seed,
            "train": train_cfg.to_dict(),
            "model": bundle.config.to_dict(),
            "corpus": Path(args.corpus).name,
        },
        "corpus_fingerprint": fingerprint,
        "train_report": train_report.to_dict(),
        "outputs": ["checkpoint.ckpt", "loss_curve.png"],
    }
    report_path = _write_reports(out, "train_report", payload)
    losses = ", ".join(f"{x:.4f}" for x in train_report.epoch_mean_losses)
    return CommandResult(0, f"trained {domain!r} for {train_cfg.epochs} epochs "
                            f"in {wall:.1f}s (mean loss per epoch: {losses})",
                         str(report_path))


def _check_model_overrides(overrides: dict, bundle: EncoderBundle) -> None:
    saved = bundle.config.to_dict()
    for key in MODEL_KEYS:
        if key in overrides:
            given = (list(overrides[key]) if key == "adapter_positions"
                     else overrides[key])
            if saved.get(key) != given:
                raise DataError(
                    f"config key {key}={given} conflicts with checkpoint "
                    f"value {saved.get(key)}")


# ---------------------------------------------------------------------------
# eval subcommands


def cmd_eval_retrieval(args) -> CommandResult:
    out = _outdir(args.out)
    bundle, _, _ = _load_bundle(args.checkpoint)
    _vocab, instances, fingerprint = _load_corpus_dir(args.corpus)
    candidates_insts, query_insts = holdout_split(instances,
                                                  args.holdout_fraction,
                                                  rng_seed=args.seed)
    if not query_insts:
        raise DataError("holdout split produced no queries "
                        "(every uid is a singleton)")
    queries = embed_instances(bundle, query_insts, "pretrain-pooled", args.domain)
    candidates = embed_instances(bundle, candidates_insts, "pretrain-pooled",
                                 args.domain)
    acc = {str(k): retrieval_acc_at_k(queries, candidates, k)
           for k in range(1, args.k + 1)}
    payload = {
        "command": "eval-retrieval",
        "config": {"domain": args.domain, "k": args.k,
                   "holdout_fraction": args.holdout_fraction, "seed": args.seed,
                   "corpus": Path(args.corpus).name,
                   "checkpoint": Path(args.checkpoint).name},
        "corpus_fingerprint": fingerprint,
        "n_queries": len(query_insts),
        "n_candidates": len(candidates_insts),
        "acc_at_k": acc,
    }
    rpt.save_figure(rpt.bar_figure([f"acc@{k}" for k in acc], list(acc.values()),
                                   "held-out same-uid retrieval", "accuracy"),
                    out / "retrieval.png")
    report_path = _write_reports(out, "retrieval_report", payload)
    return CommandResult(0, "retrieval " + " ".join(
        f"acc@{k}={v:.3f}" for k, v in acc.items()), str(report_path))


def cmd_eval_canonicalize(args) -> CommandResult:
    out = _outdir(args.out)
    bundle, _, _ = _load_bundle(args.checkpoint)
    _vocab, instances, fingerprint = _load_corpus_dir(args.corpus)
    embeddings = embed_instances(bundle, instances, "pretrain-pooled", args.domain)
    pred = hac_cluster(embeddings.vectors, linkage=args.linkage,
                       distance_threshold=args.threshold)
    gold = uid_gold_clustering(embeddings.uids)
    macro_f1, micro_f1, details = clustering_scores(pred, gold)
    payload = {
        "command": "eval-canonicalize",
        "config": {"domain": args.domain, "linkage": args.linkage,
                   "threshold": args.threshold, "seed": args.seed,
                   "corpus": Path(args.corpus).name,
                   "checkpoint": Path(args.checkpoint).name},
        "corpus_fingerprint": fingerprint,
        "n_items": len(instances),
        "n_predicted_clusters": len(pred.clusters),
        "n_gold_clusters": len(gold.clusters),
        "macro_f1": macro_f1,
        "micro_f1": micro_f1,
        **details,
    }
    rpt.save_figure(rpt.bar_figure(["macro F1", "micro F1"],
                                   [macro_f1, micro_f1],
                                   "canonicalization vs uid gold", "score"),
                    out / "canonicalize.png")
    report_path = _write_reports(out, "canonicalize_report", payload)
    return CommandResult(0, f"canonicalization macro_f1={macro_f1:.3f} "
                            f"micro_f1={micro_f1:.3f} "
                            f"({len(pred.clusters)} clusters)", str(report_path))


def cmd_eval_probe(args) -> CommandResult:
    out = _outdir(args.out)
    bundle, _, _ = _load_bundle(args.checkpoint)
    _vocab, instances, fingerprint = _load_corpus_dir(args.corpus)
    probe = ambiguity_probe(bundle, instances, args.domain)
    payload = {
        "command": "eval-probe",
        "config": {"domain": args.domain, "seed": args.seed,
                   "corpus": Path(args.corpus).name,
                   "checkpoint": Path(args.checkpoint).name},
        "corpus_fingerprint": fingerprint,
        **probe,
    }
    rpt.save_figure(rpt.bar_figure(
        ["same uid\n(diff context)", "same surface\n(diff uid)"],
        [probe["same_uid_mean_cosine"],
         probe["shared_surface_cross_uid_mean_cosine"]],
        "context disambiguation probe", "mean cosine"), out / "probe.png")
    report_path = _write_reports(out, "probe_report", payload)
    return CommandResult(0, f"probe margin={probe['margin']:.3f}",
                         str(report_path))


def cmd_eval_gradcheck(args) -> CommandResult:
    out = _outdir(args.out)
    max_err = float(full_model_gradcheck(seed=args.seed))
    passed = bool(max_err <= GRADCHECK_TOLERANCE)
    payload = {
        "command": "eval-gradcheck",
        "config": {"seed": args.seed, "tolerance": GRADCHECK_TOLERANCE},
        "max_relative_error": max_err,
        "passed": passed,
    }
    report_path = _write_reports(out, "gradcheck_report", payload)
    summary = (f"gradient check max relative error {max_err:.2e} "
               f"({'PASS' if passed else 'FAIL'} at {GRADCHECK_TOLERANCE:.0e})")
    if not passed:
        raise NumericError(summary)
    return CommandResult(0, summary, str(report_path))


# ---------------------------------------------------------------------------
# entry point


def run(argv: list[str] | None = None) -> CommandResult:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def main(argv: list[str] | None = None) -> int:
    try:
        result = run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, SynAdaptError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
