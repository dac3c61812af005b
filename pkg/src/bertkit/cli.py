"""Command-line interface: corpus preprocessing through model comparison.

Subcommands mirror the pipeline stages: preprocess / stats -> build-vocab /
tokenize -> make-data -> pretrain / finetune -> inspect-model / embed ->
evaluate / anchor / sweep / reference-check.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import corpus, evaluate, pretrain_data, training, wordpiece
from .embeddings import PoolingPolicy, embed_sentence
from .model import ModelConfig, count_parameters
from .pretrain_data import MaskingPolicy
from .training import TrainConfig


def _load_records(args) -> list[corpus.RawRecord]:
    path = Path(args.input)
    if args.text_column or path.suffix.lower() == ".csv":
        if not args.text_column:
            raise SystemExit("CSV input needs --text-column")
        return corpus.ingest_csv(path, args.text_column)
    return corpus.ingest_text(path)


def cmd_preprocess(args) -> None:
    records = _load_records(args)
    docs, dropped = corpus.preprocess_records(records)
    corpus.write_corpus(docs, args.output)
    print(f"wrote {len(docs)} documents to {args.output} "
          f"({dropped} records dropped as empty after cleaning)")


def cmd_stats(args) -> None:
    docs = corpus.read_corpus(args.input)
    stats = corpus.corpus_stats(docs)
    print(f"documents:            {len(docs)}")
    print(f"sentences:            {stats.sentence_count}")
    print(f"mean sentence length: {stats.mean_sentence_length_words:.2f} words")
    print(f"distinct words:       {stats.vocabulary_word_count}")


def cmd_build_vocab(args) -> None:
    docs = corpus.read_corpus(args.input)
    sentences = [s for d in docs for s in d.sentences]
    vocab = wordpiece.build_vocab(sentences, args.size, args.min_freq)
    wordpiece.save_vocab(vocab, args.output)
    print(f"wrote {len(vocab)} tokens to {args.output}")


def cmd_tokenize(args) -> None:
    vocab = wordpiece.load_vocab(args.vocab)
    seq = wordpiece.tokenize(corpus.clean_text(args.text), vocab)
    tokens = list(seq.tokens)
    if not args.no_specials:
        tokens = ["[CLS]"] + tokens + ["[SEP]"]
    print(tokens)


def cmd_make_data(args) -> None:
    docs = corpus.read_corpus(args.corpus)
    vocab = wordpiece.load_vocab(args.vocab)
    policy = MaskingPolicy(mask_fraction=args.mask_frac)
    dataset = pretrain_data.build_dataset(
        docs, vocab, args.max_seq_length, policy, args.seed, args.output,
        random_pair_prob=args.random_pair_prob)
    print(f"wrote {len(dataset)} examples to {args.output}")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        warmup_fraction=args.warmup_fraction,
        seed=args.seed,
        max_seq_length=args.max_seq_length,
    )


def cmd_pretrain(args) -> None:
    dataset = pretrain_data.load_dataset(args.data)
    model_cfg = ModelConfig.load(args.config)
    ckpt, records = training.pretrain(dataset, model_cfg, _train_config(args),
                                      out_dir=args.output,
                                      checkpoint_interval=args.checkpoint_interval)
    print(f"pretrained {len(records)} steps; final loss "
          f"{records[-1].total_loss:.4f}" if records else "pretrained 0 steps")
    print(f"checkpoint: {Path(args.output) / 'model.ckpt'}")


def cmd_finetune(args) -> None:
    base = training.load_checkpoint(args.base)
    dataset = pretrain_data.load_dataset(args.data)
    ckpt, records = training.finetune(base, dataset, _train_config(args),
                                      out_dir=args.output,
                                      checkpoint_interval=args.checkpoint_interval)
    final = f"final loss {records[-1].total_loss:.4f}" if records else "no steps run"
    print(f"fine-tuned {len(records)} steps from {args.base}; {final}")
    print(f"checkpoint: {Path(args.output) / 'model.ckpt'}")


def cmd_inspect_model(args) -> None:
    ckpt = training.load_checkpoint(args.checkpoint)
    print(ckpt.config.to_json())
    allocated = sum(arr.size for arr in ckpt.tensors.values())
    print(f"parameters (formula):   {count_parameters(ckpt.config)}")
    print(f"parameters (allocated): {allocated}")
    for key in ("phase", "steps_completed", "final_loss", "seed", "parent_hash"):
        if key in ckpt.metadata:
            print(f"{key}: {ckpt.metadata[key]}")


def _policy(args) -> PoolingPolicy:
    return PoolingPolicy(layer_index=args.layer,
                         include_special_tokens=args.include_specials)


def cmd_embed(args) -> None:
    ckpt = training.load_checkpoint(args.checkpoint)
    vocab = wordpiece.load_vocab(args.vocab)
    params = ckpt.to_params()
    policy = _policy(args)
    lines = []
    for i, sentence in enumerate(Path(args.input).read_text(encoding="utf-8").splitlines()):
        if not sentence.strip():
            continue
        emb = embed_sentence(params, sentence, vocab, policy)
        values = "\t".join(repr(v) for v in emb.vector)
        lines.append(f"s{i + 1}\t{emb.token_count}\t{values}")
    Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} embeddings to {args.output}")


def _comparison_inputs(args):
    pairs = evaluate.read_pairs_tsv(args.pairs)
    base = training.load_checkpoint(args.base)
    tuned = training.load_checkpoint(args.tuned)
    vocab = wordpiece.load_vocab(args.vocab)
    return pairs, base, tuned, vocab


def cmd_evaluate(args) -> None:
    pairs, base, tuned, vocab = _comparison_inputs(args)
    rows = evaluate.compare_models(pairs, base, tuned, vocab, _policy(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluate.write_comparison_csv(rows, out / "comparison.csv")
    stats = evaluate.summarize(rows)
    evaluate.write_summary_csv(stats, out / "summary.csv")
    evaluate.comparison_chart(rows, out / "comparison.svg")
    errors = {r.pair_id: r.error for r in rows if r.error}
    evaluate.write_run_manifest(
        out / "run_manifest.json", seed=args.seed,
        inputs={"pairs": args.pairs, "base": args.base, "tuned": args.tuned,
                "vocab": args.vocab},
        extra={"row_errors": errors} if errors else None)
    print(f"compared {len(rows)} pairs; mean difference {stats.mean_difference:+.4f}, "
          f"mean improvement {stats.mean_improvement_pct:+.2f}%")
    print(f"report in {out}")


def cmd_anchor(args) -> None:
    pairs, base, tuned, vocab = _comparison_inputs(args)
    diffs = evaluate.anchor_differences(args.id, pairs, base, tuned, vocab, _policy(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluate.write_anchor_csv(diffs, out / f"anchor_{args.id}.csv")
    evaluate.anchor_chart(args.id, diffs, out / f"anchor_{args.id}.svg")
    evaluate.write_run_manifest(
        out / "run_manifest.json", seed=args.seed,
        inputs={"pairs": args.pairs, "base": args.base, "tuned": args.tuned,
                "vocab": args.vocab})
    for pid, diff in diffs:
        print(f"{args.id} vs {pid}: {diff:+.4f}")


def cmd_sweep(args) -> None:
    pairs = evaluate.read_pairs_tsv(args.pairs)
    base = training.load_checkpoint(args.base)
    vocab = wordpiece.load_vocab(args.vocab)
    dataset = pretrain_data.load_dataset(args.data)
    budgets = [int(b) for b in args.budgets.split(",")]
    cfg = TrainConfig(batch_size=args.batch_size, epochs=budgets[0],
                      learning_rate=args.learning_rate, warmup_fraction=0.0,
                      seed=args.seed, max_seq_length=base.config.max_seq_length)
    report = evaluate.epochs_sweep(budgets, base, dataset, pairs, vocab, cfg,
                                   _policy(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluate.write_sweep_csv(report, out / "sweep.csv")
    evaluate.sweep_chart(report, out / "sweep.svg")
    for budget, ckpt in report.checkpoints.items():
        training.save_checkpoint(ckpt, out / f"model_epochs{budget}.ckpt")
    evaluate.write_run_manifest(
        out / "run_manifest.json", seed=args.seed,
        inputs={"pairs": args.pairs, "base": args.base, "vocab": args.vocab})
    print(f"swept budgets {budgets}; report in {out}")


def cmd_reference_check(args) -> None:
    print("pair_id  cos_base  cos_tuned  computed_%  printed_%  formula_match")
    for row, computed, matches in evaluate.check_published_rates():
        flag = "yes" if matches else "NO (documented discrepancy)"
        print(f"{row.pair_id:7s}  {row.cos_base:8.2f}  {row.cos_tuned:9.2f} "
              f"{computed:10.2f}  {row.printed_rate_pct:9.2f}  {flag}")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed recorded in the run manifest")
    p.add_argument("--layer", type=int, default=None,
                   help="hidden layer for pooling (default: final)")
    p.add_argument("--include-specials", action="store_true",
                   help="pool [CLS]/[SEP] positions too")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100,
                   help="full passes over the example set (e.g. 100, 500, 1000)")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--warmup-fraction", type=float, default=0.1,
                   help="0 disables warmup and decay (constant rate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-seq-length", type=int, default=100)
    p.add_argument("--checkpoint-interval", type=int, default=None,
                   help="save an intermediate checkpoint every N steps")
    p.add_argument("--output", required=True, help="checkpoint output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bertkit",
        description="Desk-scale BERT-style pretraining and model-comparison toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean raw CSV/text into a corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--text-column", default=None, help="CSV column holding the text")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="report corpus statistics")
    p.add_argument("--input", required=True, help="cleaned corpus file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-vocab", help="train a WordPiece vocabulary")
    p.add_argument("--input", required=True, help="cleaned corpus file")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--output", required=True, help="vocab.txt path")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("tokenize", help="print the token list for a sentence")
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--no-specials", action="store_true",
                   help="omit the [CLS]/[SEP] wrapping")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("make-data", help="build a pretraining dataset")
    p.add_argument("--corpus", required=True, help="cleaned corpus file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-seq-length", type=int, default=100)
    p.add_argument("--mask-frac", type=float, default=0.15)
    p.add_argument("--random-pair-prob", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain", help="pretrain from random initialization")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", required=True, help="model config JSON")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="continue training a base checkpoint")
    p.add_argument("--base", required=True, help="base checkpoint file")
    p.add_argument("--data", required=True, help="domain dataset directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("inspect-model", help="print config and parameter count")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect_model)

    p = sub.add_parser("embed", help="write mean-pooled sentence vectors as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--output", required=True, help="vectors TSV path")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("evaluate", help="compare two checkpoints over sentence pairs")
    p.add_argument("--pairs", required=True, help="TSV: pair_id, source, target")
    p.add_argument("--base", required=True)
    p.add_argument("--tuned", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="report directory")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("anchor", help="difference profile of one pair vs the rest")
    p.add_argument("--id", required=True, help="anchor pair id")
    p.add_argument("--pairs", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--tuned", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_anchor)

    p = sub.add_parser("sweep", help="fine-tune at several epoch budgets and compare")
    p.add_argument("--budgets", required=True, help="comma-separated, e.g. 100,500,1000")
    p.add_argument("--base", required=True)
    p.add_argument("--data", required=True, help="domain dataset directory")
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reference-check",
                       help="improvement-rate formula vs the bundled published rows")
    p.set_defaults(func=cmd_reference_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
