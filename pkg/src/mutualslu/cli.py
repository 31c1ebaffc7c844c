"""Command-line entry point.

Commands: train, eval, predict, synth, gradcheck. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error. Option precedence is
CLI flag > --config file (flat key=value) > built-in default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ConfigError, TrainConfig, parse_config_file
from .corpus import (
    CorpusFormatError,
    SynthSpec,
    Utterance,
    generate_synthetic,
    build_vocab,
    parse_corpus,
    serialize_corpus,
    write_corpus,
)
from .gradcheck import render_suite, run_suite
from .metrics import render_report, report_to_kv
from .training import (
    CheckpointError,
    TrainingDivergedError,
    evaluate,
    model_from_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad paths or configuration; maps to exit code 2."""


_CONFIG_FLAGS = [f.name for f in dataclasses.fields(TrainConfig)]


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="key=value config file (flags override it)")
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            group.add_argument(flag, action="store_const", const=True, default=None)
        else:
            ftype = int if f.type in ("int", int) else float
            group.add_argument(flag, type=ftype, default=None)


def _build_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        values.update(parse_config_file(args.config))
    for name in _CONFIG_FLAGS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    return TrainConfig.from_dict(values)


def _read_corpus(path: Path, what: str) -> list[Utterance]:
    if not path.is_file():
        raise UsageError(f"{what} corpus not found: {path}")
    return parse_corpus(path)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    train_data = _read_corpus(args.train, "train")
    dev_data = _read_corpus(args.dev, "dev")
    test_data = _read_corpus(args.test, "test") if args.test else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    vocab = build_vocab(train_data, min_freq=cfg.min_token_freq)
    result = train(cfg, train_data, dev_data, vocab,
                   target_dev_overall=args.target_overall,
                   log=lambda msg: print(msg, flush=True))

    save_checkpoint(out_dir / "checkpoint.json", cfg, vocab, result.best_params)
    with (out_dir / "history.jsonl").open("w", encoding="utf-8") as fh:
        for stats in result.history:
            fh.write(json.dumps(stats.to_dict()) + "\n")
    print(f"best dev overall accuracy {result.best_dev_overall:.4f} "
          f"at epoch {result.best_epoch}")

    if test_data is not None:
        model = result.restore_best()
        report, _ = evaluate(model, test_data, vocab)
        print("test results:")
        print(render_report(report))
        (out_dir / "report_test.txt").write_text(render_report(report) + "\n", encoding="utf-8")
        (out_dir / "report_test.kv").write_text(report_to_kv(report), encoding="utf-8")
    return EXIT_OK


def _dump_records(path: Path, records, data, vocab) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec, u in zip(records, data):
            fields = [
                " ".join(u.tokens),
                "#".join(sorted(vocab.intent_labels[i] for i in rec.intents_initial)),
                "#".join(sorted(vocab.intent_labels[i] for i in rec.intents_final)),
                "#".join(u.intents),
                " ".join(vocab.slot_labels[i] for i in rec.slots_initial),
                " ".join(vocab.slot_labels[i] for i in rec.slots_final),
                " ".join(u.slot_tags),
            ]
            fh.write("\t".join(fields) + "\n")


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.checkpoint.is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, vocab, _cfg = model_from_checkpoint(args.checkpoint)
    data = _read_corpus(args.data, "eval")
    report, records = evaluate(model, data, vocab)
    print(render_report(report))
    if args.report_kv:
        args.report_kv.write_text(report_to_kv(report), encoding="utf-8")
    if args.dump:
        _dump_records(args.dump, records, data, vocab)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    if not args.checkpoint.is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    if not args.input.is_file():
        raise UsageError(f"input file not found: {args.input}")
    model, vocab, _cfg = model_from_checkpoint(args.checkpoint)
    predicted: list[Utterance] = []
    for line in args.input.read_text(encoding="utf-8").splitlines():
        tokens = line.split()
        if not tokens:
            continue
        rec = model.predict([vocab.token_id(t) for t in tokens])
        predicted.append(Utterance(
            tokens=tuple(tokens),
            slot_tags=tuple(vocab.slot_labels[i] for i in rec.slots_final),
            intents=tuple(sorted(vocab.intent_labels[i] for i in rec.intents_final)),
        ))
    text = serialize_corpus(predicted)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        n_intents=args.intents,
        n_slot_types=args.slot_types,
        n_fillers=args.fillers,
        min_len=args.min_len,
        max_len=args.max_len,
        max_intents_per_utterance=args.max_intents,
        train_size=args.train_size,
        dev_size=args.dev_size,
        test_size=args.test_size,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ("train.txt", "dev.txt", "test.txt")
    for name, split in zip(names, generate_synthetic(spec)):
        write_corpus(split, out_dir / name)
    print(f"wrote {', '.join(names)} to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = run_suite(seed=args.seed)
    print(render_suite(reports, args.tolerance))
    ok = all(r.passed(args.tolerance) for r in reports.values())
    print(f"gradient check {'passed' if ok else 'FAILED'} at tolerance {args.tolerance:g}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mutualslu",
        description="Joint multi-intent detection and slot filling with "
                    "two-stage mutual guidance.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and keep the best-on-dev checkpoint")
    p_train.add_argument("--train", type=Path, required=True)
    p_train.add_argument("--dev", type=Path, required=True)
    p_train.add_argument("--test", type=Path, default=None)
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--target-overall", type=float, default=None,
                         help="stop once best dev overall accuracy reaches this")
    _add_config_options(p_train)
    p_train.set_defaults(run=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--dump", type=Path, default=None,
                        help="write one prediction line per utterance")
    p_eval.add_argument("--report-kv", type=Path, default=None,
                        help="write the key=value report here")
    p_eval.set_defaults(run=cmd_eval)

    p_pred = sub.add_parser("predict", help="label raw token lines")
    p_pred.add_argument("--checkpoint", type=Path, required=True)
    p_pred.add_argument("--input", type=Path, required=True,
                        help="one utterance per line, whitespace-separated tokens")
    p_pred.add_argument("--out", type=Path, default=None)
    p_pred.set_defaults(run=cmd_predict)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--intents", type=int, default=4)
    p_synth.add_argument("--slot-types", type=int, default=4)
    p_synth.add_argument("--fillers", type=int, default=12)
    p_synth.add_argument("--min-len", type=int, default=4)
    p_synth.add_argument("--max-len", type=int, default=10)
    p_synth.add_argument("--max-intents", type=int, default=2)
    p_synth.add_argument("--train-size", type=int, default=32)
    p_synth.add_argument("--dev-size", type=int, default=16)
    p_synth.add_argument("--test-size", type=int, default=16)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(run=cmd_synth)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of all components")
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(run=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except (UsageError, ConfigError, CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
