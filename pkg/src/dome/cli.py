"""``dome`` command-line interface.

Machine-readable output (JSON or JSONL) goes to stdout, logs to stderr.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import coin
from .corpus import EOS_ID, IntentCategory, filter_others, read_corpus, write_corpus
from .errors import (ConfigError, CorpusFormatError, CorruptCheckpoint, EmptyInput,
                     InputTooLong, InvalidIntent, NoExemplar, ShapeError)
from .pipeline import evaluate, generate
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train_dome

log = logging.getLogger("dome")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _seed_override(seed: int) -> int:
    env = os.environ.get("DOME_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"DOME_SEED must be an integer, got {env!r}") from None


def _read_json(path) -> dict:
    try:
        data = json.loads(_existing(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _intent(name: str) -> IntentCategory:
    intent = IntentCategory.parse(name)
    if intent.is_noise:
        raise InvalidIntent(f"comments cannot be generated for intent {intent.value!r}")
    return intent


# ---------------------------------------------------------------------------
# commands

def cmd_preprocess(args) -> int:
    records = read_corpus(_existing(args.input), require_intent=False)
    kept = filter_others(records) if args.drop_others else records
    if args.drop_others and records and not kept:
        log.warning("every record is labelled 'others'; output is empty")
    n = write_corpus(kept, args.out)
    _emit({"input": len(records), "written": n, "dropped": len(records) - n})
    return EXIT_OK


def cmd_train_coin(args) -> int:
    data = _read_json(args.config)
    seed = _seed_override(int(data.pop("seed", 0)))
    known = {f.name for f in dataclasses.fields(coin.ClassifierConfig)}
    if set(data) - known:
        raise ConfigError(f"unknown classifier config keys: {sorted(set(data) - known)}")
    cfg = coin.ClassifierConfig(**data)
    records = read_corpus(_existing(args.corpus))
    clf, history = coin.train_classifier(records, cfg, seed=seed)
    coin.save_classifier(clf, args.out, history)
    _emit({"checkpoint": str(args.out), "history": history, "seed": seed})
    return EXIT_OK


def cmd_train_dome(args) -> int:
    cfg = TrainConfig.from_dict(_read_json(args.config))
    cfg.seed = _seed_override(cfg.seed)
    records = read_corpus(_existing(args.corpus))
    bundle, history = train_dome(records, cfg)
    save_checkpoint(bundle, args.out)
    _emit({"checkpoint": str(args.out), "history": history, "seed": cfg.seed})
    return EXIT_OK


def cmd_label(args) -> int:
    clf = coin.load_classifier(_existing(args.ckpt))
    records = read_corpus(_existing(args.input), require_intent=False)
    if not records:
        raise EmptyInput("input corpus is empty")
    relabelled = sum(r.intent is not None for r in records)
    if relabelled:
        log.warning("%d records already carry an intent; overwriting", relabelled)
    labelled = coin.auto_label(records, clf)
    write_corpus(labelled, args.out)
    counts = {i.value: 0 for i in IntentCategory}
    for r in labelled:
        counts[r.intent.value] += 1
    _emit({"labelled": len(labelled), "overwritten": relabelled, "counts": counts})
    return EXIT_OK


def cmd_retrieve(args) -> int:
    intent = _intent(args.intent)
    bundle = load_checkpoint(_existing(args.ckpt))
    code = _existing(args.code).read_text(encoding="utf-8")
    pre = bundle.preprocess(code)
    ex = bundle.find_exemplar(code, pre, intent)
    if ex is None:
        raise NoExemplar(f"no exemplar for intent {intent.value!r}")
    _emit({"comment": ex.comment, "score": ex.score, "source_id": ex.source_id,
           "intent": intent.value})
    return EXIT_OK


def cmd_generate(args) -> int:
    intent = _intent(args.intent)
    if args.beam is not None and args.beam < 1:
        raise UsageError("--beam must be >= 1")
    bundle = load_checkpoint(_existing(args.ckpt))
    code = _existing(args.code).read_text(encoding="utf-8")
    out = generate(code, intent, bundle, args.beam, trace=bool(args.trace))
    if args.trace:
        Path(args.trace).write_text(json.dumps([t.to_json() for t in out.traces]), encoding="utf-8")
    _emit(out.to_json())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle = load_checkpoint(_existing(args.ckpt))
    records = read_corpus(_existing(args.test))
    if not records:
        raise EmptyInput("test set is empty")
    report = evaluate(bundle, records, args.beam).to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    _emit(report)
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    """Traces for a given comment (teacher-forced) or for the model's own output."""
    intent = _intent(args.intent)
    bundle = load_checkpoint(_existing(args.ckpt))
    code = _existing(args.code).read_text(encoding="utf-8")
    if args.comment is None:
        traces = generate(code, intent, bundle, args.beam, trace=True).traces
    else:
        example = bundle.make_example(code, intent, args.comment)
        traces = bundle.model.attention_traces(example, list(example.target) + [EOS_ID])
    for t in traces:
        sys.stdout.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dome", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="validate and filter a JSONL corpus")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--drop-others", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    for name, func in (("train-coin", cmd_train_coin), ("train-dome", cmd_train_dome)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--corpus", required=True)
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("label", help="assign intents with a trained classifier")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("retrieve", help="show the exemplar retrieved for a code file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--code", required=True)
    s.add_argument("--intent", required=True)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("generate", help="generate a comment for a code file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--code", required=True)
    s.add_argument("--intent", required=True)
    s.add_argument("--beam", type=int)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="BLEU / ROUGE-L / METEOR on a labelled test set")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out")
    s.add_argument("--beam", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect-attention", help="dump ISA attention traces as JSONL")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--code", required=True)
    s.add_argument("--intent", required=True)
    s.add_argument("--comment")
    s.add_argument("--beam", type=int)
    s.set_defaults(func=cmd_inspect_attention)
    return p


_USAGE_ERRORS = (UsageError, ConfigError, InvalidIntent)
_DATA_ERRORS = (CorpusFormatError, EmptyInput, CorruptCheckpoint, NoExemplar, InputTooLong,
                ShapeError, UnicodeDecodeError)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except _USAGE_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:   # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
