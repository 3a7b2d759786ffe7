"""Command-line entry point: ``generate``, ``train`` and ``eval``.

Exit codes: 0 success, 1 usage error, 2 invalid input (corpus, config,
vocabulary mismatch), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from . import __version__
from .clozegen import dataset_stats, downsample_verbs, generate, read_instances, write_instances
from .corpus import Vocabulary, read_corpus
from .estimator import PointerAttentiveReader, vocabulary_from_instances
from .evaluation import (
    DEFAULT_BUCKET_CAP,
    baseline_most_freq,
    baseline_random,
    evaluate,
    export_traces,
    write_breakdown_csv,
)
from .exceptions import MalformedInputError
from .model import ParConfig, encode_instance
from .trainer import AdagradState, TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("pointer_reader")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvalidInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def vocab_sidecar(instances_path) -> Path:
    p = Path(instances_path)
    return p.with_name(p.stem + ".vocab.json")


def stats_sidecar(instances_path) -> Path:
    p = Path(instances_path)
    return p.with_name(p.stem + ".stats.json")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# config


def config_schema() -> dict:
    return json.loads(resources.files("pointer_reader").joinpath("data/config.schema.json").read_text())


def load_config(path) -> tuple[ParConfig, TrainConfig]:
    """Read and validate a ``{"model": {...}, "train": {...}}`` config file."""
    _require_file(path, "config")
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        jsonschema.validate(obj, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInput(f"{path}: config error at {where}: {exc.message}") from None
    try:
        return ParConfig(**obj.get("model", {})), TrainConfig(**obj.get("train", {}))
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    _require_file(args.corpus, "corpus")
    docs = read_corpus(args.corpus)
    if args.downsample_threshold > 0:
        docs = downsample_verbs(list(docs), args.downsample_threshold, args.seed)
    instances = list(generate(docs, multi_arg=args.multi_arg))
    if not instances:
        logger.warning("no instances generated from %s%s", args.corpus,
                       " (no event has two or more qualifying arguments)" if args.multi_arg else "")

    out = Path(args.out)
    write_instances(instances, out)
    if args.vocab:
        _require_file(args.vocab, "vocabulary")
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = vocabulary_from_instances(instances, args.min_count)
    vocab.save(vocab_sidecar(out))

    stats = dataset_stats(instances)
    stats_sidecar(out).write_text(_dump(stats.to_json()))
    sys.stdout.write(stats.format())
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def _instances_and_vocab(path) -> tuple[list, Vocabulary]:
    _require_file(path, "instance file")
    instances = read_instances(path)
    sidecar = vocab_sidecar(path)
    if not sidecar.is_file():
        raise InvalidInput(f"{path}: vocabulary file {sidecar.name} is missing; run `generate` to create it")
    return instances, Vocabulary.load(sidecar)


def _checkpoint_dir(out: Path, epoch: int) -> Path:
    return out / "checkpoints" / f"epoch-{epoch:03d}"


def _write_checkpoint(directory, params, state, config, tc, epoch, vocab):
    save_checkpoint(directory, params, state, config, tc, epoch, vocab.digest())
    vocab.save(Path(directory) / "vocab.json")


def cmd_train(args) -> int:
    started = _now()
    config, tc = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("workers", "epochs", "seed") if getattr(args, k) is not None}
    try:
        tc = TrainConfig(**{**tc.to_json(), **overrides})
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None

    instances, vocab = _instances_and_vocab(args.instances)
    dev = None
    if args.dev:
        dev, dev_vocab = _instances_and_vocab(args.dev)
        if dev_vocab.digest() != vocab.digest():
            raise InvalidInput(f"{args.dev}: vocabulary differs from the training vocabulary")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")

    start_epoch, state = 0, None
    if args.resume:
        params, state, ck_config, sidecar = load_checkpoint(args.resume, len(vocab))
        if sidecar["vocab_sha256"] != vocab.digest():
            raise InvalidInput(f"{args.resume}: checkpoint vocabulary does not match {args.instances}")
        if ck_config != config:
            raise InvalidInput(f"{args.resume}: checkpoint model config differs from {args.config}")
        start_epoch = int(sidecar["epochs_done"])
    else:
        est = PointerAttentiveReader(**_estimator_kwargs(config, tc), vocabulary=vocab).initialize()
        params = est.params_
        state = AdagradState.zeros_like(params.arrays())
        _write_checkpoint(_checkpoint_dir(out, 0), params, state, config, tc, 0, vocab)

    encoded = []
    for i, x in enumerate(instances):
        try:
            encoded.append(encode_instance(x, vocab))
        except ValueError as exc:
            logger.warning("skipping instance %d: %s", i, exc)
            encoded.append(None)

    log_path = out / "train_log.jsonl"
    kept = []
    if start_epoch and log_path.is_file():
        kept = [l for l in log_path.read_text().splitlines() if json.loads(l)["epoch"] < start_epoch]
    log_path.write_text("".join(l + "\n" for l in kept))

    dev_model = None
    if dev is not None:
        dev_model = PointerAttentiveReader.from_parts(params, config, vocab, workers=tc.workers)
    best = {"epoch": None, "dev_acc": None}

    def on_epoch_end(epoch, params, state, record):
        dev_acc = None if dev_model is None else dev_model.score(dev)
        done = epoch + 1
        _write_checkpoint(_checkpoint_dir(out, done), params, state, config, tc, done, vocab)
        if dev_acc is not None and (best["dev_acc"] is None or dev_acc > best["dev_acc"]):
            best.update(epoch=done, dev_acc=dev_acc)
            best_dir = out / "checkpoints" / "best"
            if best_dir.exists():
                shutil.rmtree(best_dir)
            shutil.copytree(_checkpoint_dir(out, done), best_dir)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({**record, "dev_acc": dev_acc}) + "\n")
        return dev_acc

    if start_epoch < tc.epochs:
        train(params, config, encoded, tc, state=state, start_epoch=start_epoch, on_epoch_end=on_epoch_end)

    manifest = {
        "version": __version__,
        "command": args.argv,
        "config": {"model": config.to_json(), "train": tc.to_json()},
        "seed": tc.seed,
        "hashes": {
            "instances_sha256": sha256_file(args.instances),
            "vocab_sha256": vocab.digest(),
            "config_sha256": sha256_file(args.config),
        },
        "paths": {
            "instances": str(args.instances),
            "dev": None if args.dev is None else str(args.dev),
            "resume": None if args.resume is None else str(args.resume),
            "train_log": log_path.name,
            "checkpoints": sorted(str(p.relative_to(out)) for p in (out / "checkpoints").iterdir()),
        },
        "best": best,
        "skipped_instances": sum(e is None for e in encoded),
        "timestamps": {"started": started, "finished": _now()},
    }
    (out / "manifest.json").write_text(_dump(manifest))
    return EXIT_OK


def _estimator_kwargs(config: ParConfig, tc: TrainConfig) -> dict:
    return {**config.to_json(), **tc.to_json()}


# --------------------------------------------------------------------------
# eval


def load_model(checkpoint, workers: int = 1) -> PointerAttentiveReader:
    ck = Path(checkpoint)
    if not (ck / "config.json").is_file():
        raise UsageError(f"not a checkpoint directory: {checkpoint}")
    vocab_path = ck / "vocab.json"
    if not vocab_path.is_file():
        raise InvalidInput(f"{checkpoint}: checkpoint has no vocab.json")
    vocab = Vocabulary.load(vocab_path)
    params, _, config, sidecar = load_checkpoint(ck, len(vocab))
    if sidecar["vocab_sha256"] != vocab.digest():
        raise InvalidInput(f"{checkpoint}: vocab.json does not match the hash recorded in config.json")
    return PointerAttentiveReader.from_parts(params, config, vocab, workers=workers)


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.baseline is None):
        raise UsageError("give exactly one of --checkpoint or --baseline")
    if args.traces and args.checkpoint is None:
        raise UsageError("--traces needs a --checkpoint")
    _require_file(args.instances, "instance file")

    if args.baseline is not None:
        instances = read_instances(args.instances)
        if args.baseline == "random":
            report = baseline_random(instances, seed=args.seed, cap=args.bucket_cap)
        else:
            report = baseline_most_freq(instances, cap=args.bucket_cap)
        model = None
    else:
        model = load_model(args.checkpoint, args.workers)
        instances, vocab = _instances_and_vocab(args.instances)
        if vocab.digest() != model.vocabulary_.digest():
            raise InvalidInput(
                f"vocabulary hash of {args.instances} ({vocab.digest()[:12]}) does not match "
                f"checkpoint {args.checkpoint} ({model.vocabulary_.digest()[:12]}); "
                "regenerate the instances with `generate --vocab <checkpoint>/vocab.json`"
            )
        report = evaluate(model, instances, cap=args.bucket_cap)

    text = _dump(report.to_json())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.breakdown:
        write_breakdown_csv(report.by_frequency, args.breakdown)
    if args.traces:
        export_traces(model, instances, args.traces)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointer-reader", description="Implicit argument cloze: data, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="turn a document corpus into cloze instances")
    g.add_argument("corpus", help="corpus file, one JSON document per line")
    g.add_argument("out", help="instance file to write (JSON lines)")
    g.add_argument("--multi-arg", action="store_true", help="emit the multi-argument variant")
    g.add_argument("--downsample-threshold", type=int, default=1000, metavar="N",
                   help="subsample events whose predicate occurs more than N times (0 disables)")
    g.add_argument("--seed", type=int, default=0, help="seed for downsampling")
    g.add_argument("--min-count", type=int, default=1, help="minimum surface count for the vocabulary")
    g.add_argument("--vocab", default=None, help="reuse this vocabulary instead of building one")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on an instance file")
    t.add_argument("instances")
    t.add_argument("--config", required=True, help="JSON config with 'model' and 'train' sections")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--dev", default=None, help="held-out instance file for best-checkpoint selection")
    t.add_argument("--resume", default=None, metavar="CHECKPOINT", help="continue from a checkpoint")
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint or a baseline")
    e.add_argument("instances")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--baseline", choices=("random", "mostfreq"), default=None)
    e.add_argument("--breakdown", default=None, metavar="CSV", help="accuracy by number of correct answers")
    e.add_argument("--bucket-cap", type=int, default=DEFAULT_BUCKET_CAP)
    e.add_argument("--traces", default=None, metavar="PATH", help="per-hop attention traces (JSON lines)")
    e.add_argument("--out", default=None, help="report file (default: stdout)")
    e.add_argument("--seed", type=int, default=0, help="seed for the random baseline")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pointer-reader: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInput, MalformedInputError, ValueError) as exc:
        print(f"pointer-reader: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"pointer-reader: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
