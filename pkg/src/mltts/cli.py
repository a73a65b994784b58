"""``mltts`` command line: corpus, train, synth, eval, ablate, mas, dump."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .ablation import ablation_run
from .alignment import InfeasibleAlignmentError, mas_search
from .autograd import ContractError
from .checkpoint import CheckpointError, load_checkpoint, load_checkpoint_state, save_checkpoint
from .config import dumps_config, load_config
from .corpus import (
    CorpusFormatError,
    CorpusValidationError,
    EmptyCorpusError,
    SyntheticCorpusSpec,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .layers import ConfigurationError
from .metrics import evaluate
from .model import MODES, InferenceRequest, MultilingualTTS, infer
from .trainer import Trainer, TrainingDivergedError, write_log_header

USER_ERRORS = (
    ContractError,
    ConfigurationError,
    CorpusFormatError,
    CorpusValidationError,
    EmptyCorpusError,
    CheckpointError,
    InfeasibleAlignmentError,
    TrainingDivergedError,
    OSError,
    ValueError,
)


def _corpus_overrides(pairs: Sequence[str]) -> dict:
    out = {}
    defaults = SyntheticCorpusSpec()
    for item in pairs:
        if "=" not in item:
            raise ConfigurationError(f"expected key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if not hasattr(defaults, k):
            raise ConfigurationError(f"unknown corpus key {k!r}")
        kind = type(getattr(defaults, k))
        try:
            out[k] = kind(v)
        except ValueError:
            raise ConfigurationError(f"bad value for {k}: {v!r}") from None
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def _corpus_or_default(path, spec: SyntheticCorpusSpec | None = None):
    if path:
        return load_corpus(path)
    return generate_corpus(spec or SyntheticCorpusSpec())


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- subcommands -------------------------------------------------------------
def cmd_corpus_generate(args) -> int:
    kw = _corpus_overrides(args.set)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.no_noise:
        kw["noise"] = 0.0
    corpus = generate_corpus(SyntheticCorpusSpec(**kw))
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} utterances to {args.out}")
    return 0


def cmd_corpus_validate(args) -> int:
    corpus = load_corpus(args.path)
    print(f"ok: {len(corpus)} utterances, {corpus.spec.num_speakers} speakers, {corpus.spec.num_languages} languages")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        if args.steps is not None or args.set or args.config:
            raise ConfigurationError("--resume continues the checkpoint's own config; drop --steps/--set/--config")
        ck = load_checkpoint_state(args.resume)
        corpus = _corpus_or_default(args.corpus, ck.model.corpus_spec)
        if corpus.spec != ck.model.corpus_spec:
            raise ConfigurationError("corpus spec does not match the checkpoint's corpus spec")
        trainer = Trainer(ck.model, corpus, step=ck.step, optimizer=ck.optimizer)
        cfg = ck.model.config
    else:
        overrides = list(args.set)
        if args.steps is not None:
            overrides.append(f"total_steps={args.steps}")
        cfg = load_config(args.config, overrides)
        corpus = _corpus_or_default(args.corpus)
        trainer = Trainer(MultilingualTTS(cfg, corpus.spec), corpus)
    (out / "config.txt").write_text(dumps_config(cfg))

    def on_step(tr: Trainer, _):
        if cfg.checkpoint_every and tr.step % cfg.checkpoint_every == 0:
            save_checkpoint(tr.model, out / f"checkpoint-{tr.step:06d}.ckpt", tr.step, tr.optimizer)

    log_path = out / "loss.csv"
    mode = "a" if args.resume and log_path.exists() else "w"
    with open(log_path, mode, newline="") as fh:
        if mode == "w":
            write_log_header(fh)
        trainer.run(log=fh, on_step=on_step)
    save_checkpoint(trainer.model, out / "final.ckpt", trainer.step, trainer.optimizer)
    print(f"trained to step {trainer.step}; checkpoint {out / 'final.ckpt'}")
    return 0


def cmd_synth(args) -> int:
    model = load_checkpoint(args.checkpoint)
    req = InferenceRequest(tuple(_int_list(args.phonemes)), args.language, args.speaker, args.mode)
    d, frames = infer(model, req)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "durations.csv").write_text(",".join(str(int(x)) for x in d) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(frames.shape[1])])
    w.writerows([[repr(float(v)) for v in row] for row in frames])
    (out / "frames.csv").write_text(buf.getvalue())
    print(f"{len(d)} phonemes, {frames.shape[0]} frames -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = _corpus_or_default(args.corpus, model.corpus_spec)
    report = evaluate(model, corpus, texts_per_language=args.texts, seed=args.seed)
    _write_text(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def _parse_variant(text: str) -> dict:
    flags = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigurationError(f"variant entries look like flag=on|off, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if v.lower() not in ("on", "off", "true", "false", "1", "0"):
            raise ConfigurationError(f"flag value must be on or off, got {v!r}")
        flags[k] = v.lower() in ("on", "true", "1")
    return flags


def cmd_ablate(args) -> int:
    overrides = list(args.set)
    if args.steps is not None:
        overrides.append(f"total_steps={args.steps}")
    cfg = load_config(args.config, overrides)
    corpus = _corpus_or_default(args.corpus)
    texts = args.variant or ["", "enable_reg_loss=off", "enable_dat=off"]
    report = ablation_run(cfg, [_parse_variant(t) for t in texts], corpus, workers=args.workers)
    print(report.table(), file=sys.stderr)
    _write_text(args.out, report.to_json() + "\n")
    return 0


def cmd_mas(args) -> int:
    text = Path(args.scores).read_text() if args.scores != "-" else sys.stdin.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    try:
        scores = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise ContractError(f"score matrix must be numeric: {e}") from None
    a = mas_search(scores, backend=args.backend)
    _write_text(args.out, ",".join(str(int(x)) for x in a.durations) + "\n")
    return 0


def cmd_dump(args) -> int:
    model = load_checkpoint(args.checkpoint)
    reps = model.hidden_speaker_representations()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speaker", "language", *(f"h{i}" for i in range(reps.shape[1]))])
    for k, row in enumerate(reps):
        w.writerow([k, int(model.speaker_languages[k]), *(repr(float(v)) for v in row)])
    _write_text(args.out, buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mltts", description="Desk-scale multilingual TTS mechanisms toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="generate or validate a synthetic corpus")
    csub = corpus.add_subparsers(dest="corpus_command", required=True)
    g = csub.add_parser("generate")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--no-noise", action="store_true", help="render frames without additive noise")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="corpus spec override")
    g.set_defaults(func=cmd_corpus_generate)
    v = csub.add_parser("validate")
    v.add_argument("path")
    v.set_defaults(func=cmd_corpus_validate)

    def config_args(sp):
        sp.add_argument("--config", help="key = value config file (default: $MLTTS_CONFIG)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--steps", type=int, help="shorthand for --set total_steps=N")
        sp.add_argument("--corpus", help="corpus file (default: the default synthetic corpus)")

    t = sub.add_parser("train")
    config_args(t)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--phonemes", required=True, help="comma-separated phoneme ids")
    s.add_argument("--language", type=int, required=True)
    s.add_argument("--speaker", type=int, required=True)
    s.add_argument("--mode", choices=MODES, default="auto")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus")
    e.add_argument("--texts", type=int, default=10, help="random texts per language")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate")
    config_args(a)
    a.add_argument("--variant", action="append", help="e.g. enable_dat=off (repeatable; empty string = base)")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("mas")
    m.add_argument("scores", help="CSV score matrix, one row per phoneme ('-' for stdin)")
    m.add_argument("--backend", choices=("numba", "numpy"))
    m.add_argument("--out")
    m.set_defaults(func=cmd_mas)

    d = sub.add_parser("dump")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump)
    return p


def cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except USER_ERRORS as e:
        msg = " ".join(str(e).split())
        print(f"mltts: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
