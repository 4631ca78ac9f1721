"""Command-line entry points: ``gen``, ``train``, ``infer``, ``eval``.

Failures exit non-zero with one line on stderr of the form
``xspeech-error category=<category> message=<text>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, xtsr
from .autodiff import ConfigurationError, DimensionError
from .config import corpus_spec_from_text, read_text, run_config_from_text
from .data import CorpusFormatError, generate_corpus, load_corpus, load_corpus_spec, save_corpus
from .diagnostics import (
    ABLATION_FLAGS,
    ablate,
    collect_probe_set,
    contour_accuracy,
    probe_texts,
    projection_csv,
    report_from_sets,
)
from .trainer import CheckpointVersionError, NonFiniteLossError, Trainer, load_model, save_checkpoint
from .xtsr import XTSRFormatError

log = logging.getLogger("xspeech")


class CLIError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _write_manifest(path: Path, command: str, config: dict, seed, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "seed": seed,
        "config": config,
        "outputs": outputs,
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def cmd_gen(args) -> None:
    spec = corpus_spec_from_text(read_text(args.spec))
    out = Path(args.out)
    corpus = generate_corpus(spec)
    save_corpus(out, corpus, spec)
    heldout = generate_corpus(spec, stream=2)
    save_corpus(out / "heldout", heldout[:: max(1, len(heldout) // 60)], spec)
    _write_manifest(out / "run_manifest.json", "gen", spec.__dict__, spec.seed,
                    ["manifest.json", "mel.xtsr", "pitch.xtsr", "heldout/"])
    log.info("wrote %d utterances to %s", len(corpus), out)


def _sized_for_corpus(mconf, corpus, spec):
    from dataclasses import replace

    if spec is not None:
        return replace(mconf, n_tokens=spec.n_tokens, n_speakers=spec.n_speakers,
                       n_languages=spec.n_languages, n_mel_bins=spec.n_mel_bins)
    return replace(
        mconf,
        n_tokens=max(int(u.token_ids.max()) for u in corpus) + 1,
        n_speakers=max(u.speaker_id for u in corpus) + 1,
        n_languages=max(u.language_id for u in corpus) + 1,
        n_mel_bins=corpus[0].mel.shape[1],
    )


def cmd_train(args) -> None:
    mconf, tconf = run_config_from_text(read_text(args.config))
    corpus = load_corpus(args.corpus)
    if not corpus:
        raise CLIError("data", "corpus is empty")
    mconf = _sized_for_corpus(mconf, corpus, load_corpus_spec(args.corpus))
    flags = [f for f in (args.ablate or "").split(",") if f]
    mconf = ablate(mconf, flags)
    out = Path(args.out)
    trainer = Trainer(corpus, mconf, tconf)
    trainer.run(log_every=args.log_every)
    save_checkpoint(out, trainer)
    _write_manifest(out / "run_manifest.json", "train",
                    {"model": mconf.to_dict(), "train": tconf.to_dict(), "ablate": flags}, tconf.seed,
                    ["manifest.json", "params.xtsr", "adam_m.xtsr", "adam_v.xtsr", "loss.csv"])


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise CLIError("usage", f"--tokens must be a list of integers, got {text!r}") from None


def cmd_infer(args) -> None:
    model = load_model(args.ckpt)
    tokens = _parse_ids(args.tokens)
    mel = model.forward_infer(np.asarray(tokens), args.speaker, args.language)
    if not np.isfinite(mel).all():
        raise CLIError("numeric", "inference produced non-finite mel values")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    xtsr.save(out, mel.astype(np.float32))
    _write_manifest(out.with_name(out.name + ".manifest.json"), "infer",
                    {"tokens": tokens, "speaker": args.speaker, "language": args.language},
                    model.config.seed, [out.name])


def cmd_eval(args) -> None:
    model = load_model(args.ckpt)
    root = Path(args.corpus)
    corpus = load_corpus(root / "heldout") if (root / "heldout" / "manifest.json").exists() else load_corpus(root)
    if not corpus:
        raise CLIError("data", "evaluation corpus is empty")
    h_si, mel, labels = collect_probe_set(model, probe_texts(corpus, args.per_language))
    report = report_from_sets(h_si, mel, labels, model.config.n_speakers)
    if model.sip_head is not None:
        report.contour_accuracy = contour_accuracy(model, corpus)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    proj_path = path.with_name(path.stem + ".projection.csv")
    proj_path.write_text(projection_csv({"h_si": h_si, "mel": mel}, labels))
    _write_manifest(path.with_name(path.name + ".manifest.json"), "eval",
                    {"per_language": args.per_language}, model.config.seed, [path.name, proj_path.name])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xspeech", description="Cross-lingual toy TTS acoustic model")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate the synthetic corpus")
    g.add_argument("--spec", help="corpus spec file (key = value); defaults if omitted")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config", help="run config file (key = value); defaults if omitted")
    t.add_argument("--out", required=True)
    t.add_argument("--ablate", help=f"comma-separated subset of {','.join(ABLATION_FLAGS)}")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="synthesize a mel spectrogram")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--tokens", required=True, help="token ids, comma or space separated")
    i.add_argument("--speaker", type=int, required=True)
    i.add_argument("--language", type=int, required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="speaker probe and contour accuracy report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--per-language", type=int, default=10)
    e.set_defaults(func=cmd_eval)
    return p


_CATEGORIES = (
    (CLIError, None),
    (ConfigurationError, "config"),
    (CheckpointVersionError, "checkpoint"),
    (XTSRFormatError, "format"),
    (CorpusFormatError, "format"),
    (NonFiniteLossError, "numeric"),
    (DimensionError, "shape"),
    (IndexError, "lookup"),
    (FileNotFoundError, "io"),
    (ValueError, "value"),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:
        for cls, category in _CATEGORIES:
            if isinstance(exc, cls):
                category = category or exc.category
                break
        else:
            raise
        msg = " ".join(str(exc).split())
        print(f"xspeech-error category={category} message={msg}", file=sys.stderr)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
