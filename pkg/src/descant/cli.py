"""Command-line surface: tokenize, describe, train, generate, medley, evaluate.

Every run writes its fully resolved configuration into the output directory.
Failures exit non-zero with a single machine-parsable line on stderr
(`error: <ErrorClass>: <message>`) and remove partially written outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .codec import decode_tokens, encode_score
from .description import (
    description_tokens,
    expert_description,
    medley_description,
    parse_description_tokens,
)
from .errors import ConfigMismatch, DescantError
from .metrics import MetricReport, aggregate_reports, evaluate_pair, token_entropy
from .model import ModelConfig, SamplingParams, Seq2SeqGenerator, TrainingPair, window_tokens
from .score import split_score
from .smf import read_midi_file, write_midi
from .vocab import MAX_BARS, bin_config_hash, read_token_text, sequence_vocabulary, write_token_text

MIDI_SUFFIXES = (".mid", ".midi")


class _Workspace:
    """Tracks files created by a run so failures can clean up."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.created: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        target = self.out_dir / name
        self.created.append(target)
        return target

    def write_text(self, name: str, content: str) -> Path:
        target = self.path(name)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(content, encoding="utf-8")
        os.replace(tmp, target)
        return target

    def discard_partial(self) -> None:
        for target in self.created:
            target.unlink(missing_ok=True)
            target.with_name(target.name + ".tmp").unlink(missing_ok=True)


def _dump_run_config(ws: _Workspace, args: argparse.Namespace) -> None:
    def plain(value):
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, list):
            return [plain(v) for v in value]
        return value

    resolved = {k: plain(v) for k, v in vars(args).items()}
    resolved["package_version"] = __version__
    resolved["bin_config_hash"] = bin_config_hash()
    ws.write_text("run_config.json", json.dumps(resolved, sort_keys=True, indent=2) + "\n")


def _midi_inputs(paths: list[Path]) -> list[Path]:
    files: list[Path] = []
    for path in paths:
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in MIDI_SUFFIXES))
        else:
            files.append(path)
    if not files:
        raise FileNotFoundError("no MIDI inputs found")
    return files


def stable_split(name: str) -> str:
    """80/10/10 train/val/test split keyed on the file name only."""
    digest = hashlib.sha256(name.encode()).digest()
    bucket = digest[0] % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def _model_config(preset: str, seed: int) -> ModelConfig:
    if preset == "paper":
        return ModelConfig.full_scale(seed=seed)
    return ModelConfig.desk_scale(seed=seed)


def _load_score(path: Path):
    if path.suffix.lower() in MIDI_SUFFIXES:
        return read_midi_file(path)
    tokens, _ = read_token_text(path)
    return decode_tokens(tokens)


def _read_segments(path: Path) -> list[tuple[str, object]]:
    """Read a MIDI file as (name, Score) pieces, splitting past the bar cap."""
    segments = split_score(read_midi_file(path), MAX_BARS)
    if len(segments) == 1:
        return [(path.stem, segments[0])]
    return [(f"{path.stem}__part{i + 1}", seg) for i, seg in enumerate(segments)]


# --- subcommands -------------------------------------------------------------


def _cmd_tokenize(args, ws: _Workspace) -> None:
    vocabulary = sequence_vocabulary()
    vocabulary.save(ws.path("sequence_vocab.txt"))
    for path in _midi_inputs(args.inputs):
        for name, segment in _read_segments(path):
            seq = encode_score(segment)
            write_token_text(ws.path(f"{name}.tokens.txt"), seq.tokens)


def _cmd_describe(args, ws: _Workspace) -> None:
    header = f"bin-config: {bin_config_hash()}"
    for path in _midi_inputs(args.inputs):
        for name, segment in _read_segments(path):
            desc = expert_description(segment)
            seq = description_tokens(desc)
            write_token_text(ws.path(f"{name}.desc.txt"), seq.tokens, header=header)


def _check_description_header(header: str | None) -> None:
    if header is None:
        return
    expected = bin_config_hash()
    recorded = header.split(":", 1)[-1].strip()
    if recorded != expected:
        raise ConfigMismatch(f"description bin config {recorded} != library {expected}")


def _cmd_train(args, ws: _Workspace) -> None:
    config = _model_config(args.preset, args.seed)
    generator = Seq2SeqGenerator(config)

    pairs: list[TrainingPair] = []
    for path in _midi_inputs(args.inputs):
        if args.split != "all" and stable_split(path.name) != args.split:
            continue
        for _, segment in _read_segments(path):
            seq = encode_score(segment)
            desc = description_tokens(expert_description(segment))
            for d_win, s_win in window_tokens(desc, seq, config.context_length):
                pairs.append(
                    TrainingPair.from_sequences(
                        d_win, s_win, generator.desc_vocab, generator.seq_vocab
                    )
                )
    if not pairs:
        raise FileNotFoundError(f"no files in the {args.split!r} split")

    log_lines: list[str] = []
    started = time.monotonic()
    mean_len = sum(len(p.seq_ids) for p in pairs) / len(pairs)

    def log(step: int, lr: float, loss: float) -> None:
        elapsed = max(time.monotonic() - started, 1e-9)
        rate = step * args.batch_size * mean_len / elapsed
        log_lines.append(
            json.dumps(
                {"step": step, "lr": lr, "loss": loss, "tokens_per_sec": rate},
                sort_keys=True,
            )
        )

    generator.fit(
        pairs,
        steps=args.steps,
        batch_size=args.batch_size,
        log_every=args.log_every,
        log_fn=log,
    )
    generator.save(ws.path("checkpoint.pt"))
    ws.write_text("train_log.jsonl", "\n".join(log_lines) + ("\n" if log_lines else ""))


def _cmd_generate(args, ws: _Workspace) -> None:
    generator = Seq2SeqGenerator.load(args.checkpoint, expected_hash=bin_config_hash())
    sampling = SamplingParams(
        temperature=args.temperature, top_p=args.top_p, seed=args.seed
    )
    for path in args.descriptions:
        tokens, header = read_token_text(path)
        _check_description_header(header)
        description = parse_description_tokens(tokens)
        sample = generator.generate(description, max_bars=args.max_bars, sampling=sampling)
        stem = path.stem.removesuffix(".desc")
        write_token_text(ws.path(f"{stem}.tokens.txt"), sample.tokens)
        midi_path = ws.path(f"{stem}.mid")
        midi_path.write_bytes(write_midi(decode_tokens(sample.tokens)))


def _cmd_medley(args, ws: _Workspace) -> None:
    first = read_midi_file(args.first)
    second = read_midi_file(args.second)
    description = medley_description(first, second)
    seq = description_tokens(description)
    name = f"{args.first.stem}__{args.second.stem}.desc.txt"
    write_token_text(ws.path(name), seq.tokens, header=f"bin-config: {bin_config_hash()}")


def _cmd_evaluate(args, ws: _Workspace) -> None:
    def stems(directory: Path) -> dict[str, Path]:
        table: dict[str, Path] = {}
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() in MIDI_SUFFIXES or path.name.endswith(".tokens.txt"):
                table.setdefault(path.name.split(".")[0], path)
        return table

    truth_files = stems(args.truth)
    generated_files = stems(args.generated)
    shared = sorted(set(truth_files) & set(generated_files))
    if not shared:
        raise FileNotFoundError("no matching file stems between truth and generated dirs")

    generator = None
    if args.checkpoint is not None:
        generator = Seq2SeqGenerator.load(args.checkpoint, expected_hash=bin_config_hash())

    records = []
    reports: list[MetricReport] = []
    generated_token_samples: list[list[str]] = []
    for stem in shared:
        truth = _load_score(truth_files[stem])
        generated = _load_score(generated_files[stem])
        ppl = None
        gen_tokens = encode_score(generated)
        generated_token_samples.append(gen_tokens.tokens)
        if generator is not None:
            desc = description_tokens(expert_description(truth))
            windows = [
                TrainingPair.from_sequences(d, s, generator.desc_vocab, generator.seq_vocab)
                for d, s in window_tokens(desc, gen_tokens, generator.config.context_length)
            ]
            ppl = generator.perplexity(windows)
        report = evaluate_pair(truth, generated, perplexity=ppl)
        reports.append(report)
        records.append({"file": stem, **report.as_record()})

    aggregate = aggregate_reports(reports)
    aggregate.h_inst = token_entropy(generated_token_samples, "instrument")
    try:
        aggregate.h_chord = token_entropy(generated_token_samples, "chord")
    except DescantError:
        aggregate.h_chord = 0.0

    lines = [json.dumps(record, sort_keys=True) for record in records]
    ws.write_text("report.jsonl", "\n".join(lines) + "\n")
    ws.write_text(
        "report_aggregate.json",
        json.dumps(aggregate.as_record(), sort_keys=True, indent=2) + "\n",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="descant")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out-dir", type=Path, required=True)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("tokenize", help="MIDI files to token text")
    p.add_argument("inputs", nargs="+", type=Path)
    common(p)

    p = sub.add_parser("describe", help="MIDI files to bar-description text")
    p.add_argument("inputs", nargs="+", type=Path)
    common(p)

    p = sub.add_parser("train", help="train a checkpoint on a MIDI corpus")
    p.add_argument("inputs", nargs="+", type=Path)
    common(p)
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    p.add_argument("--log-every", type=int, default=50)

    p = sub.add_parser("generate", help="sample token text + MIDI from descriptions")
    p.add_argument("descriptions", nargs="+", type=Path)
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-p", type=float, default=1.0)
    p.add_argument("--max-bars", type=int, default=32)

    p = sub.add_parser("medley", help="splice two pieces into one description")
    p.add_argument("first", type=Path)
    p.add_argument("second", type=Path)
    common(p)

    p = sub.add_parser("evaluate", help="metric reports for truth vs generated dirs")
    common(p)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--generated", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)

    return parser


_COMMANDS = {
    "tokenize": _cmd_tokenize,
    "describe": _cmd_describe,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "medley": _cmd_medley,
    "evaluate": _cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    ws = _Workspace(args.out_dir)
    try:
        _dump_run_config(ws, args)
        _COMMANDS[args.command](args, ws)
    except (DescantError, OSError, ValueError, KeyError) as exc:
        ws.discard_partial()
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
