"""Bar-level conditioning sequences extracted from a Score.

A description summarizes each bar with either human-readable features
(signature, note density, mean pitch/velocity/duration, instruments, chords),
a row of 16 latent codebook indices, or both. Descriptions concatenate
bar-by-bar, so editing bar k of the input changes only record k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .chords import ChordConfig, ChordDetector, ChordLabel, DEFAULT_CHORD_CONFIG, NO_CHORD, detect_beat_chords
from .codec import TokenSequence
from .errors import CodeOutOfRange, GrammarError, LengthMismatch, TooShort
from .instruments import instrument_id, instrument_name
from .score import Score, normalize, partition_bars
from . import vocab
from .vocab import BOS, CODEBOOK_SIZE, CODES_PER_BAR, EOS, POSITIONS_PER_QUARTER

MEDLEY_BARS_PER_SOURCE = 16


@dataclass(frozen=True)
class ExpertBarDescription:
    """Feature record of one bar; the four bins are None when no note onsets."""

    bar_index: int
    time_signature: tuple[int, int]
    note_density_bin: int | None
    mean_pitch_bin: int | None
    mean_velocity_bin: int | None
    mean_duration_bin: int | None
    instruments: tuple[int, ...]
    chords: tuple[ChordLabel, ...]


@dataclass
class Description:
    """Per-bar records: expert features and/or rows of latent codes."""

    expert: list[ExpertBarDescription] | None = None
    codes: list[tuple[int, ...]] | None = None

    def __post_init__(self):
        if self.expert is None and self.codes is None:
            raise ValueError("description needs expert records, codes, or both")
        if self.codes is not None:
            for row in self.codes:
                if len(row) != CODES_PER_BAR:
                    raise LengthMismatch(
                        f"expected {CODES_PER_BAR} codes per bar, got {len(row)}"
                    )
                for code in row:
                    if not 0 <= code < CODEBOOK_SIZE:
                        raise CodeOutOfRange(f"code {code} outside [0, {CODEBOOK_SIZE})")
        if self.expert is not None and self.codes is not None:
            if len(self.expert) != len(self.codes):
                raise LengthMismatch(
                    f"{len(self.expert)} expert records vs {len(self.codes)} code rows"
                )

    def __len__(self) -> int:
        return len(self.expert) if self.expert is not None else len(self.codes)


def expert_description(
    score: Score,
    chords: Sequence[ChordLabel] | None = None,
    chord_config: ChordConfig = DEFAULT_CHORD_CONFIG,
) -> Description:
    """Summarize every bar of the score.

    Per bar: the active signature; onset count per quarter note in 32 linear
    bins over [0, 12]; mean onset pitch and velocity in 32 linear bins over
    [0, 128]; mean duration (in onset positions) in 32 log bins over [1, 128];
    instruments with onsets in the bar (ascending id); chords sounding during
    the bar in first-occurrence order. `chords` overrides detection with one
    label per quarter-note beat.
    """
    normalized = normalize(score)
    bars = partition_bars(normalized)
    tpq = normalized.ticks_per_quarter

    beats_per_bar = [math.ceil(bar.quarter_length) for bar in bars]
    if chords is None:
        labels = detect_beat_chords(normalized, chord_config, bars=bars)
    else:
        labels = list(chords)
        if len(labels) != sum(beats_per_bar):
            raise LengthMismatch(
                f"{len(labels)} chord labels for {sum(beats_per_bar)} beats"
            )

    records: list[ExpertBarDescription] = []
    beat_cursor = 0
    for bar, n_beats in zip(bars, beats_per_bar):
        onsets = [
            n for n in normalized.notes if bar.start_tick <= n.onset_tick < bar.end_tick
        ]
        if onsets:
            density = len(onsets) / float(bar.quarter_length)
            mean_pitch = sum(n.pitch for n in onsets) / len(onsets)
            mean_velocity = sum(n.velocity for n in onsets) / len(onsets)
            mean_duration = (
                sum(n.duration_ticks for n in onsets) / len(onsets)
            ) * POSITIONS_PER_QUARTER / tpq
            bins = (
                vocab.quantize_note_density(density),
                vocab.quantize_mean_value(mean_pitch),
                vocab.quantize_mean_value(mean_velocity),
                vocab.quantize_mean_duration(mean_duration),
            )
        else:
            bins = (None, None, None, None)

        bar_labels: list[ChordLabel] = []
        for label in labels[beat_cursor : beat_cursor + n_beats]:
            if label != NO_CHORD and label not in bar_labels:
                bar_labels.append(label)
        beat_cursor += n_beats

        records.append(
            ExpertBarDescription(
                bar_index=bar.index,
                time_signature=bar.time_signature,
                note_density_bin=bins[0],
                mean_pitch_bin=bins[1],
                mean_velocity_bin=bins[2],
                mean_duration_bin=bins[3],
                instruments=tuple(sorted({n.instrument for n in onsets})),
                chords=tuple(bar_labels),
            )
        )
    return Description(expert=records)


def learned_description(
    codes: Sequence[Sequence[int]], expert: Sequence[ExpertBarDescription] | None = None
) -> Description:
    """Wrap per-bar latent code rows (optionally alongside expert records)."""
    rows = [tuple(int(c) for c in row) for row in codes]
    return Description(expert=list(expert) if expert is not None else None, codes=rows)


def medley_description(
    x1: Score, x2: Score, chord_config: ChordConfig = DEFAULT_CHORD_CONFIG
) -> Description:
    """Splice two pieces: bars 1-16 described from the first, 17-32 from the second.

    Records are copied field-for-field from the sources; only `bar_index` is
    renumbered 1..32. Raises TooShort when a source lacks the required bars.
    """
    first = expert_description(x1, chord_config=chord_config).expert
    second = expert_description(x2, chord_config=chord_config).expert
    if len(first) < MEDLEY_BARS_PER_SOURCE:
        raise TooShort(f"first input has {len(first)} bars, need {MEDLEY_BARS_PER_SOURCE}")
    if len(second) < 2 * MEDLEY_BARS_PER_SOURCE:
        raise TooShort(
            f"second input has {len(second)} bars, need {2 * MEDLEY_BARS_PER_SOURCE}"
        )
    spliced = first[:MEDLEY_BARS_PER_SOURCE] + second[MEDLEY_BARS_PER_SOURCE : 2 * MEDLEY_BARS_PER_SOURCE]
    return Description(
        expert=[replace(record, bar_index=i + 1) for i, record in enumerate(spliced)]
    )


def description_tokens(description: Description) -> TokenSequence:
    """Serialize a description deterministically.

    Layout per bar: `Bar_i`, then for expert records `TimeSignature`, the four
    feature tokens (omitted for bars without onsets), `Instrument_*` and
    `Chord_*` entries, then `Code_*` tokens when latent codes are present.
    """
    tokens: list[str] = [BOS]
    bar_align: list[int] = [0]

    def emit(token: str, bar_number: int) -> None:
        tokens.append(token)
        bar_align.append(bar_number)

    for i in range(len(description)):
        bar_number = i + 1
        emit(vocab.bar_token(bar_number), bar_number)
        if description.expert is not None:
            record = description.expert[i]
            emit(vocab.time_signature_token(*record.time_signature), bar_number)
            if record.note_density_bin is not None:
                emit(f"NoteDensity_{record.note_density_bin}", bar_number)
                emit(f"MeanPitch_{record.mean_pitch_bin}", bar_number)
                emit(f"MeanVelocity_{record.mean_velocity_bin}", bar_number)
                emit(f"MeanDuration_{record.mean_duration_bin}", bar_number)
            for instrument in record.instruments:
                emit(vocab.instrument_token(instrument_name(instrument)), bar_number)
            for chord in record.chords:
                emit(vocab.chord_token(chord.render()), bar_number)
        if description.codes is not None:
            for code in description.codes[i]:
                emit(f"Code_{code}", bar_number)
    emit(EOS, 0)
    return TokenSequence(tokens, bar_align)


def parse_description_tokens(tokens: Sequence[str]) -> Description:
    """Inverse of `description_tokens`."""
    if not tokens or tokens[0] != BOS or tokens[-1] != EOS:
        raise GrammarError(0 if not tokens or tokens[0] != BOS else len(tokens) - 1,
                           "description must be wrapped in bos/eos")
    expert: list[ExpertBarDescription] = []
    codes: list[tuple[int, ...]] = []
    any_expert = False
    any_codes = False

    i = 1
    expected_bar = 1
    while i < len(tokens) - 1:
        prefix, _, rest = tokens[i].partition("_")
        if prefix != "Bar" or int(rest) != expected_bar:
            raise GrammarError(i, f"expected Bar_{expected_bar}, got {tokens[i]!r}")
        i += 1
        signature = None
        stats: dict[str, int] = {}
        instruments: list[int] = []
        chord_list: list[ChordLabel] = []
        code_row: list[int] = []
        while i < len(tokens) - 1:
            prefix, _, rest = tokens[i].partition("_")
            if prefix == "Bar":
                break
            if prefix == "TimeSignature":
                num, den = rest.split("/")
                signature = (int(num), int(den))
            elif prefix == "Instrument":
                instruments.append(instrument_id(rest))
            elif prefix == "Chord":
                chord_list.append(ChordLabel.parse(rest))
            elif prefix == "Code":
                code_row.append(int(rest))
            elif prefix in ("NoteDensity", "MeanPitch", "MeanVelocity", "MeanDuration"):
                stats[prefix] = int(rest)
            else:
                raise GrammarError(i, f"unexpected description token {tokens[i]!r}")
            i += 1
        if signature is not None:
            any_expert = True
            expert.append(
                ExpertBarDescription(
                    bar_index=expected_bar,
                    time_signature=signature,
                    note_density_bin=stats.get("NoteDensity"),
                    mean_pitch_bin=stats.get("MeanPitch"),
                    mean_velocity_bin=stats.get("MeanVelocity"),
                    mean_duration_bin=stats.get("MeanDuration"),
                    instruments=tuple(instruments),
                    chords=tuple(chord_list),
                )
            )
        if code_row:
            any_codes = True
            codes.append(tuple(code_row))
        expected_bar += 1

    return Description(
        expert=expert if any_expert else None, codes=codes if any_codes else None
    )


class ExpertDescriptionExtractor(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper: Scores in, expert Descriptions out."""

    def __init__(self, chord_detector: ChordDetector | None = None):
        self.chord_detector = chord_detector

    def _config(self) -> ChordConfig:
        detector = self.chord_detector if self.chord_detector is not None else ChordDetector()
        return detector._config()

    def fit(self, X: Sequence[Score], y=None):
        return self

    def transform(self, X: Sequence[Score]) -> list[Description]:
        config = self._config()
        return [expert_description(score, chord_config=config) for score in X]
