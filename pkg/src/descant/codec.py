"""Bidirectional codec between a Score and its bar-wise token sequence.

Encoding quantizes onsets to 12 slots per quarter note, velocities and tempi
to 32 linear bins, durations to the fixed mesh, then emits one deterministic
token stream: per bar a `Bar_i` and `TimeSignature` token followed by the
bar's events sorted by (position, event type, instrument, pitch) with event
types ordered Chord < Tempo < Note. Every note is five consecutive tokens
`Pos Instrument Pitch Vel Dur`.

Decoding is strict: any structural violation raises `GrammarError` with the
offending token index. `decode(encode(s))` differs from `s` only by
quantization, and `encode(decode(encode(s)))` reproduces the tokens exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .chords import ChordConfig, ChordLabel, DEFAULT_CHORD_CONFIG, NO_CHORD, label_beats
from .errors import GrammarError, LengthMismatch, VocabularyOverflow
from .instruments import instrument_id, instrument_name
from .score import (
    DRUMS,
    Bar,
    Note,
    Score,
    TempoEvent,
    TimeSignatureEvent,
    check_time_signature,
    normalize,
    partition_bars,
)
from . import vocab
from .vocab import (
    BOS,
    EOS,
    MAX_BARS,
    POSITIONS_PER_QUARTER,
    Vocabulary,
    positions_in_bar,
)

DEFAULT_DECODE_TPQ = 480


@dataclass
class TokenSequence:
    """Token strings plus per-token (bar index, position) alignment.

    Alignment index 0 means "outside any bar" (bos/eos). `ids` resolves the
    strings against a vocabulary when the model needs integers.
    """

    tokens: list[str]
    bar_indices: list[int] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.bar_indices:
            self.bar_indices = [0] * len(self.tokens)
        if not self.positions:
            self.positions = [0] * len(self.tokens)
        if not (len(self.tokens) == len(self.bar_indices) == len(self.positions)):
            raise LengthMismatch("alignment arrays must match token count")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenSequence) and self.tokens == other.tokens

    def ids(self, vocabulary: Vocabulary) -> list[int]:
        return vocabulary.encode(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


# --- token classification -------------------------------------------------

KIND_SPECIAL = "special"
KIND_BAR = "bar"
KIND_TS = "time_signature"
KIND_POS = "position"
KIND_TEMPO = "tempo"
KIND_CHORD = "chord"
KIND_INSTRUMENT = "instrument"
KIND_PITCH = "pitch"
KIND_VEL = "velocity"
KIND_DUR = "duration"


def classify_token(token: str) -> tuple[str, object]:
    """Split a token into its kind and payload value."""
    if token in (BOS, EOS, vocab.PAD):
        return KIND_SPECIAL, token
    prefix, _, rest = token.partition("_")
    if prefix == "Bar":
        return KIND_BAR, int(rest)
    if prefix == "TimeSignature":
        num, den = rest.split("/")
        return KIND_TS, (int(num), int(den))
    if prefix == "Pos":
        return KIND_POS, int(rest)
    if prefix == "Tempo":
        return KIND_TEMPO, int(rest)
    if prefix == "Chord":
        return KIND_CHORD, rest
    if prefix == "Instrument":
        return KIND_INSTRUMENT, rest
    if prefix == "Pitch":
        return KIND_PITCH, int(rest)
    if prefix == "Vel":
        return KIND_VEL, int(rest)
    if prefix == "Dur":
        return KIND_DUR, int(rest)
    raise ValueError(f"unclassifiable token {token!r}")


# --- encoding ---------------------------------------------------------------


@dataclass(frozen=True)
class _QuantNote:
    abs_pos: int
    duration: int
    pitch: int
    velocity_bin: int
    instrument: int

    def sort_key(self):
        drum_rank = 0 if self.instrument == DRUMS else 1
        program = 0 if self.instrument == DRUMS else self.instrument
        return (drum_rank, program, self.pitch)


def _largest_mesh_at_most(limit: int) -> int:
    best = vocab.DURATION_MESH[0]
    for value in vocab.DURATION_MESH:
        if value <= limit:
            best = value
        else:
            break
    return best


def _extend_bars(bars: list[Bar], offsets: list[int], needed_positions: int, tpq: int) -> None:
    """Append bars with the last active signature until coverage suffices."""
    while offsets[-1] < needed_positions:
        last = bars[-1]
        num, den = last.numerator, last.denominator
        length_pos = positions_in_bar(num, den)
        length_ticks = round(length_pos * tpq / POSITIONS_PER_QUARTER)
        bars.append(
            Bar(
                index=len(bars) + 1,
                start_tick=last.end_tick,
                end_tick=last.end_tick + length_ticks,
                numerator=num,
                denominator=den,
                quarter_length=Fraction(num * 4, den),
            )
        )
        offsets.append(offsets[-1] + length_pos)


def encode_score(
    score: Score,
    chords: Sequence[ChordLabel] | None = None,
    chord_config: ChordConfig = DEFAULT_CHORD_CONFIG,
) -> TokenSequence:
    """Quantize a Score and serialize it as a token sequence.

    `chords` may supply one label per quarter-note beat; by default labels are
    detected from the quantized notes so that encode/decode/encode is exact.
    Events past the last quantized note end are dropped. Raises
    `VocabularyOverflow` when more than `MAX_BARS` bars are needed.
    """
    normalized = normalize(score)
    tpq = normalized.ticks_per_quarter
    bars = partition_bars(normalized)

    offsets = [0]
    for bar in bars:
        offsets.append(offsets[-1] + positions_in_bar(bar.numerator, bar.denominator))

    def locate(tick: int) -> tuple[int, int]:
        """(bar array index, position in bar) for a covered tick."""
        lo, hi = 0, len(bars) - 1
        while lo <= hi:
            mid = (lo + hi) // 2
            if tick < bars[mid].start_tick:
                hi = mid - 1
            elif tick >= bars[mid].end_tick:
                lo = mid + 1
            else:
                return mid, vocab.quantize_position(tick, bars[mid], tpq)
        raise VocabularyOverflow(f"tick {tick} beyond partitioned bars")

    # Quantize notes into absolute position space.
    raw: dict[tuple[int, int, int], tuple[float, int]] = {}
    for note in normalized.notes:
        bar_idx, pos = locate(note.onset_tick)
        abs_pos = offsets[bar_idx] + pos
        duration = note.duration_ticks * POSITIONS_PER_QUARTER / tpq
        key = (abs_pos, note.instrument, note.pitch)
        previous = raw.get(key)
        candidate = (duration, vocab.quantize_velocity(note.velocity))
        if previous is None or candidate > previous:
            raw[key] = candidate

    by_voice: dict[tuple[int, int], list[_QuantNote]] = {}
    for (abs_pos, instrument, pitch), (duration, vel_bin) in raw.items():
        by_voice.setdefault((instrument, pitch), []).append(
            _QuantNote(abs_pos, vocab.quantize_duration(duration), pitch, vel_bin, instrument)
        )

    notes: list[_QuantNote] = []
    for voice in by_voice.values():
        voice.sort(key=lambda n: n.abs_pos)
        for i, note in enumerate(voice):
            duration = note.duration
            if i + 1 < len(voice):
                gap = voice[i + 1].abs_pos - note.abs_pos
                if duration > gap:
                    duration = _largest_mesh_at_most(gap)
            notes.append(
                _QuantNote(note.abs_pos, duration, note.pitch, note.velocity_bin, note.instrument)
            )

    content_end = max((n.abs_pos + n.duration for n in notes), default=0)
    if content_end == 0:
        return TokenSequence([BOS, EOS])

    _extend_bars(bars, offsets, content_end, tpq)
    n_bars = next(i for i in range(len(bars), 0, -1) if offsets[i - 1] < content_end)
    if n_bars > MAX_BARS:
        raise VocabularyOverflow(f"{n_bars} bars exceed the {MAX_BARS}-bar vocabulary")
    bars = bars[:n_bars]

    # Tempo changes in absolute position space, clipped to kept bars.
    tempo_changes: list[tuple[int, int]] = []
    for tick, bpm in normalized.tempo_changes:
        try:
            bar_idx, pos = locate(tick)
        except VocabularyOverflow:
            continue
        if bar_idx >= n_bars:
            continue
        abs_pos = offsets[bar_idx] + pos
        bin_index = vocab.quantize_tempo(bpm)
        if tempo_changes and tempo_changes[-1][0] == abs_pos:
            tempo_changes[-1] = (abs_pos, bin_index)
        else:
            tempo_changes.append((abs_pos, bin_index))
    deduped: list[tuple[int, int]] = []
    for abs_pos, bin_index in tempo_changes:
        if deduped and deduped[-1][1] == bin_index:
            continue
        deduped.append((abs_pos, bin_index))
    tempo_changes = deduped or [(0, vocab.quantize_tempo(120.0))]

    # Per-beat chord labels over the quantized notes (drums carry no harmony).
    beat_spans: list[tuple[int, int, int]] = []  # (bar array index, start pos, end pos)
    for b in range(n_bars):
        bar_positions = offsets[b + 1] - offsets[b]
        for start in range(0, bar_positions, POSITIONS_PER_QUARTER):
            beat_spans.append(
                (
                    b,
                    offsets[b] + start,
                    offsets[b] + min(start + POSITIONS_PER_QUARTER, bar_positions),
                )
            )
    if chords is None:
        harmonic = [
            (float(n.abs_pos), float(n.abs_pos + n.duration), n.pitch)
            for n in notes
            if n.instrument != DRUMS
        ]
        labels = label_beats(harmonic, [(s, e) for _, s, e in beat_spans], chord_config)
    else:
        if len(chords) != len(beat_spans):
            raise LengthMismatch(
                f"{len(chords)} chord labels for {len(beat_spans)} beats"
            )
        labels = list(chords)

    chord_events: list[tuple[int, ChordLabel]] = []  # (abs pos, label)
    previous: ChordLabel | None = None
    for (bar_idx, start, _), label in zip(beat_spans, labels):
        if label != previous and label != NO_CHORD:
            chord_events.append((start, label))
        previous = label

    # Assemble per-bar event lists: (pos, type_rank, tiebreak, payload tokens)
    tokens: list[str] = [BOS]
    bar_align: list[int] = [0]
    pos_align: list[int] = [0]

    def emit(token: str, bar_number: int, position: int) -> None:
        tokens.append(token)
        bar_align.append(bar_number)
        pos_align.append(position)

    tempo_idx = 0
    current_tempo = tempo_changes[0][1]
    chord_idx = 0
    note_idx = 0
    notes.sort(key=lambda n: (n.abs_pos, *n.sort_key()))

    for b in range(n_bars):
        bar = bars[b]
        bar_number = b + 1
        start_pos, end_pos = offsets[b], offsets[b + 1]
        emit(vocab.bar_token(bar_number), bar_number, 0)
        emit(vocab.time_signature_token(bar.numerator, bar.denominator), bar_number, 0)

        events: list[tuple[int, int, tuple, list[str]]] = []
        # Tempo is restated at every bar start and on every change inside it.
        while tempo_idx < len(tempo_changes) and tempo_changes[tempo_idx][0] <= start_pos:
            current_tempo = tempo_changes[tempo_idx][1]
            tempo_idx += 1
        events.append((0, 1, (), [vocab.tempo_token(current_tempo)]))
        probe = tempo_idx
        while probe < len(tempo_changes) and tempo_changes[probe][0] < end_pos:
            abs_pos, bin_index = tempo_changes[probe]
            events.append((abs_pos - start_pos, 1, (), [vocab.tempo_token(bin_index)]))
            probe += 1

        while chord_idx < len(chord_events) and chord_events[chord_idx][0] < end_pos:
            abs_pos, label = chord_events[chord_idx]
            events.append((abs_pos - start_pos, 0, (), [vocab.chord_token(label.render())]))
            chord_idx += 1

        while note_idx < len(notes) and notes[note_idx].abs_pos < end_pos:
            note = notes[note_idx]
            events.append(
                (
                    note.abs_pos - start_pos,
                    2,
                    note.sort_key(),
                    [
                        vocab.instrument_token(instrument_name(note.instrument)),
                        vocab.pitch_token(note.pitch),
                        vocab.velocity_token(note.velocity_bin),
                        vocab.duration_token(note.duration),
                    ],
                )
            )
            note_idx += 1

        events.sort(key=lambda e: (e[0], e[1], e[2]))
        for position, _, _, payload in events:
            emit(vocab.position_token(position), bar_number, position)
            for token in payload:
                emit(token, bar_number, position)

    emit(EOS, 0, 0)
    return TokenSequence(tokens, bar_align, pos_align)


# --- grammar / decoding -----------------------------------------------------

_STAGE_START = "start"
_STAGE_BAR_OR_END = "bar_or_end"
_STAGE_AFTER_BAR = "after_bar"
_STAGE_EVENT_HEAD = "event_head"
_STAGE_AFTER_INSTRUMENT = "after_instrument"
_STAGE_AFTER_PITCH = "after_pitch"
_STAGE_AFTER_VEL = "after_vel"
_STAGE_DONE = "done"


class GrammarState:
    """Incremental recognizer for the token grammar.

    Mirrors exactly what `decode_tokens` accepts, so a sampler that only emits
    tokens from `legal_tokens()` always produces decodable sequences.
    """

    def __init__(self):
        self.stage = _STAGE_START
        self.current_bar = 0
        self.bar_positions = 0
        self.index = 0

    def step(self, token: str) -> None:
        try:
            kind, value = classify_token(token)
        except ValueError as exc:
            raise GrammarError(self.index, str(exc)) from None
        stage = self.stage

        if stage == _STAGE_START:
            if token != BOS:
                raise GrammarError(self.index, f"expected {BOS}, got {token!r}")
            self.stage = _STAGE_BAR_OR_END
        elif stage == _STAGE_DONE:
            raise GrammarError(self.index, f"token {token!r} after {EOS}")
        elif stage == _STAGE_BAR_OR_END:
            if token == EOS:
                self.stage = _STAGE_DONE
            elif kind == KIND_BAR:
                if value != self.current_bar + 1:
                    raise GrammarError(
                        self.index,
                        f"bar index {value} does not follow bar {self.current_bar}",
                    )
                if value > MAX_BARS:
                    raise GrammarError(self.index, f"bar index {value} over {MAX_BARS}")
                self.current_bar = value
                self.stage = _STAGE_AFTER_BAR
            elif kind == KIND_POS and self.current_bar >= 1:
                if not 0 <= value < self.bar_positions:
                    raise GrammarError(
                        self.index, f"position {value} outside bar of {self.bar_positions} slots"
                    )
                self.stage = _STAGE_EVENT_HEAD
            else:
                raise GrammarError(self.index, f"expected Bar/Pos/{EOS}, got {token!r}")
        elif stage == _STAGE_AFTER_BAR:
            if kind != KIND_TS:
                raise GrammarError(self.index, f"bar must open with TimeSignature, got {token!r}")
            num, den = value
            try:
                check_time_signature(num, den)
            except Exception:
                raise GrammarError(self.index, f"unsupported time signature {num}/{den}") from None
            self.bar_positions = positions_in_bar(num, den)
            self.stage = _STAGE_BAR_OR_END
        elif stage == _STAGE_EVENT_HEAD:
            if kind == KIND_CHORD:
                try:
                    ChordLabel.parse(value)
                except ValueError:
                    raise GrammarError(self.index, f"bad chord label {value!r}") from None
                self.stage = _STAGE_BAR_OR_END
            elif kind == KIND_TEMPO:
                if not 0 <= value < vocab.TEMPO_BINS:
                    raise GrammarError(self.index, f"tempo bin {value} out of range")
                self.stage = _STAGE_BAR_OR_END
            elif kind == KIND_INSTRUMENT:
                try:
                    instrument_id(value)
                except KeyError:
                    raise GrammarError(self.index, f"unknown instrument {value!r}") from None
                self.stage = _STAGE_AFTER_INSTRUMENT
            else:
                raise GrammarError(
                    self.index, f"expected Chord/Tempo/Instrument after Pos, got {token!r}"
                )
        elif stage == _STAGE_AFTER_INSTRUMENT:
            if kind != KIND_PITCH or not 0 <= value < 128:
                raise GrammarError(self.index, f"expected Pitch after Instrument, got {token!r}")
            self.stage = _STAGE_AFTER_PITCH
        elif stage == _STAGE_AFTER_PITCH:
            if kind != KIND_VEL or not 0 <= value < vocab.VELOCITY_BINS:
                raise GrammarError(self.index, f"expected Vel after Pitch, got {token!r}")
            self.stage = _STAGE_AFTER_VEL
        elif stage == _STAGE_AFTER_VEL:
            if kind != KIND_DUR or value not in vocab.DURATION_MESH:
                raise GrammarError(self.index, f"expected Dur after Vel, got {token!r}")
            self.stage = _STAGE_BAR_OR_END
        else:  # pragma: no cover - all stages handled
            raise AssertionError(stage)
        self.index += 1

    def legal_kinds(self) -> dict[str, object]:
        """Map of admissible kinds to constraints for the current stage."""
        stage = self.stage
        if stage == _STAGE_START:
            return {KIND_SPECIAL: BOS}
        if stage == _STAGE_DONE:
            return {}
        if stage == _STAGE_BAR_OR_END:
            legal: dict[str, object] = {KIND_SPECIAL: EOS}
            if self.current_bar < MAX_BARS:
                legal[KIND_BAR] = self.current_bar + 1
            if self.current_bar >= 1:
                legal[KIND_POS] = self.bar_positions
            return legal
        if stage == _STAGE_AFTER_BAR:
            return {KIND_TS: None}
        if stage == _STAGE_EVENT_HEAD:
            return {KIND_CHORD: None, KIND_TEMPO: None, KIND_INSTRUMENT: None}
        if stage == _STAGE_AFTER_INSTRUMENT:
            return {KIND_PITCH: None}
        if stage == _STAGE_AFTER_PITCH:
            return {KIND_VEL: None}
        if stage == _STAGE_AFTER_VEL:
            return {KIND_DUR: None}
        raise AssertionError(stage)


class VocabularyIndex:
    """Precomputed kind/value tables for fast legality masks over a vocabulary."""

    def __init__(self, vocabulary: Vocabulary):
        self.vocabulary = vocabulary
        n = len(vocabulary)
        self.kinds: list[str] = [""] * n
        self.values: list[object] = [None] * n
        self._by_kind: dict[str, np.ndarray] = {}
        self._bar_ids: dict[int, int] = {}
        self._pos_ids: dict[int, int] = {}
        kind_members: dict[str, list[int]] = {}
        for token_id, token in enumerate(vocabulary.tokens):
            kind, value = classify_token(token)
            self.kinds[token_id] = kind
            self.values[token_id] = value
            kind_members.setdefault(kind, []).append(token_id)
            if kind == KIND_BAR:
                self._bar_ids[value] = token_id
            elif kind == KIND_POS:
                self._pos_ids[value] = token_id
        for kind, members in kind_members.items():
            self._by_kind[kind] = np.array(members, dtype=np.int64)

    def legal_mask(self, state: GrammarState) -> np.ndarray:
        mask = np.zeros(len(self.vocabulary), dtype=bool)
        for kind, constraint in state.legal_kinds().items():
            if kind == KIND_SPECIAL:
                mask[self.vocabulary.id(constraint)] = True
            elif kind == KIND_BAR:
                token_id = self._bar_ids.get(constraint)
                if token_id is not None:
                    mask[token_id] = True
            elif kind == KIND_POS:
                for p in range(constraint):
                    mask[self._pos_ids[p]] = True
            else:
                mask[self._by_kind[kind]] = True
        return mask


def validate_tokens(tokens: Sequence[str]) -> None:
    """Raise GrammarError unless `tokens` is a complete well-formed sequence."""
    state = GrammarState()
    for token in tokens:
        state.step(token)
    if state.stage != _STAGE_DONE:
        raise GrammarError(len(tokens), f"sequence ended before {EOS}")


def decode_tokens(
    tokens: Sequence[str], ticks_per_quarter: int = DEFAULT_DECODE_TPQ
) -> Score:
    """Reconstruct a Score from a well-formed token sequence.

    Chord tokens are conditioning-only and carry no notes, so they are
    validated and skipped. Re-encoding the result reproduces codec-produced
    input token-for-token.
    """
    validate_tokens(tokens)
    tpq = ticks_per_quarter

    notes: list[Note] = []
    tempo_changes: list[TempoEvent] = []
    signatures: list[TimeSignatureEvent] = []
    bar_start = 0
    bar_end = 0
    current_sig: tuple[int, int] | None = None
    current_tempo_bin: int | None = None
    position_tick = 0

    i = 1  # skip bos
    while tokens[i] != EOS:
        kind, value = classify_token(tokens[i])
        if kind == KIND_BAR:
            bar_start = bar_end
            num, den = classify_token(tokens[i + 1])[1]
            if (num, den) != current_sig:
                signatures.append(TimeSignatureEvent(bar_start, num, den))
                current_sig = (num, den)
            bar_end = bar_start + round(
                positions_in_bar(num, den) * tpq / POSITIONS_PER_QUARTER
            )
            i += 2
            continue
        # kind == KIND_POS
        position_tick = bar_start + round(value * tpq / POSITIONS_PER_QUARTER)
        head_kind, head_value = classify_token(tokens[i + 1])
        if head_kind == KIND_TEMPO:
            if head_value != current_tempo_bin:
                tempo_changes.append(
                    TempoEvent(position_tick, vocab.tempo_bin_value(head_value))
                )
                current_tempo_bin = head_value
            i += 2
        elif head_kind == KIND_CHORD:
            i += 2
        else:  # instrument: a five-token note
            pitch = classify_token(tokens[i + 2])[1]
            vel_bin = classify_token(tokens[i + 3])[1]
            mesh = classify_token(tokens[i + 4])[1]
            notes.append(
                Note(
                    onset_tick=position_tick,
                    duration_ticks=max(1, round(mesh * tpq / POSITIONS_PER_QUARTER)),
                    pitch=pitch,
                    velocity=vocab.velocity_bin_value(vel_bin),
                    instrument=instrument_id(head_value),
                )
            )
            i += 5

    return normalize(
        Score(
            notes=notes,
            tempo_changes=tempo_changes or [TempoEvent(0, 120.0)],
            time_signatures=signatures or [TimeSignatureEvent(0, 4, 4)],
            ticks_per_quarter=tpq,
        )
    )


class ScoreCodec(BaseEstimator, TransformerMixin):
    """Estimator-style codec: `transform` encodes, `inverse_transform` decodes."""

    def __init__(
        self,
        ticks_per_quarter: int = DEFAULT_DECODE_TPQ,
        chord_config: ChordConfig = DEFAULT_CHORD_CONFIG,
    ):
        self.ticks_per_quarter = ticks_per_quarter
        self.chord_config = chord_config

    def fit(self, X: Sequence[Score], y=None):
        return self

    def transform(self, X: Sequence[Score]) -> list[TokenSequence]:
        return [encode_score(score, chord_config=self.chord_config) for score in X]

    def inverse_transform(self, X: Sequence[TokenSequence]) -> list[Score]:
        return [decode_tokens(seq.tokens, self.ticks_per_quarter) for seq in X]
