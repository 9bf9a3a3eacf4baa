"""In-memory representation of a piece of music and its partition into bars.

A `Score` is the tick-based ground truth that both codec directions target:
absolute-time notes plus tempo and time-signature change lists. All public
functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, NamedTuple

from .errors import MalformedFile, OutOfBar

# Sentinel instrument id for the drum channel. Melodic instruments use their
# General-MIDI program number 0..127.
DRUMS = 128

MAX_TS_NUMERATOR = 12
TS_DENOMINATORS = (2, 4, 8, 16)


class TempoEvent(NamedTuple):
    tick: int
    bpm: float


class TimeSignatureEvent(NamedTuple):
    tick: int
    numerator: int
    denominator: int


@dataclass(frozen=True, slots=True)
class Note:
    """A single note; `instrument` is a GM program number or `DRUMS`."""

    onset_tick: int
    duration_ticks: int
    pitch: int
    velocity: int
    instrument: int

    @property
    def end_tick(self) -> int:
        return self.onset_tick + self.duration_ticks


@dataclass(slots=True)
class Score:
    """Normalized event lists decoded from a MIDI file.

    Invariants (established by `normalize`):
      * event lists sorted by tick,
      * a time signature exists at tick 0,
      * time-signature changes sit on bar boundaries,
      * notes of one instrument never overlap at the same pitch.
    """

    notes: list[Note] = field(default_factory=list)
    tempo_changes: list[TempoEvent] = field(default_factory=list)
    time_signatures: list[TimeSignatureEvent] = field(default_factory=list)
    ticks_per_quarter: int = 480

    def end_tick(self) -> int:
        """Exclusive end of the last event (0 for an empty score)."""
        end = 0
        for note in self.notes:
            end = max(end, note.end_tick)
        for tick, _ in self.tempo_changes:
            end = max(end, tick + 1)
        for tick, _, _ in self.time_signatures:
            if tick > 0:
                end = max(end, tick + 1)
        return end


@dataclass(frozen=True, slots=True)
class Bar:
    """One measure. `index` is 1-based; ticks are half-open [start, end)."""

    index: int
    start_tick: int
    end_tick: int
    numerator: int
    denominator: int
    quarter_length: Fraction

    @property
    def time_signature(self) -> tuple[int, int]:
        return (self.numerator, self.denominator)


def check_time_signature(numerator: int, denominator: int) -> None:
    """Reject signatures outside the enumerable whitelist."""
    if not (1 <= numerator <= MAX_TS_NUMERATOR) or denominator not in TS_DENOMINATORS:
        raise MalformedFile(f"unsupported time signature {numerator}/{denominator}")


def bar_ticks(numerator: int, denominator: int, ticks_per_quarter: int) -> int:
    """Length of one bar in ticks (rounded when not integral)."""
    exact = Fraction(numerator * 4, denominator) * ticks_per_quarter
    return max(1, int(exact) if exact.denominator == 1 else round(exact))


def merge_same_pitch_overlaps(notes: Iterable[Note]) -> list[Note]:
    """Union overlapping notes per (instrument, pitch).

    Abutting half-open intervals are kept separate. The merged note takes the
    velocity of the earliest constituent (highest velocity on onset ties).
    """
    groups: dict[tuple[int, int], list[Note]] = {}
    for note in notes:
        groups.setdefault((note.instrument, note.pitch), []).append(note)

    merged: list[Note] = []
    for group in groups.values():
        group.sort(key=lambda n: (n.onset_tick, -n.velocity))
        current = group[0]
        for note in group[1:]:
            if note.onset_tick < current.end_tick:
                end = max(current.end_tick, note.end_tick)
                current = replace(current, duration_ticks=end - current.onset_tick)
            else:
                merged.append(current)
                current = note
        merged.append(current)
    merged.sort(key=lambda n: (n.onset_tick, n.instrument, n.pitch))
    return merged


def normalize_time_signatures(
    events: Iterable[TimeSignatureEvent], ticks_per_quarter: int
) -> list[TimeSignatureEvent]:
    """Snap signature changes onto bar boundaries and default to 4/4 at tick 0.

    Walks bars under the currently active signature; an event falling inside a
    bar takes effect at the next boundary. Several events resolving to the same
    boundary collapse to the last one.
    """
    pending = sorted(events, key=lambda e: e.tick)
    for event in pending:
        check_time_signature(event.numerator, event.denominator)

    normalized: list[TimeSignatureEvent] = []
    if not pending or pending[0].tick > 0:
        normalized.append(TimeSignatureEvent(0, 4, 4))

    boundary = 0
    for event in pending:
        while boundary < event.tick:
            active = normalized[-1]
            boundary += bar_ticks(active.numerator, active.denominator, ticks_per_quarter)
        snapped = TimeSignatureEvent(boundary, event.numerator, event.denominator)
        if normalized and normalized[-1].tick == boundary:
            normalized[-1] = snapped
        else:
            normalized.append(snapped)
    # Drop changes that do not change anything.
    deduped: list[TimeSignatureEvent] = []
    for event in normalized:
        if deduped and (event.numerator, event.denominator) == deduped[-1][1:]:
            continue
        deduped.append(event)
    return deduped


def check_note(note: Note) -> None:
    """Validate one note's field ranges."""
    if note.duration_ticks < 1:
        raise MalformedFile(f"note duration {note.duration_ticks} < 1 tick")
    if not 0 <= note.pitch <= 127:
        raise MalformedFile(f"pitch {note.pitch} outside [0, 127]")
    if not 1 <= note.velocity <= 127:
        raise MalformedFile(f"velocity {note.velocity} outside [1, 127]")
    if note.instrument != DRUMS and not 0 <= note.instrument <= 127:
        raise MalformedFile(f"instrument {note.instrument} is not a program or drums")


def normalize(score: Score) -> Score:
    """Return a Score satisfying all invariants (input left untouched)."""
    for note in score.notes:
        check_note(note)
    notes = merge_same_pitch_overlaps(score.notes)

    tempo: list[TempoEvent] = []
    for event in sorted(score.tempo_changes, key=lambda e: e.tick):
        if event.bpm <= 0:
            raise MalformedFile(f"non-positive tempo {event.bpm}")
        if tempo and tempo[-1].tick == event.tick:
            tempo[-1] = event
        else:
            tempo.append(event)
    if not tempo:
        tempo = [TempoEvent(0, 120.0)]

    signatures = normalize_time_signatures(score.time_signatures, score.ticks_per_quarter)
    return Score(
        notes=notes,
        tempo_changes=tempo,
        time_signatures=signatures,
        ticks_per_quarter=score.ticks_per_quarter,
    )


def partition_bars(score: Score, min_end_tick: int = 0) -> list[Bar]:
    """Tile [0, score end) with contiguous bars.

    Each bar carries the signature active at its start; a trailing partial
    region is extended to a full bar. `min_end_tick` forces coverage beyond
    the score's own events (used when quantized note ends stick out).
    """
    end = max(score.end_tick(), min_end_tick)
    if end <= 0:
        return []

    signatures = score.time_signatures
    if not signatures or signatures[0].tick != 0:
        signatures = normalize_time_signatures(signatures, score.ticks_per_quarter)

    bars: list[Bar] = []
    cursor = 0
    sig_idx = 0
    while cursor < end:
        while sig_idx + 1 < len(signatures) and signatures[sig_idx + 1].tick <= cursor:
            sig_idx += 1
        _, num, den = signatures[sig_idx]
        length = bar_ticks(num, den, score.ticks_per_quarter)
        bars.append(
            Bar(
                index=len(bars) + 1,
                start_tick=cursor,
                end_tick=cursor + length,
                numerator=num,
                denominator=den,
                quarter_length=Fraction(num * 4, den),
            )
        )
        cursor += length
    return bars


def split_score(score: Score, max_bars: int) -> list[Score]:
    """Cut a long score into consecutive segments of at most `max_bars` bars.

    Each segment is re-zeroed and starts with the tempo and signature active
    at its first bar; notes are clipped at segment boundaries.
    """
    normalized = normalize(score)
    bars = partition_bars(normalized)
    if len(bars) <= max_bars:
        return [normalized]

    segments: list[Score] = []
    for start in range(0, len(bars), max_bars):
        chunk = bars[start : start + max_bars]
        lo, hi = chunk[0].start_tick, chunk[-1].end_tick

        notes = [
            replace(
                note,
                onset_tick=note.onset_tick - lo,
                duration_ticks=min(note.duration_ticks, hi - note.onset_tick),
            )
            for note in normalized.notes
            if lo <= note.onset_tick < hi
        ]

        def active(events, default):
            current = default
            for event in events:
                if event.tick <= lo:
                    current = event
                else:
                    break
            return current

        tempo = [TempoEvent(0, active(normalized.tempo_changes, TempoEvent(0, 120.0)).bpm)]
        tempo += [
            TempoEvent(t - lo, bpm) for t, bpm in normalized.tempo_changes if lo < t < hi
        ]
        first_sig = active(normalized.time_signatures, TimeSignatureEvent(0, 4, 4))
        sigs = [TimeSignatureEvent(0, first_sig.numerator, first_sig.denominator)]
        sigs += [
            TimeSignatureEvent(t - lo, n, d)
            for t, n, d in normalized.time_signatures
            if lo < t < hi
        ]
        segments.append(
            normalize(
                Score(
                    notes=notes,
                    tempo_changes=tempo,
                    time_signatures=sigs,
                    ticks_per_quarter=normalized.ticks_per_quarter,
                )
            )
        )
    return segments


def bar_of_tick(bars: list[Bar], tick: int) -> Bar:
    """Bar containing `tick` (bars are half-open; tick must be covered)."""
    lo, hi = 0, len(bars) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        bar = bars[mid]
        if tick < bar.start_tick:
            hi = mid - 1
        elif tick >= bar.end_tick:
            lo = mid + 1
        else:
            return bar
    raise OutOfBar(f"tick {tick} not covered by the bar list")
