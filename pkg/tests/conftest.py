"""Shared fixtures: seeded synthetic scores and an in-memory MIDI corpus."""

from __future__ import annotations

import numpy as np
import pytest

from descant.score import DRUMS, Note, Score, TempoEvent, TimeSignatureEvent

SIGNATURES = ((4, 4), (3, 4), (6, 8), (2, 4), (12, 8), (7, 8), (5, 4))


def make_random_score(
    rng: np.random.Generator,
    max_bars: int = 6,
    max_notes: int = 40,
    ticks_per_quarter: int = 480,
    clean_voices: bool = False,
) -> Score:
    """Random multi-track, multi-signature score.

    With `clean_voices` every (instrument, pitch) voice keeps its notes at
    least one quarter apart and strictly shorter than the gap, so codec
    quantization never merges or shortens anything.
    """
    n_sigs = int(rng.integers(1, 3))
    sig_choices = [SIGNATURES[i] for i in rng.choice(len(SIGNATURES), n_sigs, replace=False)]

    signatures = [TimeSignatureEvent(0, *sig_choices[0])]
    bar_lengths = []
    cursor = 0
    n_bars = int(rng.integers(2, max_bars + 1))
    active = sig_choices[0]
    for b in range(n_bars):
        if len(sig_choices) > 1 and b == n_bars // 2:
            active = sig_choices[1]
            signatures.append(TimeSignatureEvent(cursor, *active))
        length = active[0] * 4 * ticks_per_quarter // active[1]
        bar_lengths.append((cursor, length))
        cursor += length
    total = cursor

    instruments = list(rng.choice(128, int(rng.integers(1, 4)), replace=False))
    if rng.random() < 0.5:
        instruments.append(DRUMS)

    notes: list[Note] = []
    n_notes = int(rng.integers(1, max_notes + 1))
    used: dict[tuple[int, int], int] = {}
    for _ in range(n_notes):
        instrument = int(instruments[rng.integers(0, len(instruments))])
        pitch = int(rng.integers(30, 96))
        if clean_voices:
            last_end = used.get((instrument, pitch), 0)
            onset = last_end + int(rng.integers(0, 3)) * ticks_per_quarter
            if onset >= total:
                continue
            duration = int(rng.integers(1, 3)) * ticks_per_quarter // 2
            used[(instrument, pitch)] = onset + duration + ticks_per_quarter
        else:
            onset = int(rng.integers(0, total))
            duration = int(rng.integers(10, 2 * ticks_per_quarter))
        velocity = int(rng.integers(1, 128))
        notes.append(Note(onset, duration, pitch, velocity, instrument))

    if not notes:
        notes = [Note(0, ticks_per_quarter, 60, 80, 0)]

    tempi = [TempoEvent(0, float(rng.integers(40, 220)))]
    if rng.random() < 0.4:
        tempi.append(TempoEvent(int(total // 2), float(rng.integers(40, 220))))

    return Score(
        notes=notes,
        tempo_changes=tempi,
        time_signatures=signatures,
        ticks_per_quarter=ticks_per_quarter,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def simple_score() -> Score:
    """Two bars, 4/4 then 3/4, three instruments including drums."""
    return Score(
        notes=[
            Note(0, 480, 60, 90, 0),
            Note(0, 240, 36, 100, DRUMS),
            Note(480, 960, 64, 85, 24),
            Note(1920, 480, 67, 70, 0),
        ],
        tempo_changes=[TempoEvent(0, 120.0), TempoEvent(1920, 150.0)],
        time_signatures=[TimeSignatureEvent(0, 4, 4), TimeSignatureEvent(1920, 3, 4)],
        ticks_per_quarter=480,
    )
