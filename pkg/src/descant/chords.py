"""Beat-wise chord labelling via template matching and Viterbi smoothing.

Each quarter-note window collects pitch-class evidence from the notes
sounding in it; 96 root/quality templates plus a no-chord label are scored
per window and the globally best label path (with a fixed penalty per label
change) is decoded. The template constants are frozen configuration so that
results stay reproducible; the lattice construction itself is this package's
own design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .score import Bar, DRUMS, Score, partition_bars

ROOT_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")

#: Quality name -> pitch-class intervals above the root.
QUALITY_TEMPLATES: dict[str, tuple[int, ...]] = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "maj7": (0, 4, 7, 11),
    "min7": (0, 3, 7, 10),
    "dom7": (0, 4, 7, 10),
    "half-dim7": (0, 3, 6, 10),
}

QUALITIES = tuple(QUALITY_TEMPLATES)
NO_CHORD_NAME = "N"


class ChordLabel(NamedTuple):
    """A chord root (pitch class) and quality; (None, None) is “no chord”."""

    root: int | None
    quality: str | None

    def render(self) -> str:
        if self.root is None:
            return NO_CHORD_NAME
        return f"{ROOT_NAMES[self.root]}:{self.quality}"

    @classmethod
    def parse(cls, text: str) -> "ChordLabel":
        if text == NO_CHORD_NAME:
            return NO_CHORD
        root_name, quality = text.split(":")
        if quality not in QUALITY_TEMPLATES:
            raise ValueError(f"unknown chord quality {quality!r}")
        return cls(ROOT_NAMES.index(root_name), quality)


NO_CHORD = ChordLabel(None, None)

#: Label order: id = root * len(QUALITIES) + quality index, no-chord last.
ALL_LABELS: tuple[ChordLabel, ...] = tuple(
    ChordLabel(root, quality) for root in range(12) for quality in QUALITIES
) + (NO_CHORD,)

CHORD_TOKEN_LABELS: tuple[str, ...] = tuple(label.render() for label in ALL_LABELS)

N_LABELS = len(ALL_LABELS)


@dataclass(frozen=True)
class ChordConfig:
    """Frozen scoring constants."""

    chord_tone_weight: float = 1.0
    missing_tone_penalty: float = 0.5
    non_chord_tone_penalty: float = 0.3
    transition_penalty: float = 0.4
    no_chord_score: float = 0.05


DEFAULT_CHORD_CONFIG = ChordConfig()


def chord_config_fingerprint() -> dict:
    """Chord constants as plain data, for the bin-config hash."""
    cfg = DEFAULT_CHORD_CONFIG
    return {
        "qualities": {q: list(t) for q, t in QUALITY_TEMPLATES.items()},
        "chord_tone_weight": cfg.chord_tone_weight,
        "missing_tone_penalty": cfg.missing_tone_penalty,
        "non_chord_tone_penalty": cfg.non_chord_tone_penalty,
        "transition_penalty": cfg.transition_penalty,
        "no_chord_score": cfg.no_chord_score,
    }


@dataclass
class ChordLattice:
    """Per-beat emission scores (beats x labels) plus the change penalty."""

    emissions: np.ndarray
    transition_penalty: float

    def __post_init__(self):
        self.emissions = np.asarray(self.emissions, dtype=float)
        if self.emissions.ndim != 2:
            raise ValueError("emissions must be 2-D (beats x labels)")
        if not np.isfinite(self.emissions).all():
            raise ValueError("emissions must be finite")


def emission_scores(evidence: np.ndarray, config: ChordConfig = DEFAULT_CHORD_CONFIG) -> np.ndarray:
    """Score every label against a 12-dim pitch-class evidence vector.

    A label earns `chord_tone_weight` per unit of evidence on its template
    tones, loses `non_chord_tone_penalty` per unit elsewhere, and pays
    `missing_tone_penalty` for each template tone with no evidence at all.
    The no-chord label always scores the fixed `no_chord_score` floor, so it
    wins exactly when nothing sounded (or the evidence fits no template).
    """
    evidence = np.asarray(evidence, dtype=float)
    if evidence.shape != (12,):
        raise ValueError("evidence must have 12 pitch-class entries")
    scores = np.empty(N_LABELS, dtype=float)
    total = evidence.sum()
    for label_id, label in enumerate(ALL_LABELS[:-1]):
        template = [(label.root + iv) % 12 for iv in QUALITY_TEMPLATES[label.quality]]
        in_template = evidence[template].sum()
        missing = sum(1 for pc in template if evidence[pc] == 0.0)
        scores[label_id] = (
            config.chord_tone_weight * in_template
            - config.non_chord_tone_penalty * (total - in_template)
            - config.missing_tone_penalty * missing
        )
    scores[-1] = config.no_chord_score
    return scores


def viterbi_chords(lattice: ChordLattice) -> list[ChordLabel]:
    """Label path maximizing emissions minus per-change transition penalties.

    Ties resolve toward the smaller label id at every decision, so the result
    is deterministic.
    """
    emissions = lattice.emissions
    n_beats, n_labels = emissions.shape
    if n_beats == 0:
        return []
    penalty = lattice.transition_penalty

    dp = emissions[0].copy()
    backptr = np.zeros((n_beats, n_labels), dtype=int)
    change = penalty * (1.0 - np.eye(n_labels))
    for t in range(1, n_beats):
        candidate = dp[:, None] - change
        backptr[t] = candidate.argmax(axis=0)
        dp = candidate.max(axis=0) + emissions[t]

    path = [int(dp.argmax())]
    for t in range(n_beats - 1, 0, -1):
        path.append(int(backptr[t][path[-1]]))
    path.reverse()
    return [ALL_LABELS[i] for i in path]


def window_emission_scores(
    score: Score,
    window: tuple[float, float],
    config: ChordConfig = DEFAULT_CHORD_CONFIG,
) -> np.ndarray:
    """Per-label scores for one tick window of a score (empty window -> no-chord)."""
    notes = [
        (float(n.onset_tick), float(n.end_tick), n.pitch)
        for n in score.notes
        if n.instrument != DRUMS
    ]
    return emission_scores(chord_evidence(notes, [window])[0], config)


def beat_windows(bars: Sequence[Bar], ticks_per_quarter: int) -> list[tuple[int, int]]:
    """Quarter-note windows tiling the bars; a short final beat is clipped."""
    windows: list[tuple[int, int]] = []
    for bar in bars:
        n_beats = math.ceil(bar.quarter_length)
        for b in range(n_beats):
            start = bar.start_tick + b * ticks_per_quarter
            end = min(start + ticks_per_quarter, bar.end_tick)
            windows.append((start, end))
    return windows


def chord_evidence(
    notes: Iterable[tuple[float, float, int]], windows: Sequence[tuple[float, float]]
) -> np.ndarray:
    """Pitch-class evidence per window from (onset, end, pitch) intervals.

    Each note contributes its overlapped fraction of the window; drums must
    already be filtered out by the caller.
    """
    evidence = np.zeros((len(windows), 12), dtype=float)
    if not windows:
        return evidence
    starts = np.array([w[0] for w in windows], dtype=float)
    ends = np.array([w[1] for w in windows], dtype=float)
    for onset, end, pitch in notes:
        overlap = np.minimum(ends, end) - np.maximum(starts, onset)
        mask = overlap > 0
        if mask.any():
            evidence[mask, pitch % 12] += overlap[mask] / (ends[mask] - starts[mask])
    return evidence


def label_beats(
    notes: Iterable[tuple[float, float, int]],
    windows: Sequence[tuple[float, float]],
    config: ChordConfig = DEFAULT_CHORD_CONFIG,
) -> list[ChordLabel]:
    """Evidence -> emissions -> Viterbi, for pre-built windows."""
    evidence = chord_evidence(notes, windows)
    emissions = np.stack([emission_scores(row, config) for row in evidence]) if len(evidence) else np.zeros((0, N_LABELS))
    return viterbi_chords(ChordLattice(emissions, config.transition_penalty))


def detect_beat_chords(
    score: Score, config: ChordConfig = DEFAULT_CHORD_CONFIG, bars: Sequence[Bar] | None = None
) -> list[ChordLabel]:
    """One chord label per quarter-note beat of the score."""
    if bars is None:
        bars = partition_bars(score)
    windows = beat_windows(bars, score.ticks_per_quarter)
    notes = [
        (float(n.onset_tick), float(n.end_tick), n.pitch)
        for n in score.notes
        if n.instrument != DRUMS
    ]
    return label_beats(notes, windows, config)


class ChordDetector(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper: Scores in, per-beat chord label lists out."""

    def __init__(
        self,
        chord_tone_weight: float = 1.0,
        missing_tone_penalty: float = 0.5,
        non_chord_tone_penalty: float = 0.3,
        transition_penalty: float = 0.4,
        no_chord_score: float = 0.05,
    ):
        self.chord_tone_weight = chord_tone_weight
        self.missing_tone_penalty = missing_tone_penalty
        self.non_chord_tone_penalty = non_chord_tone_penalty
        self.transition_penalty = transition_penalty
        self.no_chord_score = no_chord_score

    def _config(self) -> ChordConfig:
        return ChordConfig(
            chord_tone_weight=self.chord_tone_weight,
            missing_tone_penalty=self.missing_tone_penalty,
            non_chord_tone_penalty=self.non_chord_tone_penalty,
            transition_penalty=self.transition_penalty,
            no_chord_score=self.no_chord_score,
        )

    def fit(self, X: Sequence[Score], y=None):
        return self

    def transform(self, X: Sequence[Score]) -> list[list[ChordLabel]]:
        config = self._config()
        return [detect_beat_chords(score, config) for score in X]
