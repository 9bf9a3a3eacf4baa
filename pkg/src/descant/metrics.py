"""Similarity, fidelity and diversity measures between scores.

All bar-aligned metrics compare the i-th bar of the ground truth against the
i-th bar of the reconstruction, so temporal order matters (permuting bars
changes the result even when whole-piece histograms agree). Degenerate cases
are totalized explicitly: bar pairs that are both empty count as perfect,
half-empty pairs as complete misses, and near-constant Gaussian fits use a
0.5 standard-deviation floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .chords import ChordConfig, DEFAULT_CHORD_CONFIG, NO_CHORD, detect_beat_chords
from .errors import EmptyCorpus, LengthMismatch, ZeroMean
from .score import DRUMS, Score, normalize, partition_bars
from .vocab import POSITIONS_PER_QUARTER, positions_in_bar

SIGMA_FLOOR = 0.5


def gaussian_overlap(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """Area under the pointwise minimum of two normal densities.

    Standard deviations below the 0.5 floor are lifted to it, keeping the
    measure total on degenerate fits. Computed exactly from the density
    intersection points and normal CDFs; result is in [0, 1].
    """
    s1 = max(float(sigma1), SIGMA_FLOOR)
    s2 = max(float(sigma2), SIGMA_FLOOR)
    m1, m2 = float(mu1), float(mu2)
    if (m1, s1) == (m2, s2):
        return 1.0

    if s1 == s2:
        # Single intersection halfway between the means.
        half = abs(m2 - m1) / 2.0
        return float(2.0 * norm.cdf(-half / s1))

    # log n1(x) = log n2(x)  <=>  a x^2 + b x + c = 0
    a = 1.0 / s2**2 - 1.0 / s1**2
    b = 2.0 * (m1 / s1**2 - m2 / s2**2)
    c = m2**2 / s2**2 - m1**2 / s1**2 + 2.0 * math.log(s2 / s1)
    disc = b * b - 4.0 * a * c
    if disc <= 0:
        roots: list[float] = []
    else:
        sqrt_disc = math.sqrt(disc)
        roots = sorted([(-b - sqrt_disc) / (2 * a), (-b + sqrt_disc) / (2 * a)])

    edges = [-math.inf, *roots, math.inf]
    area = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = (
            (lo + hi) / 2.0
            if math.isfinite(lo) and math.isfinite(hi)
            else (hi - 1.0 if math.isfinite(hi) else lo + 1.0)
        )
        if norm.pdf(mid, m1, s1) <= norm.pdf(mid, m2, s2):
            mu, sigma = m1, s1
        else:
            mu, sigma = m2, s2
        area += norm.cdf(hi, mu, sigma) - norm.cdf(lo, mu, sigma)
    return float(min(max(area, 0.0), 1.0))


def _fit(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def moa(x: Sequence[Sequence[float]], y: Sequence[Sequence[float]]) -> float:
    """Mean over bars of the Gaussian overlap of bar-wise feature fits.

    Both-empty bars score 1, one-empty bars 0.
    """
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)} bars")
    if not x:
        return 1.0
    total = 0.0
    for bx, by in zip(x, y):
        if len(bx) == 0 and len(by) == 0:
            total += 1.0
        elif len(bx) == 0 or len(by) == 0:
            total += 0.0
        else:
            total += gaussian_overlap(*_fit(bx), *_fit(by))
    return total / len(x)


def nd_nrmse(x: Sequence[float], x_hat: Sequence[float]) -> float:
    """Root-mean-square bar-wise error divided by the ground-truth mean."""
    if len(x) != len(x_hat):
        raise LengthMismatch(f"{len(x)} vs {len(x_hat)} bars")
    gt = np.asarray(x, dtype=float)
    pred = np.asarray(x_hat, dtype=float)
    mean = gt.mean() if len(gt) else 0.0
    if mean <= 0:
        raise ZeroMean("ground-truth mean must be positive")
    return float(np.sqrt(np.mean((pred - gt) ** 2)) / mean)


def cosine_sim_series(
    v_x: Sequence[np.ndarray], v_y: Sequence[np.ndarray]
) -> float:
    """Mean bar-wise cosine similarity; two zero vectors count as 1, one as 0."""
    if len(v_x) != len(v_y):
        raise LengthMismatch(f"{len(v_x)} vs {len(v_y)} bars")
    if not v_x:
        return 1.0
    total = 0.0
    for a, b in zip(v_x, v_y):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if len(a) != len(b):
            width = max(len(a), len(b))
            a = np.pad(a, (0, width - len(a)))
            b = np.pad(b, (0, width - len(b)))
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 and nb == 0.0:
            total += 1.0
        elif na == 0.0 or nb == 0.0:
            total += 0.0
        else:
            total += float(a @ b / (na * nb))
    return total / len(v_x)


def chroma_vector(bar_notes) -> np.ndarray:
    """Onset counts per pitch class; drums carry no pitch class."""
    out = np.zeros(12, dtype=float)
    for note in bar_notes:
        if note.instrument != DRUMS:
            out[note.pitch % 12] += 1.0
    return out


def grooving_vector(bar_notes, bar, ticks_per_quarter: int) -> np.ndarray:
    """Onset-occupancy indicator over the bar's quantized positions (drums too)."""
    from .vocab import quantize_position

    out = np.zeros(positions_in_bar(bar.numerator, bar.denominator), dtype=float)
    for note in bar_notes:
        out[quantize_position(note.onset_tick, bar, ticks_per_quarter)] = 1.0
    return out


def multilabel_f1(true_bars: Sequence[set], pred_bars: Sequence[set]) -> float:
    """Mean per-bar set F1 (2|A∩B| / (|A|+|B|)); two empty sets score 1."""
    if len(true_bars) != len(pred_bars):
        raise LengthMismatch(f"{len(true_bars)} vs {len(pred_bars)} bars")
    if not true_bars:
        return 1.0
    total = 0.0
    for a, b in zip(true_bars, pred_bars):
        a, b = set(a), set(b)
        if not a and not b:
            total += 1.0
        elif a or b:
            total += 2.0 * len(a & b) / (len(a) + len(b))
    return total / len(true_bars)


def ts_accuracy(true_sigs: Sequence[tuple], pred_sigs: Sequence[tuple]) -> float:
    """Fraction of bars whose signatures agree."""
    if len(true_sigs) != len(pred_sigs):
        raise LengthMismatch(f"{len(true_sigs)} vs {len(pred_sigs)} bars")
    if not true_sigs:
        return 1.0
    return sum(a == b for a, b in zip(true_sigs, pred_sigs)) / len(true_sigs)


def token_entropy(samples: Sequence[Sequence[str]], token_class: str) -> float:
    """Shannon entropy (nats) of instrument or chord tokens pooled over samples."""
    prefix = {"instrument": "Instrument_", "chord": "Chord_"}[token_class]
    counts: dict[str, int] = {}
    for sample in samples:
        for token in sample:
            if token.startswith(prefix):
                counts[token] = counts.get(token, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise EmptyCorpus(f"no {token_class} tokens in the samples")
    return float(-sum((c / total) * math.log(c / total) for c in counts.values()))


@dataclass
class MetricReport:
    """All fidelity/fluency/diversity numbers for one pair or corpus."""

    instrument_f1: float
    chord_f1: float
    ts_accuracy: float
    nd_nrmse: float
    pitch_moa: float
    velocity_moa: float
    duration_moa: float
    chroma_sim: float
    grooving_sim: float
    perplexity: float | None = None
    h_inst: float | None = None
    h_chord: float | None = None

    _KEYS = {
        "instrument_f1": "I",
        "chord_f1": "C",
        "ts_accuracy": "TS",
        "nd_nrmse": "ND",
        "pitch_moa": "P",
        "velocity_moa": "V",
        "duration_moa": "D",
        "chroma_sim": "s_c",
        "grooving_sim": "s_g",
        "perplexity": "PPL",
        "h_inst": "H_inst",
        "h_chord": "H_chord",
    }

    def as_record(self) -> dict[str, float]:
        """Flat key-value record with the abbreviated metric names."""
        out = {}
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            value = getattr(self, f.name)
            if value is not None:
                out[self._KEYS[f.name]] = value
        return out


@dataclass
class BarFeatures:
    """Per-bar raw feature series of one score, ready for metric evaluation."""

    pitches: list[list[float]]
    velocities: list[list[float]]
    durations: list[list[float]]
    densities: list[float]
    instruments: list[set]
    chords: list[set]
    signatures: list[tuple[int, int]]
    chroma: list[np.ndarray]
    grooving: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.signatures)


def extract_bar_features(
    score: Score, chord_config: ChordConfig = DEFAULT_CHORD_CONFIG, n_bars: int | None = None
) -> BarFeatures:
    """Collect the metric inputs bar by bar (durations in position units)."""
    normalized = normalize(score)
    bars = partition_bars(normalized)
    if n_bars is not None:
        bars = bars[:n_bars]
    tpq = normalized.ticks_per_quarter
    labels = detect_beat_chords(normalized, chord_config)

    features = BarFeatures([], [], [], [], [], [], [], [], [])
    beat_cursor = 0
    for bar in bars:
        onsets = [n for n in normalized.notes if bar.start_tick <= n.onset_tick < bar.end_tick]
        features.pitches.append([float(n.pitch) for n in onsets])
        features.velocities.append([float(n.velocity) for n in onsets])
        features.durations.append(
            [n.duration_ticks * POSITIONS_PER_QUARTER / tpq for n in onsets]
        )
        features.densities.append(len(onsets) / float(bar.quarter_length))
        features.instruments.append({n.instrument for n in onsets})
        n_beats = math.ceil(bar.quarter_length)
        bar_labels = {
            label.render()
            for label in labels[beat_cursor : beat_cursor + n_beats]
            if label != NO_CHORD
        }
        beat_cursor += n_beats
        features.chords.append(bar_labels)
        features.signatures.append(bar.time_signature)
        features.chroma.append(chroma_vector(onsets))
        features.grooving.append(grooving_vector(onsets, bar, tpq))
    return features


def evaluate_pair(
    truth: Score,
    generated: Score,
    chord_config: ChordConfig = DEFAULT_CHORD_CONFIG,
    perplexity: float | None = None,
) -> MetricReport:
    """Full metric report for one (ground truth, generated) score pair.

    Bar counts are aligned by truncating both sides to the shorter piece.
    """
    tf = extract_bar_features(truth, chord_config)
    gf = extract_bar_features(generated, chord_config)
    n = min(len(tf), len(gf))
    for features in (tf, gf):
        for name in (
            "pitches", "velocities", "durations", "densities",
            "instruments", "chords", "signatures", "chroma", "grooving",
        ):
            setattr(features, name, getattr(features, name)[:n])

    return MetricReport(
        instrument_f1=multilabel_f1(tf.instruments, gf.instruments),
        chord_f1=multilabel_f1(tf.chords, gf.chords),
        ts_accuracy=ts_accuracy(tf.signatures, gf.signatures),
        nd_nrmse=nd_nrmse(tf.densities, gf.densities),
        pitch_moa=moa(tf.pitches, gf.pitches),
        velocity_moa=moa(tf.velocities, gf.velocities),
        duration_moa=moa(tf.durations, gf.durations),
        chroma_sim=cosine_sim_series(tf.chroma, gf.chroma),
        grooving_sim=cosine_sim_series(tf.grooving, gf.grooving),
        perplexity=perplexity,
    )


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Mean of every populated field over per-pair reports."""
    if not reports:
        raise EmptyCorpus("no reports to aggregate")

    def mean_of(name: str) -> float | None:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        return float(np.mean(values)) if values else None

    return MetricReport(
        **{
            f.name: mean_of(f.name)
            for f in fields(MetricReport)
            if not f.name.startswith("_")
        }
    )
