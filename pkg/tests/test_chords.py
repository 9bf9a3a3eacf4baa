"""Chord emission and Viterbi decoding tests against exhaustive oracles."""

import itertools

import numpy as np
import pytest

from conftest import make_random_score
from descant.chords import (
    ALL_LABELS,
    ChordLabel,
    ChordLattice,
    DEFAULT_CHORD_CONFIG,
    NO_CHORD,
    N_LABELS,
    QUALITY_TEMPLATES,
    detect_beat_chords,
    emission_scores,
    viterbi_chords,
)
from descant.score import Note, Score


def evidence_for(pitch_classes) -> np.ndarray:
    out = np.zeros(12)
    for pc in pitch_classes:
        out[pc % 12] = 1.0
    return out


def brute_force_emissions(evidence, config=DEFAULT_CHORD_CONFIG) -> np.ndarray:
    """Independent re-scoring of all 97 labels from the frozen constants."""
    scores = np.empty(N_LABELS)
    for i, label in enumerate(ALL_LABELS):
        if label == NO_CHORD:
            scores[i] = config.no_chord_score
            continue
        template = {(label.root + iv) % 12 for iv in QUALITY_TEMPLATES[label.quality]}
        inside = sum(evidence[pc] for pc in template)
        outside = sum(evidence[pc] for pc in range(12) if pc not in template)
        missing = sum(1 for pc in template if evidence[pc] == 0)
        scores[i] = inside - 0.3 * outside - 0.5 * missing
    return scores


def test_major_triad_wins_its_window():
    scores = emission_scores(evidence_for([0, 4, 7]))  # C E G
    assert ALL_LABELS[int(scores.argmax())] == ChordLabel(0, "maj")


def test_empty_window_prefers_no_chord():
    scores = emission_scores(np.zeros(12))
    assert ALL_LABELS[int(scores.argmax())] == NO_CHORD


def test_min7_outranks_embedded_triad():
    # A C E G: the four-tone match beats C major with its non-chord tone.
    evidence = evidence_for([9, 0, 4, 7])
    scores = emission_scores(evidence)
    oracle = brute_force_emissions(evidence)
    assert np.allclose(scores, oracle)
    assert ALL_LABELS[int(scores.argmax())] == ChordLabel(9, "min7")
    a_min7 = ALL_LABELS.index(ChordLabel(9, "min7"))
    c_maj = ALL_LABELS.index(ChordLabel(0, "maj"))
    assert scores[a_min7] > scores[c_maj]


def test_emissions_match_brute_force_on_random_evidence(rng):
    for _ in range(50):
        evidence = rng.random(12) * (rng.random(12) > 0.5)
        assert np.allclose(emission_scores(evidence), brute_force_emissions(evidence))


def test_constant_emissions_give_constant_path():
    emissions = np.zeros((5, N_LABELS))
    emissions[:, 3] = 1.0
    path = viterbi_chords(ChordLattice(emissions, 0.4))
    assert path == [ALL_LABELS[3]] * 5


def test_smoothing_beats_greedy_flipflop():
    # Greedy per-beat argmax alternates labels; one-change path scores higher.
    emissions = np.full((4, 2), -10.0)
    emissions = np.zeros((4, 2))
    emissions[0] = [1.0, 0.0]
    emissions[1] = [0.0, 0.1]
    emissions[2] = [1.0, 0.9]
    emissions[3] = [0.0, 0.1]
    lattice = ChordLattice(emissions, transition_penalty=0.4)

    # Exhaustive oracle over all 2^4 paths.
    best_score, best_path = max(
        (
            sum(emissions[t][p[t]] for t in range(4))
            - 0.4 * sum(p[t] != p[t + 1] for t in range(3)),
            tuple(-x for x in p),  # deterministic tie-break helper
        )
        for p in itertools.product(range(2), repeat=4)
    )
    greedy = [int(row.argmax()) for row in emissions]
    assert sum(greedy[t] != greedy[t + 1] for t in range(3)) > 1

    path = viterbi_chords(lattice)
    path_ids = [ALL_LABELS.index(label) for label in path]
    score = sum(emissions[t][path_ids[t]] for t in range(4)) - 0.4 * sum(
        path_ids[t] != path_ids[t + 1] for t in range(3)
    )
    assert score == pytest.approx(best_score)
    assert sum(path_ids[t] != path_ids[t + 1] for t in range(3)) <= 1


def exhaustive_best_path_score(emissions, penalty) -> float:
    n_beats, n_labels = emissions.shape
    best = -np.inf
    for path in itertools.product(range(n_labels), repeat=n_beats):
        score = sum(emissions[t][path[t]] for t in range(n_beats))
        score -= penalty * sum(path[t] != path[t + 1] for t in range(n_beats - 1))
        best = max(best, score)
    return best


def test_viterbi_matches_exhaustive_search(rng):
    for _ in range(60):
        n_beats = int(rng.integers(1, 7))
        n_labels = int(rng.integers(2, 7))
        emissions = rng.normal(size=(n_beats, n_labels))
        penalty = float(rng.random())
        path = viterbi_chords(ChordLattice(emissions, penalty))
        path_ids = [ALL_LABELS.index(label) for label in path]
        score = sum(emissions[t][path_ids[t]] for t in range(n_beats))
        score -= penalty * sum(
            path_ids[t] != path_ids[t + 1] for t in range(n_beats - 1)
        )
        assert score == pytest.approx(exhaustive_best_path_score(emissions, penalty))


def test_viterbi_tie_breaks_toward_smaller_label_id():
    emissions = np.zeros((3, 4))
    path = viterbi_chords(ChordLattice(emissions, 0.4))
    assert path == [ALL_LABELS[0]] * 3


def test_detection_is_deterministic(rng):
    for _ in range(10):
        score = make_random_score(rng)
        assert detect_beat_chords(score) == detect_beat_chords(score)


def triad_score(roots_and_qualities, tpq=480) -> Score:
    notes = []
    for bar, (root, quality) in enumerate(roots_and_qualities):
        for iv in QUALITY_TEMPLATES[quality]:
            pitch = 60 + ((root + iv) % 12)
            notes.append(Note(bar * 4 * tpq, 4 * tpq, pitch, 80, 0))
    return Score(notes=notes, ticks_per_quarter=tpq)


def test_transposition_rotates_roots():
    base = [(0, "maj"), (9, "min"), (5, "maj7"), (7, "dom7")]
    score = triad_score(base)
    labels = detect_beat_chords(score)
    for shift in (1, 5, 11):
        transposed = Score(
            notes=[
                Note(n.onset_tick, n.duration_ticks, n.pitch + shift, n.velocity, n.instrument)
                for n in score.notes
            ],
            ticks_per_quarter=score.ticks_per_quarter,
        )
        shifted = detect_beat_chords(transposed)
        assert len(shifted) == len(labels)
        for got, want in zip(shifted, labels):
            if want == NO_CHORD:
                assert got == NO_CHORD
            else:
                assert got == ChordLabel((want.root + shift) % 12, want.quality)


def test_drums_carry_no_chord_evidence():
    from descant.score import DRUMS

    pitched = triad_score([(0, "maj")])
    with_drums = Score(
        notes=pitched.notes + [Note(0, 1920, 38, 120, DRUMS), Note(480, 480, 45, 120, DRUMS)],
        ticks_per_quarter=480,
    )
    assert detect_beat_chords(with_drums) == detect_beat_chords(pitched)


def test_window_emission_scores_on_a_score():
    from descant.chords import window_emission_scores

    score = triad_score([(0, "maj")])
    scores = window_emission_scores(score, (0.0, 1920.0))
    assert ALL_LABELS[int(scores.argmax())] == ChordLabel(0, "maj")
    empty = window_emission_scores(score, (4000.0, 4480.0))
    assert ALL_LABELS[int(empty.argmax())] == NO_CHORD


def test_label_rendering_and_parsing():
    assert ChordLabel(4, "maj").render() == "E:maj"
    assert ChordLabel(6, "min7").render() == "F#:min7"
    assert NO_CHORD.render() == "N"
    for label in ALL_LABELS:
        assert ChordLabel.parse(label.render()) == label
