"""MIDI byte-stream reader/writer tests against hand-built fixtures."""

import struct

import pytest

from descant.errors import EmptyScore, MalformedFile, UnsupportedFormat
from descant.score import DRUMS, Note, Score, TempoEvent, TimeSignatureEvent, normalize
from descant.smf import parse_midi, write_midi


def header(fmt=0, n_tracks=1, division=480) -> bytes:
    return b"MThd" + struct.pack(">IHHH", 6, fmt, n_tracks, division)


def track(events: bytes) -> bytes:
    payload = events + bytes([0x00, 0xFF, 0x2F, 0x00])
    return b"MTrk" + struct.pack(">I", len(payload)) + payload


def test_single_note_default_signature():
    # C4 on at tick 0 vel 90, off at tick 480; no signature/tempo events.
    events = bytes([0x00, 0x90, 60, 90]) + bytes([0x83, 0x60, 0x80, 60, 64])
    score = parse_midi(header() + track(events))
    assert score.notes == [Note(0, 480, 60, 90, 0)]
    assert score.time_signatures == [TimeSignatureEvent(0, 4, 4)]
    assert score.ticks_per_quarter == 480


def test_velocity_zero_note_on_acts_as_note_off():
    # Byte-level fixture: on at 0, then note-on with velocity 0 at tick 480.
    events = bytes([0x00, 0x90, 60, 90]) + bytes([0x83, 0x60, 0x90, 60, 0])
    score = parse_midi(header() + track(events))
    assert score.notes == [Note(0, 480, 60, 90, 0)]


def test_running_status_reuses_previous_status_byte():
    # Second note-on omits the status byte entirely.
    events = (
        bytes([0x00, 0x90, 60, 90])
        + bytes([0x00, 64, 80])  # running status: note-on 64
        + bytes([0x83, 0x60, 0x80, 60, 64])
        + bytes([0x00, 64, 0])  # running status note-off via 0x80
    )
    score = parse_midi(header() + track(events))
    assert {(n.pitch, n.duration_ticks) for n in score.notes} == {(60, 480), (64, 480)}


def test_overlapping_same_pitch_notes_merge_to_interval_union():
    events = (
        bytes([0x00, 0x90, 60, 90])
        + bytes([0x81, 0x70, 0x90, 60, 70])  # second onset at tick 240
        + bytes([0x81, 0x70, 0x80, 60, 64])  # first off at 480
        + bytes([0x81, 0x70, 0x80, 60, 64])  # second off at 720
    )
    score = parse_midi(header() + track(events))

    # Oracle: interval union per (instrument, pitch).
    raw = [(0, 480), (240, 720)]
    union = []
    for start, end in sorted(raw):
        if union and start < union[-1][1]:
            union[-1] = (union[-1][0], max(union[-1][1], end))
        else:
            union.append((start, end))
    assert [(n.onset_tick, n.end_tick) for n in score.notes] == union
    assert score.notes[0].velocity == 90  # earliest constituent wins


def test_channel_10_maps_to_drums_and_programs_assign_instruments():
    events = (
        bytes([0x00, 0xC0, 24])  # program 24 on channel 0
        + bytes([0x00, 0x90, 60, 90])
        + bytes([0x00, 0x99, 36, 100])  # channel 9 = drums
        + bytes([0x60, 0x80, 60, 64])
        + bytes([0x00, 0x89, 36, 64])
    )
    score = parse_midi(header() + track(events))
    by_pitch = {n.pitch: n.instrument for n in score.notes}
    assert by_pitch == {60: 24, 36: DRUMS}


def test_format_1_tracks_merge_on_shared_timeline():
    t1 = track(bytes([0x00, 0xFF, 0x51, 0x03]) + (500000).to_bytes(3, "big"))
    t2 = track(bytes([0x00, 0x90, 60, 90, 0x83, 0x60, 0x80, 60, 64]))
    t3 = track(bytes([0x83, 0x60, 0x91, 67, 80, 0x83, 0x60, 0x81, 67, 64]))
    score = parse_midi(header(fmt=1, n_tracks=3) + t1 + t2 + t3)
    assert [(n.onset_tick, n.pitch) for n in score.notes] == [(0, 60), (480, 67)]
    assert score.tempo_changes == [TempoEvent(0, 120.0)]


def test_unterminated_note_closes_at_final_bar_end():
    events = bytes([0x00, 0x90, 60, 90])  # never released
    score = parse_midi(header() + track(events))
    assert score.notes[0].duration_ticks == 1920  # one full 4/4 bar


def test_smf_type_2_rejected():
    with pytest.raises(UnsupportedFormat):
        parse_midi(header(fmt=2) + track(bytes([0x00, 0x90, 60, 90])))


def test_smpte_division_rejected():
    with pytest.raises(UnsupportedFormat):
        parse_midi(header(division=0xE250) + track(bytes([0x00, 0x90, 60, 90])))


def test_malformed_header_rejected():
    with pytest.raises(MalformedFile):
        parse_midi(b"MThX" + bytes(10))
    with pytest.raises(MalformedFile):
        parse_midi(header() + b"MTrk" + struct.pack(">I", 100))  # overruns file


def test_no_notes_raises_empty_score():
    with pytest.raises(EmptyScore):
        parse_midi(header() + track(b""))


def test_simultaneous_signature_events_last_wins():
    events = (
        bytes([0x00, 0xFF, 0x58, 0x04, 3, 2, 24, 8])
        + bytes([0x00, 0xFF, 0x58, 0x04, 6, 3, 24, 8])
        + bytes([0x00, 0x90, 60, 90, 0x83, 0x60, 0x80, 60, 64])
    )
    score = parse_midi(header() + track(events))
    assert score.time_signatures == [TimeSignatureEvent(0, 6, 8)]


def test_mid_bar_signature_change_snaps_to_next_boundary():
    events = (
        bytes([0x00, 0x90, 60, 90])
        + bytes([0x81, 0x70, 0xFF, 0x58, 0x04, 3, 2, 24, 8])  # at tick 240
        + bytes([0x8D, 0x10, 0x80, 60, 64])  # off at 1920+... (0x8D10 varint = 1680)
    )
    score = parse_midi(header() + track(events))
    assert score.time_signatures == [
        TimeSignatureEvent(0, 4, 4),
        TimeSignatureEvent(1920, 3, 4),
    ]


def test_parse_serialize_identity_on_fixtures(rng):
    # Tempi chosen so microsecond-per-quarter conversion is exact.
    fixture = Score(
        notes=[
            Note(0, 480, 60, 90, 0),
            Note(0, 480, 36, 100, DRUMS),
            Note(960, 240, 72, 55, 40),
            Note(1920, 960, 48, 70, 33),
        ],
        tempo_changes=[TempoEvent(0, 120.0), TempoEvent(1920, 100.0)],
        time_signatures=[TimeSignatureEvent(0, 4, 4), TimeSignatureEvent(1920, 3, 4)],
        ticks_per_quarter=480,
    )
    assert parse_midi(write_midi(fixture)) == normalize(fixture)


def test_parse_serialize_round_trip_random_scores(rng):
    from conftest import make_random_score

    for _ in range(25):
        score = normalize(make_random_score(rng))
        recovered = parse_midi(write_midi(score))
        assert recovered.notes == score.notes
        assert recovered.time_signatures == score.time_signatures
        assert len(recovered.tempo_changes) == len(score.tempo_changes)
        for got, want in zip(recovered.tempo_changes, score.tempo_changes):
            assert got.tick == want.tick
            assert got.bpm == pytest.approx(want.bpm, rel=1e-4)
