"""Standard MIDI File (SMF 0/1) reader and writer.

Only the events the pipeline round-trips are kept: notes, tempo, time
signature and program changes. Channel 10 (index 9) maps to the drum
instrument; a velocity-0 note-on counts as a note-off.
"""

from __future__ import annotations

import struct

from .errors import EmptyScore, MalformedFile, UnsupportedFormat
from .score import DRUMS, Note, Score, TempoEvent, TimeSignatureEvent, normalize, partition_bars

_DRUM_CHANNEL = 9


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MalformedFile("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MalformedFile("variable-length quantity longer than 4 bytes")


def _write_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def _track_events(data: bytes) -> list[tuple[int, int, bytes]]:
    """Decode one MTrk payload into (absolute_tick, status, payload) tuples.

    Meta events are returned with status 0xFF and payload = type byte + data.
    """
    events: list[tuple[int, int, bytes]] = []
    pos = 0
    tick = 0
    running_status: int | None = None
    while pos < len(data):
        delta, pos = _read_varint(data, pos)
        tick += delta
        if pos >= len(data):
            raise MalformedFile("truncated event")
        status = data[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running_status = status
        else:
            if running_status is None:
                raise MalformedFile("data byte without running status")
            status = running_status

        if status == 0xFF:
            if pos >= len(data):
                raise MalformedFile("truncated meta event")
            meta_type = data[pos]
            length, pos = _read_varint(data, pos + 1)
            if pos + length > len(data):
                raise MalformedFile("meta event overruns track")
            events.append((tick, 0xFF, bytes([meta_type]) + data[pos : pos + length]))
            pos += length
            running_status = None
            if meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            length, pos = _read_varint(data, pos)
            if pos + length > len(data):
                raise MalformedFile("sysex event overruns track")
            pos += length
            running_status = None
        elif status >= 0xF0:
            raise MalformedFile(f"unexpected status byte 0x{status:02X} in file")
        else:
            kind = status & 0xF0
            n_data = 1 if kind in (0xC0, 0xD0) else 2
            if pos + n_data > len(data):
                raise MalformedFile("channel event overruns track")
            events.append((tick, status, data[pos : pos + n_data]))
            pos += n_data
    return events


def parse_midi(data: bytes) -> Score:
    """Parse SMF bytes into a normalized Score.

    Raises MalformedFile on structural damage, UnsupportedFormat for SMF
    type 2 or SMPTE division, EmptyScore when no note survives decoding.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedFile("missing MThd header")
    header_len, fmt, n_tracks, division = struct.unpack(">IHHH", data[4:14])
    if header_len < 6:
        raise MalformedFile(f"header length {header_len} < 6")
    if fmt == 2:
        raise UnsupportedFormat("SMF type 2 has no shared timeline")
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF type {fmt}")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division")
    if division == 0:
        raise MalformedFile("zero ticks per quarter")

    pos = 8 + header_len
    tracks: list[list[tuple[int, int, bytes]]] = []
    while len(tracks) < n_tracks and pos < len(data):
        if pos + 8 > len(data):
            raise MalformedFile("truncated chunk header")
        chunk_id = data[pos : pos + 4]
        (chunk_len,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        if pos + 8 + chunk_len > len(data):
            raise MalformedFile("chunk overruns file")
        if chunk_id == b"MTrk":
            tracks.append(_track_events(data[pos + 8 : pos + 8 + chunk_len]))
        pos += 8 + chunk_len
    if len(tracks) < n_tracks:
        raise MalformedFile(f"expected {n_tracks} tracks, found {len(tracks)}")

    # Merge tracks on the shared tick timeline. Event order within a tick:
    # note-offs close before note-ons open; program changes apply first.
    merged: list[tuple[int, int, int, int, int, bytes]] = []
    for track_no, events in enumerate(tracks):
        for seq, (tick, status, payload) in enumerate(events):
            if status == 0xFF:
                rank = 0
            else:
                kind = status & 0xF0
                if kind == 0xC0:
                    rank = 1
                elif kind == 0x80 or (kind == 0x90 and payload[1] == 0):
                    rank = 2
                else:
                    rank = 3
            merged.append((tick, rank, track_no, seq, status, payload))
    merged.sort(key=lambda e: (e[0], e[1], e[2], e[3]))

    program: dict[int, int] = {}
    open_notes: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    notes: list[Note] = []
    tempo: list[TempoEvent] = []
    signatures: list[TimeSignatureEvent] = []
    max_tick = 0

    def close_note(channel: int, pitch: int, tick: int) -> None:
        stack = open_notes.get((channel, pitch))
        if not stack:
            return
        onset, velocity, instrument = stack.pop(0)
        notes.append(
            Note(
                onset_tick=onset,
                duration_ticks=max(1, tick - onset),
                pitch=pitch,
                velocity=velocity,
                instrument=instrument,
            )
        )

    for tick, _, _, _, status, payload in merged:
        max_tick = max(max_tick, tick)
        if status == 0xFF:
            meta_type = payload[0]
            body = payload[1:]
            if meta_type == 0x51 and len(body) == 3:
                us_per_quarter = int.from_bytes(body, "big")
                if us_per_quarter > 0:
                    tempo.append(TempoEvent(tick, 60_000_000.0 / us_per_quarter))
            elif meta_type == 0x58 and len(body) >= 2:
                signatures.append(TimeSignatureEvent(tick, body[0], 1 << body[1]))
            continue
        kind, channel = status & 0xF0, status & 0x0F
        if kind == 0xC0:
            program[channel] = payload[0]
        elif kind == 0x90 and payload[1] > 0:
            pitch, velocity = payload[0], payload[1]
            instrument = DRUMS if channel == _DRUM_CHANNEL else program.get(channel, 0)
            open_notes.setdefault((channel, pitch), []).append((tick, velocity, instrument))
        elif kind == 0x80 or (kind == 0x90 and payload[1] == 0):
            close_note(channel, payload[0], tick)

    if not notes and not any(open_notes.values()):
        raise EmptyScore("file contains no notes")

    if any(open_notes.values()):
        # Close hanging notes at the end of the final bar.
        draft = normalize(
            Score(notes=list(notes), tempo_changes=tempo,
                  time_signatures=signatures, ticks_per_quarter=division)
        )
        draft_end = max(max_tick, draft.end_tick())
        bars = partition_bars(draft, min_end_tick=draft_end)
        final_end = bars[-1].end_tick if bars else draft_end
        for (channel, pitch), stack in open_notes.items():
            for onset, velocity, instrument in stack:
                notes.append(
                    Note(
                        onset_tick=onset,
                        duration_ticks=max(1, final_end - onset),
                        pitch=pitch,
                        velocity=velocity,
                        instrument=instrument,
                    )
                )
    return normalize(
        Score(
            notes=notes,
            tempo_changes=tempo,
            time_signatures=signatures,
            ticks_per_quarter=division,
        )
    )


def write_midi(score: Score) -> bytes:
    """Serialize a Score as a single-track SMF type 0 file.

    Only notes, tempo, time signature and program changes are written; the
    result parses back to an equal Score (tempo up to microsecond rounding).
    """
    normalized = normalize(score)

    melodic = sorted({n.instrument for n in normalized.notes if n.instrument != DRUMS})
    channels: dict[int, int] = {}
    free = [c for c in range(16) if c != _DRUM_CHANNEL]
    for instrument in melodic:
        channels[instrument] = free[len(channels) % len(free)]
    channels[DRUMS] = _DRUM_CHANNEL

    # (tick, rank, sort_hint, message_bytes)
    events: list[tuple[int, int, int, bytes]] = []
    for tick, numerator, denominator in normalized.time_signatures:
        dd = denominator.bit_length() - 1
        events.append((tick, 0, 0, bytes([0xFF, 0x58, 0x04, numerator, dd, 24, 8])))
    for tick, bpm in normalized.tempo_changes:
        us = min(max(1, round(60_000_000.0 / bpm)), 0xFFFFFF)
        events.append((tick, 0, 1, bytes([0xFF, 0x51, 0x03]) + us.to_bytes(3, "big")))

    channel_program: dict[int, int] = {}
    for note in sorted(normalized.notes, key=lambda n: (n.onset_tick, n.instrument, n.pitch)):
        channel = channels[note.instrument]
        if note.instrument != DRUMS and channel_program.get(channel) != note.instrument:
            events.append((note.onset_tick, 1, channel, bytes([0xC0 | channel, note.instrument])))
            channel_program[channel] = note.instrument
        events.append(
            (note.onset_tick, 3, channel, bytes([0x90 | channel, note.pitch, note.velocity]))
        )
        events.append((note.end_tick, 2, channel, bytes([0x80 | channel, note.pitch, 0x40])))

    events.sort(key=lambda e: (e[0], e[1], e[2], e[3]))

    body = bytearray()
    cursor = 0
    for tick, _, _, message in events:
        body += _write_varint(tick - cursor)
        body += message
        cursor = tick
    body += _write_varint(0) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, normalized.ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def read_midi_file(path) -> Score:
    with open(path, "rb") as handle:
        return parse_midi(handle.read())


def write_midi_file(path, score: Score) -> None:
    with open(path, "wb") as handle:
        handle.write(write_midi(score))
