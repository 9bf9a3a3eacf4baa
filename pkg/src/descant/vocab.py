"""Token vocabulary and all quantization rules shared across the pipeline.

Everything that maps continuous values to token bins lives here so that the
configuration can be hashed once (`bin_config_hash`) and stamped onto files
that depend on it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

from .chords import CHORD_TOKEN_LABELS
from .errors import OutOfBar, VocabularyOverflow
from .instruments import DRUMS_NAME, GM_PROGRAM_NAMES
from .score import Bar, MAX_TS_NUMERATOR, TS_DENOMINATORS

BOS = "<bos>"
EOS = "<eos>"
PAD = "<pad>"

POSITIONS_PER_QUARTER = 12
MAX_BARS = 512
VELOCITY_BINS = 32
TEMPO_BINS = 32
TEMPO_RANGE = 240.0
NOTE_DENSITY_BINS = 32
NOTE_DENSITY_RANGE = 12.0
MEAN_VALUE_BINS = 32
MEAN_VALUE_RANGE = 128.0
CODEBOOK_SIZE = 2048
CODES_PER_BAR = 16


def _build_duration_mesh() -> tuple[int, ...]:
    mesh = set(range(1, 13))
    mesh |= {12 + 3 * i for i in range(1, 5)}
    mesh |= {12 + 4 * i for i in range(1, 4)}
    mesh |= {24 + 6 * i for i in range(1, 5)}
    mesh |= {48 + 12 * i for i in range(1, 13)}
    mesh |= {192 + 24 * i for i in range(1, 25)}
    return tuple(sorted(mesh))


#: Allowed note durations in position units: single-position steps up to one
#: quarter, sixteenth and triplet steps up to a half note, eighth steps up to
#: a whole note, then quarter and half-note steps out to the 768-position cap.
DURATION_MESH: tuple[int, ...] = _build_duration_mesh()

#: 33 geometric edges on [1, 128] positions for mean-duration binning.
MEAN_DURATION_EDGES: tuple[float, ...] = tuple(128.0 ** (j / 32) for j in range(33))


def positions_in_bar(numerator: int, denominator: int) -> int:
    """Number of onset slots in one bar of the given signature."""
    return numerator * 48 // denominator


MAX_POSITIONS = positions_in_bar(MAX_TS_NUMERATOR, min(TS_DENOMINATORS))


def quantize_position(onset_tick: int, bar: Bar, ticks_per_quarter: int) -> int:
    """Onset slot of a tick inside its bar (12 slots per quarter note)."""
    if not bar.start_tick <= onset_tick < bar.end_tick:
        raise OutOfBar(f"tick {onset_tick} outside bar [{bar.start_tick}, {bar.end_tick})")
    index = math.floor(
        (onset_tick - bar.start_tick) * POSITIONS_PER_QUARTER / ticks_per_quarter + 0.5
    )
    return min(max(index, 0), positions_in_bar(bar.numerator, bar.denominator) - 1)


def quantize_velocity(velocity: float) -> int:
    """Linear bin of width 4 over [0, 128]."""
    return min(int(velocity // 4), VELOCITY_BINS - 1)


def velocity_bin_value(bin_index: int) -> int:
    """Representative velocity of a bin (bin center, clamped to [1, 127])."""
    return min(max(4 * bin_index + 2, 1), 127)


def quantize_duration(duration_positions: float) -> int:
    """Nearest mesh duration; ties resolve to the smaller value."""
    if duration_positions >= DURATION_MESH[-1]:
        return DURATION_MESH[-1]
    best = DURATION_MESH[0]
    best_dist = abs(duration_positions - best)
    for value in DURATION_MESH[1:]:
        dist = abs(duration_positions - value)
        if dist < best_dist:
            best, best_dist = value, dist
    return best


def quantize_tempo(bpm: float) -> int:
    """Linear bin of width 7.5 over [0, 240]; faster tempi clamp to the top."""
    return min(int(bpm // 7.5), TEMPO_BINS - 1)


def tempo_bin_value(bin_index: int) -> float:
    """Representative bpm of a bin (lower edge; bin 0 uses its midpoint so the
    value stays positive and fits MIDI's 3-byte tempo field)."""
    return max(7.5 * bin_index, 3.75)


def quantize_note_density(onsets_per_quarter: float) -> int:
    width = NOTE_DENSITY_RANGE / NOTE_DENSITY_BINS
    return min(int(onsets_per_quarter // width), NOTE_DENSITY_BINS - 1)


def quantize_mean_value(value: float) -> int:
    """Shared 32-bin linear quantizer over [0, 128] for mean pitch/velocity."""
    width = MEAN_VALUE_RANGE / MEAN_VALUE_BINS
    return min(int(value // width), MEAN_VALUE_BINS - 1)


def quantize_mean_duration(duration_positions: float) -> int:
    """Logarithmic 32-bin quantizer over [1, 128] positions."""
    if duration_positions < MEAN_DURATION_EDGES[1]:
        return 0
    if duration_positions >= MEAN_DURATION_EDGES[-1]:
        return 31
    index = int(math.log(duration_positions, 128.0) * 32)
    # Guard against log rounding at the edges.
    while MEAN_DURATION_EDGES[index + 1] <= duration_positions:
        index += 1
    while MEAN_DURATION_EDGES[index] > duration_positions:
        index -= 1
    return index


def bar_token(index: int) -> str:
    if not 1 <= index <= MAX_BARS:
        raise VocabularyOverflow(f"bar index {index} outside [1, {MAX_BARS}]")
    return f"Bar_{index}"


def time_signature_token(numerator: int, denominator: int) -> str:
    return f"TimeSignature_{numerator}/{denominator}"


def position_token(position: int) -> str:
    return f"Pos_{position}"


def tempo_token(bin_index: int) -> str:
    return f"Tempo_{bin_index}"


def chord_token(label: str) -> str:
    return f"Chord_{label}"


def instrument_token(name: str) -> str:
    return f"Instrument_{name}"


def pitch_token(pitch: int) -> str:
    return f"Pitch_{pitch}"


def velocity_token(bin_index: int) -> str:
    return f"Vel_{bin_index}"


def duration_token(mesh_value: int) -> str:
    return f"Dur_{mesh_value}"


@dataclass(frozen=True)
class Vocabulary:
    """Immutable bijection between token strings and integer ids."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate token strings")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyOverflow(f"unknown token {token!r}") from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for i, token in enumerate(self.tokens):
                handle.write(f"{i}\t{token}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                token_id, token = line.rstrip("\n").split("\t")
                if int(token_id) != len(tokens):
                    raise ValueError(f"non-contiguous id {token_id}")
                tokens.append(token)
        return cls(tuple(tokens))


def _time_signature_tokens() -> list[str]:
    return [
        time_signature_token(n, d)
        for n in range(1, MAX_TS_NUMERATOR + 1)
        for d in TS_DENOMINATORS
    ]


def _instrument_tokens() -> list[str]:
    return [instrument_token(name) for name in GM_PROGRAM_NAMES] + [
        instrument_token(DRUMS_NAME)
    ]


def sequence_vocabulary() -> Vocabulary:
    """Vocabulary of the note-event token stream."""
    tokens: list[str] = [PAD, BOS, EOS]
    tokens += [bar_token(i) for i in range(1, MAX_BARS + 1)]
    tokens += _time_signature_tokens()
    tokens += [position_token(p) for p in range(MAX_POSITIONS)]
    tokens += [tempo_token(k) for k in range(TEMPO_BINS)]
    tokens += [chord_token(label) for label in CHORD_TOKEN_LABELS]
    tokens += _instrument_tokens()
    tokens += [pitch_token(p) for p in range(128)]
    tokens += [velocity_token(k) for k in range(VELOCITY_BINS)]
    tokens += [duration_token(m) for m in DURATION_MESH]
    return Vocabulary(tuple(tokens))


def description_vocabulary() -> Vocabulary:
    """Vocabulary of the conditioning stream (bar summaries and latent codes)."""
    tokens: list[str] = [PAD, BOS, EOS]
    tokens += [bar_token(i) for i in range(1, MAX_BARS + 1)]
    tokens += _time_signature_tokens()
    tokens += [f"NoteDensity_{k}" for k in range(NOTE_DENSITY_BINS)]
    tokens += [f"MeanPitch_{k}" for k in range(MEAN_VALUE_BINS)]
    tokens += [f"MeanVelocity_{k}" for k in range(MEAN_VALUE_BINS)]
    tokens += [f"MeanDuration_{k}" for k in range(MEAN_VALUE_BINS)]
    tokens += _instrument_tokens()
    tokens += [chord_token(label) for label in CHORD_TOKEN_LABELS]
    tokens += [f"Code_{k}" for k in range(CODEBOOK_SIZE)]
    return Vocabulary(tuple(tokens))


def bin_config_hash() -> str:
    """Stable digest of every frozen quantization constant.

    Files produced under different constants must never be mixed; the hash is
    stamped into description files and model checkpoints and compared on load.
    """
    from .chords import chord_config_fingerprint

    config = {
        "positions_per_quarter": POSITIONS_PER_QUARTER,
        "max_bars": MAX_BARS,
        "duration_mesh": list(DURATION_MESH),
        "velocity_bins": VELOCITY_BINS,
        "tempo_bins": TEMPO_BINS,
        "tempo_range": TEMPO_RANGE,
        "note_density_bins": NOTE_DENSITY_BINS,
        "note_density_range": NOTE_DENSITY_RANGE,
        "mean_value_bins": MEAN_VALUE_BINS,
        "mean_value_range": MEAN_VALUE_RANGE,
        "mean_duration_edges": list(MEAN_DURATION_EDGES),
        "time_signatures": [f"{n}/{d}" for n in range(1, MAX_TS_NUMERATOR + 1) for d in TS_DENOMINATORS],
        "codebook_size": CODEBOOK_SIZE,
        "codes_per_bar": CODES_PER_BAR,
        "chords": chord_config_fingerprint(),
    }
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_token_text(path, tokens: list[str], header: str | None = None) -> None:
    """One whitespace-separated sequence per file, optional `#` header line."""
    with open(path, "w", encoding="utf-8") as handle:
        if header is not None:
            handle.write(f"# {header}\n")
        handle.write(" ".join(tokens) + "\n")


def read_token_text(path) -> tuple[list[str], str | None]:
    """Inverse of `write_token_text`; returns (tokens, header or None)."""
    header = None
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                header = stripped[1:].strip()
                continue
            tokens.extend(stripped.split())
    return tokens, header
