"""Describe-and-generate toolkit for symbolic music.

Pipeline: MIDI bytes -> Score -> token sequence and bar descriptions ->
conditional sequence model -> sampled tokens -> Score -> MIDI bytes, with a
metric suite to compare ground truth against generated material.
"""

__version__ = "0.1.0"

from .chords import ChordDetector, ChordLabel, detect_beat_chords, viterbi_chords
from .codec import ScoreCodec, TokenSequence, decode_tokens, encode_score
from .description import (
    Description,
    ExpertBarDescription,
    ExpertDescriptionExtractor,
    description_tokens,
    expert_description,
    learned_description,
    medley_description,
    parse_description_tokens,
)
from .metrics import MetricReport, evaluate_pair
from .model import (
    ModelConfig,
    SamplingParams,
    Seq2SeqGenerator,
    TrainingPair,
    lr_schedule,
    window_tokens,
)
from .score import Bar, DRUMS, Note, Score, partition_bars
from .smf import parse_midi, read_midi_file, write_midi, write_midi_file
from .vq import SlicedCodebook, concat_slices, slice_latent, vqvae_loss
from .vocab import (
    DURATION_MESH,
    Vocabulary,
    bin_config_hash,
    description_vocabulary,
    sequence_vocabulary,
)

__all__ = [
    "Bar",
    "ChordDetector",
    "ChordLabel",
    "DRUMS",
    "DURATION_MESH",
    "Description",
    "ExpertBarDescription",
    "ExpertDescriptionExtractor",
    "MetricReport",
    "ModelConfig",
    "Note",
    "SamplingParams",
    "Score",
    "ScoreCodec",
    "Seq2SeqGenerator",
    "SlicedCodebook",
    "TokenSequence",
    "TrainingPair",
    "Vocabulary",
    "bin_config_hash",
    "concat_slices",
    "decode_tokens",
    "description_tokens",
    "description_vocabulary",
    "detect_beat_chords",
    "encode_score",
    "evaluate_pair",
    "expert_description",
    "learned_description",
    "lr_schedule",
    "medley_description",
    "parse_description_tokens",
    "parse_midi",
    "partition_bars",
    "read_midi_file",
    "sequence_vocabulary",
    "slice_latent",
    "viterbi_chords",
    "vqvae_loss",
    "window_tokens",
    "write_midi",
    "write_midi_file",
]
