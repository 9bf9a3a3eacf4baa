"""Display names for the 128 General-MIDI programs plus the drum kit.

Program numbers are canonical everywhere in the pipeline; these names only
appear inside token strings (`Instrument_Piano`). The table is frozen: every
name is unique and contains no whitespace, so token files stay parseable.
"""

from .score import DRUMS

GM_PROGRAM_NAMES: tuple[str, ...] = (
    "Piano",
    "BrightPiano",
    "E-GrandPiano",
    "HonkyTonkPiano",
    "E-Piano",
    "E-Piano-2",
    "Harpsichord",
    "Clavinet",
    "Celesta",
    "Glockenspiel",
    "MusicBox",
    "Vibraphone",
    "Marimba",
    "Xylophone",
    "TubularBells",
    "Dulcimer",
    "DrawbarOrgan",
    "PercussiveOrgan",
    "RockOrgan",
    "ChurchOrgan",
    "ReedOrgan",
    "Accordion",
    "Harmonica",
    "TangoAccordion",
    "NylonGuitar",
    "SteelGuitar",
    "JazzGuitar",
    "CleanGuitar",
    "MutedGuitar",
    "OverdrivenGuitar",
    "DistortionGuitar",
    "GuitarHarmonics",
    "AcousticBass",
    "FingerBass",
    "PickBass",
    "FretlessBass",
    "SlapBass",
    "SlapBass-2",
    "SynthBass",
    "SynthBass-2",
    "Violin",
    "Viola",
    "Cello",
    "Contrabass",
    "TremoloStrings",
    "PizzicatoStrings",
    "Harp",
    "Timpani",
    "Strings",
    "Strings-2",
    "SynthStrings",
    "SynthStrings-2",
    "ChoirAahs",
    "VoiceOohs",
    "SynthVoice",
    "OrchestraHit",
    "Trumpet",
    "Trombone",
    "Tuba",
    "MutedTrumpet",
    "FrenchHorn",
    "BrassSection",
    "SynthBrass",
    "SynthBrass-2",
    "SopranoSax",
    "AltoSax",
    "TenorSax",
    "BaritoneSax",
    "Oboe",
    "EnglishHorn",
    "Bassoon",
    "Clarinet",
    "Piccolo",
    "Flute",
    "Recorder",
    "PanFlute",
    "BlownBottle",
    "Shakuhachi",
    "Whistle",
    "Ocarina",
    "SquareLead",
    "SawLead",
    "CalliopeLead",
    "ChiffLead",
    "CharangLead",
    "VoiceLead",
    "FifthsLead",
    "BassLead",
    "NewAgePad",
    "WarmPad",
    "PolysynthPad",
    "ChoirPad",
    "BowedPad",
    "MetallicPad",
    "HaloPad",
    "SweepPad",
    "RainFX",
    "SoundtrackFX",
    "CrystalFX",
    "AtmosphereFX",
    "BrightnessFX",
    "GoblinsFX",
    "EchoesFX",
    "SciFiFX",
    "Sitar",
    "Banjo",
    "Shamisen",
    "Koto",
    "Kalimba",
    "Bagpipe",
    "Fiddle",
    "Shanai",
    "TinkleBell",
    "Agogo",
    "SteelDrums",
    "Woodblock",
    "Taiko",
    "MelodicTom",
    "SynthDrum",
    "ReverseCymbal",
    "FretNoise",
    "BreathNoise",
    "Seashore",
    "BirdTweet",
    "Telephone",
    "Helicopter",
    "Applause",
    "Gunshot",
)

DRUMS_NAME = "Drums"

_NAME_TO_ID = {name: i for i, name in enumerate(GM_PROGRAM_NAMES)}
_NAME_TO_ID[DRUMS_NAME] = DRUMS


def instrument_name(instrument: int) -> str:
    """Display name for a program number or the drum sentinel."""
    if instrument == DRUMS:
        return DRUMS_NAME
    return GM_PROGRAM_NAMES[instrument]


def instrument_id(name: str) -> int:
    """Inverse of `instrument_name`; raises KeyError on unknown names."""
    return _NAME_TO_ID[name]
