"""Phonatory and modulation-power-spectrum biomarkers of sustained vowels."""

from .audio_io import AudioClip, load_wav, resample, write_wav
from .mps import MPSExtractor, compute_mps
from .phonatory import PhonatoryExtractor, PhonatoryFeatures, extract_all
from .pitch import PitchConfig, extract_pulses, track_pitch

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "load_wav",
    "write_wav",
    "resample",
    "PitchConfig",
    "track_pitch",
    "extract_pulses",
    "PhonatoryFeatures",
    "PhonatoryExtractor",
    "extract_all",
    "MPSExtractor",
    "compute_mps",
    "__version__",
]
