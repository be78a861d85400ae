"""WAV decoding, writing and band-limited resampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd

import numpy as np
from scipy import signal
from scipy.io import wavfile

__all__ = [
    "AudioClip",
    "AudioError",
    "UnreadableAudioError",
    "UnsupportedCodecError",
    "EmptyAudioError",
    "load_wav",
    "write_wav",
    "resample",
    "CANONICAL_RATE",
    "NONLINEAR_RATE",
]

#: rate used by pitch, MFCC and MPS analysis
CANONICAL_RATE = 16000
#: rate used by DFA and RPDE ("22.5 kHz" taken literally)
NONLINEAR_RATE = 22500


class AudioError(Exception):
    """Base class for decode failures."""


class UnreadableAudioError(AudioError):
    """The file is missing or is not a RIFF/WAVE container."""


class UnsupportedCodecError(AudioError):
    """The container holds something other than integer PCM or float32."""


class EmptyAudioError(AudioError):
    """The data chunk holds no samples."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate.

    Samples are stored as a read-only float64 array in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).ravel()
        if x.size == 0:
            raise EmptyAudioError("clip has no samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("clip samples must be finite")
        if np.max(np.abs(x)) > 1.0:
            raise ValueError("clip samples must lie in [-1, 1]")
        rate = int(self.sample_rate)
        if rate <= 0 or rate != self.sample_rate:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples, sample_rate=None) -> "AudioClip":
        return AudioClip(samples, self.sample_rate if sample_rate is None else sample_rate, self.source)


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path, remove_dc: bool = True) -> AudioClip:
    """Decode a PCM WAV file into a mono clip.

    Integer samples are scaled by the full-scale code (2**15 or 2**31; 24-bit
    data arrives left-justified in int32). Channels are averaged. With
    ``remove_dc`` the mean is subtracted and the result clipped back into
    [-1, 1].
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise UnreadableAudioError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedCodecError(f"{path}: {msg}") from exc
        raise UnreadableAudioError(f"{path}: {msg}") from exc
    except (OSError, EOFError) as exc:
        raise UnreadableAudioError(f"{path}: {exc}") from exc

    if data.dtype in _INT_SCALE:
        x = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        # 8-bit unsigned and 64-bit float are outside the supported set
        raise UnsupportedCodecError(f"{path}: unsupported sample type {data.dtype}")

    if x.ndim == 2:
        if x.shape[1] > 2:
            raise UnsupportedCodecError(f"{path}: {x.shape[1]} channels, expected 1 or 2")
        x = x.mean(axis=1)
    if x.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    if not np.all(np.isfinite(x)):
        raise UnreadableAudioError(f"{path}: non-finite samples")
    if remove_dc:
        x = x - x.mean()
    x = np.clip(x, -1.0, 1.0)
    return AudioClip(x, int(rate), source=path)


def write_wav(path, clip: AudioClip, bit_depth: int = 16) -> None:
    """Write ``clip`` as mono PCM (16 or 32 bit integer, or 32-bit float with ``bit_depth=-32``)."""
    x = clip.samples
    if bit_depth == 16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif bit_depth == 32:
        data = np.clip(np.round(x * 2147483648.0), -2147483648, 2147483647).astype("<i4")
    elif bit_depth == -32:
        data = x.astype("<f4")
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")
    wavfile.write(os.fspath(path), clip.sample_rate, data)


@lru_cache(maxsize=32)
def _antialias_filter(up: int, down: int, stopband_db: float) -> np.ndarray:
    # cutoff at 0.95 of the lower Nyquist, 10% transition band, so the band
    # edge sits at the new Nyquist and everything above it is attenuated
    nyq = 1.0 / max(up, down)
    width = 0.1 * nyq
    numtaps, beta = signal.kaiserord(stopband_db, width)
    numtaps |= 1
    # resample_poly applies the interpolation gain `up` itself
    return signal.firwin(numtaps, 0.95 * nyq, window=("kaiser", beta))


def resample(clip: AudioClip, target_rate: int, stopband_db: float = 80.0) -> AudioClip:
    """Polyphase windowed-sinc resampling (Kaiser window).

    Returns the clip unchanged when ``target_rate`` equals its rate.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    h = _antialias_filter(up, down, float(stopband_db))
    y = signal.resample_poly(clip.samples, up, down, window=h)
    # the filter can overshoot on near full-scale transients
    y = np.clip(y, -1.0, 1.0)
    return AudioClip(y, target_rate, clip.source)
