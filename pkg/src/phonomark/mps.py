"""Modulation power spectrum of a log spectrogram.

A Gaussian-window spectrogram is sampled every 1 ms on a 50 Hz frequency
grid and log-compressed. The amplitude of the 2D Fourier transform of
100 ms patches (stepped by 10 ms) is averaged and cropped to temporal
modulations of -200..200 Hz and spectral modulations of 0..9.5 cyc/kHz,
a 41 x 77 grid.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import CANONICAL_RATE, AudioClip, load_wav, resample

__all__ = [
    "MPSConfig",
    "Spectrogram",
    "MPSMatrix",
    "gaussian_spectrogram",
    "modulation_power_spectrum",
    "mps_feature_vector",
    "mps_from_vector",
    "compute_mps",
    "write_matrix",
    "read_matrix",
    "MPSExtractor",
    "N_TEMPORAL",
    "N_SPECTRAL",
    "N_FEATURES",
    "TEMPORAL_AXIS",
    "SPECTRAL_AXIS",
]

N_TEMPORAL = 41
N_SPECTRAL = 77
N_FEATURES = N_TEMPORAL * N_SPECTRAL
TEMPORAL_AXIS = np.arange(-20, 21) * 10.0  # Hz
SPECTRAL_AXIS = np.arange(77) * 0.125  # cyc/kHz


@dataclass(frozen=True)
class MPSConfig:
    freq_step: float = 50.0
    time_step: float = 0.001
    floor_db: float = 80.0
    window_frames: int = 100
    step_frames: int = 10
    truncate_sigmas: float = 5.0
    subtract_mean: bool = True

    def __post_init__(self):
        if self.floor_db <= 0:
            raise ValueError("floor_db must be positive")
        if self.window_frames < 2 or self.step_frames < 1:
            raise ValueError("bad MPS window layout")


@dataclass(frozen=True)
class Spectrogram:
    """Log magnitude in dB, shape ``(freq_bins, frames)``."""

    log_magnitude: np.ndarray
    freq_step: float
    time_step: float

    @property
    def shape(self):
        return self.log_magnitude.shape

    @property
    def freqs(self):
        return np.arange(self.log_magnitude.shape[0]) * self.freq_step

    @property
    def times(self):
        return np.arange(self.log_magnitude.shape[1]) * self.time_step


@dataclass(frozen=True)
class MPSMatrix:
    """Averaged modulation amplitude on the temporal (rows) x spectral (columns) grid."""

    power: np.ndarray
    n_windows: int
    temporal_axis: np.ndarray = TEMPORAL_AXIS
    spectral_axis: np.ndarray = SPECTRAL_AXIS

    def __post_init__(self):
        if self.power.shape != (N_TEMPORAL, N_SPECTRAL):
            raise ValueError(f"MPS must be {N_TEMPORAL}x{N_SPECTRAL}, got {self.power.shape}")


def _gaussian_window(fs, cfg):
    # sigma_f equal to the bin spacing; the dual time sigma is 1/(2 pi sigma_f)
    sigma = fs / (2 * np.pi * cfg.freq_step)
    half = int(np.ceil(cfg.truncate_sigmas * sigma))
    n = np.arange(-half, half + 1)
    w = np.exp(-0.5 * (n / sigma) ** 2)
    return w / w.sum()


def gaussian_spectrogram(clip: AudioClip, cfg: MPSConfig | None = None) -> Spectrogram:
    """Gaussian-window log-magnitude spectrogram.

    Frames are centred every ``time_step`` from t = 0 with zero padding.
    The window is a Gaussian with frequency sd ``freq_step``, truncated at
    ``truncate_sigmas``; bins every ``freq_step`` up to (not including)
    Nyquist. Values are in dB and floored at ``floor_db`` below the clip
    maximum; a silent clip is flat at ``-floor_db``.
    """
    cfg = cfg or MPSConfig()
    fs = clip.sample_rate
    nfft = int(round(fs / cfg.freq_step))
    hop = int(round(cfg.time_step * fs))
    if abs(nfft * cfg.freq_step - fs) > 1e-9 or abs(hop - cfg.time_step * fs) > 1e-9:
        raise ValueError(f"rate {fs} Hz is not compatible with the {cfg.freq_step} Hz / {cfg.time_step} s grid")
    w = _gaussian_window(fs, cfg)
    # the window may outgrow one bin spacing; transform at a multiple of the
    # base length and keep every m-th bin, which samples the same spectrum
    m = -(-w.size // nfft)
    half = w.size // 2
    x = clip.samples
    if x.size < w.size:
        raise ValueError(f"clip of {x.size} samples is shorter than one {w.size}-sample analysis window")
    n_frames = (x.size - 1) // hop + 1
    xp = np.concatenate([np.zeros(half), x, np.zeros(half + hop)])
    frames = sliding_window_view(xp, w.size)[: n_frames * hop : hop][:n_frames]
    mag = np.abs(np.fft.rfft(frames * w, m * nfft, axis=1))[:, : m * (nfft // 2) : m]
    peak = mag.max()
    if peak <= 0:
        db = np.full(mag.shape, -cfg.floor_db)
    else:
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(mag / peak)
        db = np.maximum(db, -cfg.floor_db)
    return Spectrogram(np.ascontiguousarray(db.T), cfg.freq_step, cfg.time_step)


def modulation_power_spectrum(spec: Spectrogram, cfg: MPSConfig | None = None) -> MPSMatrix:
    """Average 2D Fourier amplitude of spectrogram patches, cropped to 41 x 77.

    Each ``window_frames`` patch is mean-subtracted (with ``subtract_mean``)
    before the transform. Rows are temporal modulation -200..200 Hz,
    columns spectral modulation 0..9.5 cyc/kHz.
    """
    cfg = cfg or MPSConfig()
    S = spec.log_magnitude
    n_freq, n_frames = S.shape
    W, step = cfg.window_frames, cfg.step_frames
    if n_frames < W:
        raise ValueError(f"spectrogram has {n_frames} frames; need at least {W}")
    dt = 1.0 / (W * spec.time_step)
    dq = 1000.0 / (n_freq * spec.freq_step)  # cyc/kHz
    kt = np.round(TEMPORAL_AXIS / dt).astype(int)
    kq = np.round(SPECTRAL_AXIS / dq).astype(int)
    if not (np.allclose(kt * dt, TEMPORAL_AXIS) and np.allclose(kq * dq, SPECTRAL_AXIS)):
        raise ValueError("spectrogram grid does not land on the MPS axes")
    if kq[-1] >= n_freq // 2 + 1 or kt[-1] >= W // 2 + 1:
        raise ValueError("spectrogram too coarse for the MPS crop")

    starts = np.arange(0, n_frames - W + 1, step)
    acc = np.zeros((n_freq, W))
    # fixed-order accumulation in chunks keeps memory bounded and output deterministic
    for chunk in np.array_split(starts, max(1, starts.size // 64)):
        patches = np.stack([S[:, s : s + W] for s in chunk])
        if cfg.subtract_mean:
            patches = patches - patches.mean(axis=(1, 2), keepdims=True)
        acc += np.abs(np.fft.fft2(patches, axes=(1, 2))).sum(axis=0)
    amp = acc / starts.size
    # rows: temporal index (negative via wraparound), columns: spectral index
    power = amp[np.ix_(kq, kt % W)].T
    return MPSMatrix(np.ascontiguousarray(power), int(starts.size))


def compute_mps(clip: AudioClip, cfg: MPSConfig | None = None) -> MPSMatrix:
    """MPS of ``clip`` at any input rate (analysed at 16 kHz)."""
    return modulation_power_spectrum(gaussian_spectrogram(resample(clip, CANONICAL_RATE), cfg), cfg)


def mps_feature_vector(m: MPSMatrix) -> np.ndarray:
    """Temporal-major flattening: element ``k`` is ``power[k // 77, k % 77]``."""
    return m.power.reshape(-1).copy()


def mps_from_vector(v, n_windows: int = 0) -> MPSMatrix:
    v = np.asarray(v, float)
    if v.size != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} values, got {v.size}")
    return MPSMatrix(v.reshape(N_TEMPORAL, N_SPECTRAL).copy(), n_windows)


def write_matrix(path, values, meta: dict | None = None) -> None:
    """Write ``values`` as little-endian float64 to ``path`` and a JSON sidecar ``path + '.json'``.

    The sidecar records shape, row/column axes and any extra ``meta``.
    """
    arr = np.ascontiguousarray(values, dtype="<f8")
    path = os.fspath(path)
    with open(path, "wb") as fh:
        fh.write(arr.tobytes(order="C"))
    side = {"dtype": "float64", "byte_order": "little", "order": "row-major", "shape": list(arr.shape)}
    if arr.shape == (N_TEMPORAL, N_SPECTRAL) or arr.shape == (N_FEATURES,):
        side["rows"] = {"name": "temporal_modulation", "unit": "Hz", "values": TEMPORAL_AXIS.tolist()}
        side["columns"] = {"name": "spectral_modulation", "unit": "cyc/kHz", "values": SPECTRAL_AXIS.tolist()}
    side.update(meta or {})
    with open(path + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def read_matrix(path):
    """Read a matrix written by ``write_matrix``; returns (array, sidecar dict)."""
    path = os.fspath(path)
    with open(path + ".json") as fh:
        side = json.load(fh)
    arr = np.fromfile(path, dtype="<f8").reshape(side["shape"])
    return arr, side


class MPSExtractor(BaseEstimator, TransformerMixin):
    """Transformer from clips (or WAV paths) to 3157-column MPS vectors."""

    def __init__(self, config=None):
        self.config = config

    def fit(self, X, y=None):
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X):
        rows = []
        for item in X:
            clip = item if isinstance(item, AudioClip) else load_wav(item)
            rows.append(mps_feature_vector(compute_mps(clip, self.config)))
        return np.vstack(rows) if rows else np.zeros((0, N_FEATURES))

    def get_feature_names_out(self, input_features=None):
        names = [f"mps_t{t:+.0f}_s{s:.3f}" for t in TEMPORAL_AXIS for s in SPECTRAL_AXIS]
        return np.asarray(names, dtype=object)
