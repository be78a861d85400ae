"""Phonatory features of a sustained vowel.

Fifteen scalars grouped by deficit dimension: airflow (MPT), voicing
continuity (breaks), pitch stability (F0 SD, RPDE), perturbation (jitter,
shimmer), noise (HNR, DFA), tremor (FTRI, ATRI) and articulatory stability
(MFCC spread). A feature that cannot be computed is reported as ``None``
together with a reason in ``PhonatoryFeatures.flags``; nothing here raises
on a well-formed clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.fft import dct
from scipy.ndimage import median_filter
from sklearn.base import BaseEstimator, TransformerMixin

from .audio_io import CANONICAL_RATE, NONLINEAR_RATE, AudioClip, load_wav, resample
from .pitch import PitchConfig, PitchTrack, PulseSequence, extract_pulses, track_pitch, voiced_segments

__all__ = [
    "PhonatoryConfig",
    "PhonatoryFeatures",
    "TremorResult",
    "FEATURE_NAMES",
    "FEATURE_UNITS",
    "DIMENSIONS",
    "DETAIL_COLUMNS",
    "maximum_phonation_time",
    "voice_break_analysis",
    "f0_sd",
    "jitter_local",
    "shimmer_local",
    "hnr",
    "rpde",
    "dfa",
    "dfa_exponent",
    "amplitude_contour",
    "tremor_analysis",
    "tremor_indices",
    "mfcc",
    "mfcc_stats",
    "extract_all",
    "PhonatoryExtractor",
]

FEATURE_NAMES = (
    "mpt",
    "first_break",
    "n_voice_breaks",
    "deg_pitch_breaks",
    "deg_vocal_arrests",
    "f0_sd",
    "rpde",
    "jitter_local",
    "shimmer_local",
    "hnr",
    "dfa",
    "ftri",
    "atri",
    "mean_sd_mfcc",
    "mean_sd_delta_mfcc",
)

FEATURE_UNITS = {
    "mpt": "s",
    "first_break": "s",
    "n_voice_breaks": "count",
    "deg_pitch_breaks": "%",
    "deg_vocal_arrests": "%",
    "f0_sd": "Hz",
    "rpde": "unitless",
    "jitter_local": "%",
    "shimmer_local": "%",
    "hnr": "dB",
    "dfa": "unitless",
    "ftri": "%",
    "atri": "%",
    "mean_sd_mfcc": "unitless",
    "mean_sd_delta_mfcc": "unitless",
}

# auxiliary numbers carried alongside the features in CSV output
DETAIL_COLUMNS = ("phonation_start", "phonation_end", "ftri_hz", "atri_hz", "n_pulses")

# the seven deficit dimensions; Bonferroni in the statistics protocol is
# taken over these
DIMENSIONS = {
    "mpt": "airflow",
    "first_break": "voicing",
    "n_voice_breaks": "voicing",
    "deg_pitch_breaks": "voicing",
    "deg_vocal_arrests": "voicing",
    "f0_sd": "pitch",
    "rpde": "pitch",
    "jitter_local": "perturbation",
    "shimmer_local": "perturbation",
    "hnr": "noise",
    "dfa": "noise",
    "ftri": "tremor",
    "atri": "tremor",
    "mean_sd_mfcc": "articulation",
    "mean_sd_delta_mfcc": "articulation",
}


@dataclass(frozen=True)
class PhonatoryConfig:
    """Thresholds and analysis constants for the phonatory features."""

    break_min_gap: float = 0.060
    arrest_min: float = 0.090
    pitch_break_octaves: float = 0.5
    median_frames: int = 5
    hnr_floor: float = -10.0
    hnr_ceiling: float = 40.0
    rpde_dim: int = 4
    rpde_delay: int = 7
    rpde_radius: float = 0.12
    rpde_t_max: int = 1000
    rpde_max_points: int = 4000
    dfa_min_window: int = 50
    dfa_max_window: int = 1000
    dfa_n_windows: int = 12
    tremor_min_run: float = 1.5
    tremor_band: tuple = (1.5, 15.0)
    mfcc_frame: float = 0.025
    mfcc_hop: float = 0.010
    mfcc_n_mels: int = 23
    mfcc_n_coeffs: int = 13
    mfcc_nfft: int = 512
    mfcc_preemphasis: float = 0.97
    delta_width: int = 2

    def __post_init__(self):
        if self.break_min_gap <= 0 or self.arrest_min <= 0:
            raise ValueError("break thresholds must be positive")
        if self.median_frames < 1 or self.median_frames % 2 == 0:
            raise ValueError("median_frames must be a positive odd number")
        if not self.hnr_floor < self.hnr_ceiling:
            raise ValueError("need hnr_floor < hnr_ceiling")
        lo, hi = self.tremor_band
        if not 0 < lo < hi:
            raise ValueError("tremor_band must be (low, high) with 0 < low < high")
        if not 2 <= self.dfa_min_window < self.dfa_max_window:
            raise ValueError("need 2 <= dfa_min_window < dfa_max_window")
        if self.dfa_n_windows < 10:
            raise ValueError("dfa_n_windows must be >= 10")
        if self.rpde_dim < 1 or self.rpde_delay < 1 or self.rpde_radius <= 0:
            raise ValueError("bad RPDE embedding parameters")


@dataclass
class PhonatoryFeatures:
    """The fifteen phonatory features of one recording.

    ``None`` marks a value that is absent or could not be computed; the
    reason sits in ``flags`` under the feature name. ``first_break`` is
    ``None`` without a flag when phonation has no break. ``details`` holds
    auxiliary numbers (tremor frequencies, phonation span, pulse count).
    """

    mpt: float | None = None
    first_break: float | None = None
    n_voice_breaks: int | None = None
    deg_pitch_breaks: float | None = None
    deg_vocal_arrests: float | None = None
    f0_sd: float | None = None
    rpde: float | None = None
    jitter_local: float | None = None
    shimmer_local: float | None = None
    hnr: float | None = None
    dfa: float | None = None
    ftri: float | None = None
    atri: float | None = None
    mean_sd_mfcc: float | None = None
    mean_sd_delta_mfcc: float | None = None
    flags: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def computable(self, name):
        return name not in self.flags

    def as_dict(self):
        return {n: getattr(self, n) for n in FEATURE_NAMES}

    def to_row(self):
        """Flat CSV row: the 15 values (empty when None), one ``<name>_ok``
        column each, and the auxiliary ``DETAIL_COLUMNS``."""
        row = {}
        for n in FEATURE_NAMES:
            v = getattr(self, n)
            row[n] = "" if v is None else repr(float(v)) if n != "n_voice_breaks" else str(int(v))
        for n in FEATURE_NAMES:
            row[n + "_ok"] = int(self.computable(n))
        for n in DETAIL_COLUMNS:
            v = self.details.get(n)
            row[n] = "" if v is None else repr(float(v))
        return row

    def to_json(self):
        meta = {
            n: {
                "value": getattr(self, n),
                "unit": FEATURE_UNITS[n],
                "dimension": DIMENSIONS[n],
                "computable": self.computable(n),
                "reason": self.flags.get(n),
            }
            for n in FEATURE_NAMES
        }
        return json.dumps({"features": meta, "details": self.details}, indent=2, sort_keys=True)

    @classmethod
    def from_row(cls, row):
        kw, flags = {}, {}
        for n in FEATURE_NAMES:
            v = row.get(n, "")
            kw[n] = None if v in ("", None) else (int(float(v)) if n == "n_voice_breaks" else float(v))
            ok = row.get(n + "_ok", "1")
            if str(ok) in ("0", "False"):
                flags[n] = "not computable"
        details = {n: float(row[n]) for n in DETAIL_COLUMNS if row.get(n) not in ("", None)}
        return cls(**kw, flags=flags, details=details)


class _NotComputable(Exception):
    pass


# --------------------------------------------------------------------------
# voicing continuity


def maximum_phonation_time(segments) -> float:
    """Total voiced duration, the sum of segment lengths."""
    return float(sum(s.end - s.start for s in segments))


def _phonation_span(segments):
    if not segments:
        return 0.0, 0.0
    return segments[0].start, segments[-1].end


def voice_break_analysis(track: PitchTrack, segments, clip_duration: float, cfg: PhonatoryConfig | None = None):
    """Voice breaks, pitch breaks and vocal arrests.

    A voice break is an unvoiced gap of at least ``break_min_gap`` between
    consecutive voiced segments. Gaps of at least ``arrest_min`` add to the
    degree of vocal arrests. Voiced frames whose log2 F0 departs from a
    running median by ``pitch_break_octaves`` or more add one hop each to
    the degree of pitch breaks. Both degrees are percentages of the
    phonation span (first onset to last offset).

    Returns
    -------
    dict
        ``first_break`` (s or None), ``n_breaks``, ``deg_pitch_breaks`` and
        ``deg_vocal_arrests``.
    """
    cfg = cfg or PhonatoryConfig()
    segments = sorted(segments, key=lambda s: s.start)
    start, end = _phonation_span(segments)
    span = min(end, clip_duration) - start
    out = {"first_break": None, "n_breaks": 0, "deg_pitch_breaks": 0.0, "deg_vocal_arrests": 0.0}
    if span <= 0:
        return out

    arrest = 0.0
    for a, b in zip(segments[:-1], segments[1:]):
        gap = b.start - a.end
        if gap >= cfg.break_min_gap - 1e-9:
            out["n_breaks"] += 1
            if out["first_break"] is None:
                out["first_break"] = float(a.end)
        if gap >= cfg.arrest_min - 1e-9:
            arrest += gap

    n_jump = 0
    v = track.voiced
    idx = np.flatnonzero(v)
    if idx.size:
        # running median within each contiguous voiced run
        m = np.concatenate([[False], v, [False]]).astype(np.int8)
        d = np.diff(m)
        for a, b in zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)):
            lf = np.log2(track.f0[a:b])
            med = median_filter(lf, size=cfg.median_frames, mode="nearest")
            n_jump += int(np.sum(np.abs(lf - med) >= cfg.pitch_break_octaves))

    out["deg_pitch_breaks"] = float(min(100.0, 100.0 * n_jump * track.frame_hop / span))
    out["deg_vocal_arrests"] = float(min(100.0, 100.0 * arrest / span))
    return out


# --------------------------------------------------------------------------
# pitch and perturbation


def f0_sd(track: PitchTrack) -> float:
    """Sample SD of F0 over voiced frames."""
    f = track.f0[track.voiced]
    if f.size < 2:
        raise _NotComputable("fewer than 2 voiced frames")
    return float(np.std(f, ddof=1))


def _same_run_pairs(pulses: PulseSequence, values):
    same = pulses.segment[1:] == pulses.segment[:-1]
    return values[1:][same], values[:-1][same]


def _check_pulses(pulses):
    if pulses.pulse_times.size == 0:
        raise _NotComputable("no glottal pulses")
    counts = np.bincount(pulses.segment - pulses.segment.min())
    if counts.max() < 3:
        raise _NotComputable("no run with 3 or more pulses")


def jitter_local(pulses: PulseSequence) -> float:
    """Local jitter (%): mean absolute difference of consecutive periods over the mean period.

    Only periods between pulses of the same run, and differences between
    periods of the same run, are used.
    """
    _check_pulses(pulses)
    diffs, periods = [], []
    for t, _ in pulses.runs():
        if t.size < 2:
            continue
        T = np.diff(t)
        periods.append(T)
        diffs.append(np.abs(np.diff(T)))
    return float(100.0 * np.concatenate(diffs).mean() / np.concatenate(periods).mean())


def shimmer_local(pulses: PulseSequence) -> float:
    """Local shimmer (%): mean absolute difference of consecutive amplitudes over the mean amplitude."""
    _check_pulses(pulses)
    a1, a0 = _same_run_pairs(pulses, pulses.amplitudes)
    return float(100.0 * np.abs(a1 - a0).mean() / pulses.amplitudes.mean())


def hnr(clip: AudioClip, track: PitchTrack, cfg: PhonatoryConfig | None = None) -> float:
    """Mean over voiced frames of ``10 log10(r / (1 - r))`` in dB.

    ``r`` is the frame's normalized autocorrelation at the tracked F0 lag,
    the strength stored on the track. Each frame value is clipped to
    ``[hnr_floor, hnr_ceiling]``.
    """
    cfg = cfg or PhonatoryConfig()
    r = track.strength[track.voiced]
    if r.size == 0:
        raise _NotComputable("no voiced frames")
    lo = 10 ** (cfg.hnr_floor / 10)
    hi = 10 ** (cfg.hnr_ceiling / 10)
    with np.errstate(divide="ignore"):
        ratio = np.where(r >= 1.0, np.inf, np.clip(r, 0.0, 1.0) / (1.0 - np.clip(r, 0.0, 1.0 - 1e-15)))
    db = 10.0 * np.log10(np.clip(ratio, lo, hi))
    return float(db.mean())


# --------------------------------------------------------------------------
# nonlinear dynamics


def _embed(x, dim, delay):
    n = x.size - (dim - 1) * delay
    if n <= 0:
        return np.zeros((0, dim))
    return np.stack([x[i * delay : i * delay + n] for i in range(dim)], axis=1)


def recurrence_periods(x, cfg: PhonatoryConfig | None = None) -> np.ndarray:
    """Close-return periods of the delay embedding of ``x``.

    From each start point the orbit must leave the ball of radius
    ``rpde_radius * max|x|`` and re-enter it. The period is the time of
    closest approach during that first re-entry, so an exactly periodic
    orbit yields its period rather than the first sample to cross the
    boundary. Start points are spread evenly, at most ``rpde_max_points``.
    """
    cfg = cfg or PhonatoryConfig()
    x = np.asarray(x, float)
    scale = np.max(np.abs(x))
    if scale == 0:
        return np.zeros(0, dtype=int)
    eps = cfg.rpde_radius * scale
    emb = _embed(x, cfg.rpde_dim, cfg.rpde_delay)
    tmax = cfg.rpde_t_max
    n_start = emb.shape[0] - tmax - 1
    if n_start <= 0:
        return np.zeros(0, dtype=int)
    starts = np.unique(np.linspace(0, n_start - 1, min(cfg.rpde_max_points, n_start)).astype(int))
    out = []
    for chunk in np.array_split(starts, max(1, starts.size // 256)):
        # distances from each start to the next tmax points
        idx = chunk[:, None] + np.arange(tmax + 1)[None, :]
        d = np.sqrt(((emb[idx] - emb[chunk][:, None, :]) ** 2).sum(axis=2))
        inside = d < eps
        left = ~inside
        has_left = left.any(axis=1)
        first_out = np.argmax(left, axis=1)
        after = inside & (np.arange(tmax + 1)[None, :] > first_out[:, None])
        has_ret = has_left & after.any(axis=1)
        for r in np.flatnonzero(has_ret):
            j0 = int(np.argmax(after[r]))
            j1 = j0
            while j1 + 1 <= tmax and inside[r, j1 + 1]:
                j1 += 1
            out.append(j0 + int(np.argmin(d[r, j0 : j1 + 1])))
    return np.asarray(out, dtype=int)


def rpde(clip: AudioClip, cfg: PhonatoryConfig | None = None) -> float:
    """Recurrence period density entropy, ``H / ln(T_max)`` in [0, 1]."""
    cfg = cfg or PhonatoryConfig()
    periods = recurrence_periods(clip.samples, cfg)
    if periods.size == 0:
        raise _NotComputable("no recurrences found")
    counts = np.bincount(periods, minlength=cfg.rpde_t_max + 1)[1:]
    p = counts[counts > 0] / counts.sum()
    h = -np.sum(p * np.log(p))
    return float(np.clip(h / np.log(cfg.rpde_t_max), 0.0, 1.0))


def _dfa_windows(cfg):
    w = np.geomspace(cfg.dfa_min_window, cfg.dfa_max_window, cfg.dfa_n_windows)
    return np.unique(np.round(w).astype(int))


def dfa_fluctuations(x, windows):
    """RMS fluctuation of the integrated profile after per-window linear detrending."""
    y = np.cumsum(x - np.mean(x))
    out = []
    for n in windows:
        m = y.size // n
        seg = y[: m * n].reshape(m, n)
        t = np.arange(n) - (n - 1) / 2.0
        # least-squares line per window: slope from centred time
        slope = seg @ t / np.dot(t, t)
        resid = seg - seg.mean(axis=1, keepdims=True) - slope[:, None] * t[None, :]
        out.append(np.sqrt(np.mean(resid**2)))
    return np.asarray(out)


def dfa_exponent(x, cfg: PhonatoryConfig | None = None) -> float:
    """Raw DFA scaling exponent alpha."""
    cfg = cfg or PhonatoryConfig()
    x = np.asarray(x, float)
    windows = _dfa_windows(cfg)
    if x.size < windows[-1]:
        raise ValueError(f"signal of {x.size} samples is shorter than the largest DFA window {windows[-1]}")
    f = dfa_fluctuations(x, windows)
    if np.any(f <= 0):
        raise _NotComputable("zero fluctuation")
    slope, _ = np.polyfit(np.log(windows), np.log(f), 1)
    return float(slope)


def dfa(clip: AudioClip, cfg: PhonatoryConfig | None = None) -> float:
    """Normalized DFA, ``alpha / (1 + alpha)``."""
    a = dfa_exponent(clip.samples, cfg)
    return a / (1.0 + a)


# --------------------------------------------------------------------------
# tremor


@dataclass(frozen=True)
class TremorResult:
    """Tremor index (%), frequency (Hz), autocorrelation peak and relative depth.

    ``frequency`` is None when the band holds no autocorrelation peak; the
    index is then 0.
    """

    index: float
    frequency: float | None
    correlation: float
    depth: float


def amplitude_contour(clip: AudioClip, track: PitchTrack, pitch_cfg: PitchConfig | None = None) -> np.ndarray:
    """Per-frame RMS on the pitch frame grid.

    In voiced frames the centred window spans the whole number of local
    periods closest to one frame length, so the contour carries no ripple
    from partial cycles; unvoiced frames use one frame length.
    """
    pitch_cfg = pitch_cfg or PitchConfig()
    fs = clip.sample_rate
    x = clip.samples
    c = np.concatenate([[0.0], np.cumsum(x**2)])
    win = pitch_cfg.frame_len * fs
    hop = int(round(track.frame_hop * fs))
    out = np.zeros(track.n_frames)
    for i in range(track.n_frames):
        if track.voiced[i]:
            T = fs / track.f0[i]
            n = max(int(round(T * max(round(win / T), 1))), 1)
        else:
            n = int(round(win))
        a = i * hop - n // 2
        lo, hi = max(a, 0), min(a + n, x.size)
        out[i] = np.sqrt((c[hi] - c[lo]) / n) if hi > lo else 0.0
    return out


def _lag_corr(x, lag):
    a, b = x[:-lag], x[lag:]
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def tremor_analysis(contour, frame_rate: float, cfg: PhonatoryConfig | None = None) -> TremorResult:
    """Tremor of a contour sampled at ``frame_rate``.

    The contour is linearly detrended and its lag correlation scanned over
    the tremor band; the earliest local maximum within 90% of the strongest
    gives the tremor period (parabolically refined). Depth is the mean per-cycle half peak-to-trough
    of the band-passed contour over the contour mean.
    """
    cfg = cfg or PhonatoryConfig()
    c = np.asarray(contour, float)
    mean = c.mean()
    if mean <= 0:
        raise _NotComputable("contour mean is not positive")
    lo_hz, hi_hz = cfg.tremor_band
    k_lo = max(int(np.floor(frame_rate / hi_hz)), 1)
    k_hi = int(np.ceil(frame_rate / lo_hz))
    if c.size < 2 * (k_hi + 1):
        raise _NotComputable("contour too short for the tremor band")
    x = signal.detrend(c)
    lags = np.arange(k_lo - 1, k_hi + 2)
    lags = lags[lags >= 1]
    r = np.array([_lag_corr(x, int(k)) for k in lags])
    inner = np.arange(1, r.size - 1)
    band = (lags[inner] >= frame_rate / hi_hz) & (lags[inner] <= frame_rate / lo_hz)
    peak = (r[inner] >= r[inner - 1]) & (r[inner] > r[inner + 1]) & band & (r[inner] > 0)
    if not peak.any():
        return TremorResult(0.0, None, 0.0, 0.0)
    # earliest peak within 90% of the strongest, so lag multiples of the
    # tremor period are not preferred over the period itself
    cand = inner[peak]
    i = cand[np.flatnonzero(r[cand] >= 0.9 * r[cand].max())[0]]
    d, height = _vertex(r[i - 1], r[i], r[i + 1])
    lag = lags[i] + d
    corr = float(min(height, 1.0))
    freq = frame_rate / lag

    nyq = frame_rate / 2
    sos = signal.butter(2, [lo_hz / nyq, min(hi_hz / nyq, 0.99)], btype="band", output="sos")
    bp = signal.sosfiltfilt(sos, x)
    period = int(round(lag))
    halves = [0.5 * (seg.max() - seg.min()) for seg in (bp[j : j + period] for j in range(0, bp.size - period + 1, period))]
    depth = float(np.mean(halves)) / mean
    return TremorResult(100.0 * depth * corr, float(freq), corr, depth)


def _vertex(y_m, y_0, y_p):
    # scalar parabolic peak: (offset, height)
    den = y_m - 2.0 * y_0 + y_p
    if den >= 0:
        return 0.0, y_0
    d = float(np.clip(0.5 * (y_m - y_p) / den, -0.5, 0.5))
    return d, y_0 - 0.25 * (y_m - y_p) * d


def _longest_run(track):
    v = np.concatenate([[False], track.voiced, [False]]).astype(np.int8)
    d = np.diff(v)
    runs = list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))
    if not runs:
        return None
    return max(runs, key=lambda ab: (ab[1] - ab[0], -ab[0]))


def tremor_indices(track: PitchTrack, envelope, cfg: PhonatoryConfig | None = None) -> dict:
    """FTRI and ATRI on the longest voiced run.

    Returns a dict with ``ftri`` and ``atri`` (TremorResult or None when
    the run is shorter than ``tremor_min_run``) and ``reason``.
    """
    cfg = cfg or PhonatoryConfig()
    run = _longest_run(track)
    if run is None:
        return {"ftri": None, "atri": None, "reason": "no voiced run"}
    a, b = run
    if (b - a) * track.frame_hop < cfg.tremor_min_run - 1e-9:
        return {"ftri": None, "atri": None, "reason": f"longest voiced run {(b - a) * track.frame_hop:.2f} s < {cfg.tremor_min_run} s"}
    rate = 1.0 / track.frame_hop
    out = {"reason": None}
    for key, contour in (("ftri", track.f0[a:b]), ("atri", np.asarray(envelope)[a:b])):
        try:
            out[key] = tremor_analysis(contour, rate, cfg)
        except _NotComputable as exc:
            out[key] = None
            out["reason"] = str(exc)
    return out


# --------------------------------------------------------------------------
# MFCC


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels, nfft, fs, fmin=0.0, fmax=None):
    """Triangular filters on the HTK mel scale, shape ``(n_mels, nfft//2+1)``."""
    fmax = fs / 2 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:, None] - edges[1:-1, None])
    return np.maximum(0.0, np.minimum(lower, upper))


def deltas(c, width=2):
    """Regression deltas over +-``width`` frames with edge replication."""
    n = c.shape[0]
    pad = np.concatenate([np.repeat(c[:1], width, axis=0), c, np.repeat(c[-1:], width, axis=0)])
    num = sum(k * (pad[width + k : width + k + n] - pad[width - k : width - k + n]) for k in range(1, width + 1))
    return num / (2.0 * sum(k * k for k in range(1, width + 1)))


def mfcc(clip: AudioClip, cfg: PhonatoryConfig | None = None):
    """MFCCs c1..c13 per frame and the frame centre times.

    Frames lie wholly inside the clip (no padding); Hamming window after
    pre-emphasis, power spectrum, log mel energies, orthonormal DCT-II.
    """
    cfg = cfg or PhonatoryConfig()
    fs = clip.sample_rate
    win = int(round(cfg.mfcc_frame * fs))
    hop = int(round(cfg.mfcc_hop * fs))
    x = clip.samples
    x = np.concatenate([x[:1], x[1:] - cfg.mfcc_preemphasis * x[:-1]])
    if x.size < win:
        return np.zeros((0, cfg.mfcc_n_coeffs)), np.zeros(0)
    frames = sliding_window_view(x, win)[::hop]
    nfft = max(cfg.mfcc_nfft, 1 << (win - 1).bit_length())
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), nfft, axis=1)) ** 2
    fb = mel_filterbank(cfg.mfcc_n_mels, nfft, fs)
    logmel = np.log(spec @ fb.T + 1e-12)
    c = dct(logmel, type=2, norm="ortho", axis=1)[:, 1 : cfg.mfcc_n_coeffs + 1]
    times = (np.arange(frames.shape[0]) * hop + win / 2) / fs
    return c, times


def mfcc_stats(clip: AudioClip, track: PitchTrack | None = None, cfg: PhonatoryConfig | None = None,
               pitch_cfg: PitchConfig | None = None) -> dict:
    """Mean across coefficients of the per-coefficient SD over voiced frames.

    Each MFCC frame takes the voicing of the nearest pitch frame. Deltas
    are computed on the full sequence and then restricted the same way.
    """
    cfg = cfg or PhonatoryConfig()
    if track is None:
        track = track_pitch(clip, pitch_cfg)
    c, times = mfcc(clip, cfg)
    if c.shape[0] == 0:
        raise _NotComputable("clip shorter than one MFCC frame")
    k = np.clip(np.round(times / track.frame_hop).astype(int), 0, track.n_frames - 1)
    voiced = track.voiced[k]
    if voiced.sum() < 5:
        raise _NotComputable("fewer than 5 voiced MFCC frames")
    d = deltas(c, cfg.delta_width)
    return {
        "mean_sd_mfcc": float(np.std(c[voiced], axis=0, ddof=1).mean()),
        "mean_sd_delta_mfcc": float(np.std(d[voiced], axis=0, ddof=1).mean()),
    }


# --------------------------------------------------------------------------
# orchestration


def extract_all(clip: AudioClip, cfg: PitchConfig | None = None, phon_cfg: PhonatoryConfig | None = None) -> PhonatoryFeatures:
    """Compute all fifteen features of ``clip`` at any input rate.

    Pitch, perturbation, tremor and MFCC features run on a 16 kHz copy; DFA
    and RPDE run on a 22.5 kHz copy.
    """
    cfg = cfg or PitchConfig()
    phon_cfg = phon_cfg or PhonatoryConfig()
    feats = PhonatoryFeatures()
    flags = feats.flags

    def attempt(names, fn):
        try:
            res = fn()
        except (_NotComputable, ValueError, FloatingPointError) as exc:
            for n in names:
                flags[n] = str(exc)
            return
        if len(names) == 1:
            setattr(feats, names[0], res)
        else:
            for n in names:
                setattr(feats, n, res[n])

    x16 = resample(clip, CANONICAL_RATE)
    track = track_pitch(x16, cfg)
    segs = voiced_segments(track)
    start, end = _phonation_span(segs)
    feats.details.update({"duration": clip.duration, "phonation_start": start, "phonation_end": end,
                          "voiced_frames": int(track.voiced.sum())})

    feats.mpt = maximum_phonation_time(segs)
    vb = voice_break_analysis(track, segs, x16.duration, phon_cfg)
    feats.first_break = vb["first_break"]
    feats.n_voice_breaks = vb["n_breaks"]
    feats.deg_pitch_breaks = vb["deg_pitch_breaks"]
    feats.deg_vocal_arrests = vb["deg_vocal_arrests"]

    attempt(["f0_sd"], lambda: f0_sd(track))
    pulses = extract_pulses(x16, track, cfg)
    feats.details["n_pulses"] = int(len(pulses))
    attempt(["jitter_local"], lambda: jitter_local(pulses))
    attempt(["shimmer_local"], lambda: shimmer_local(pulses))
    attempt(["hnr"], lambda: hnr(x16, track, phon_cfg))

    x22 = resample(clip, NONLINEAR_RATE)
    attempt(["rpde"], lambda: rpde(x22, phon_cfg))
    attempt(["dfa"], lambda: dfa(x22, phon_cfg))

    env = amplitude_contour(x16, track, cfg)
    tr = tremor_indices(track, env, phon_cfg)
    for key in ("ftri", "atri"):
        res = tr[key]
        if res is None:
            flags[key] = tr["reason"] or "not computable"
        else:
            setattr(feats, key, float(res.index))
            feats.details[key + "_hz"] = res.frequency
            feats.details[key + "_corr"] = res.correlation

    attempt(["mean_sd_mfcc", "mean_sd_delta_mfcc"], lambda: mfcc_stats(x16, track, phon_cfg))
    return feats


class PhonatoryExtractor(BaseEstimator, TransformerMixin):
    """Transformer from clips (or WAV paths) to the 15-column feature matrix.

    Not-computable values become NaN. Stateless: ``fit`` only records the
    output width.

    Parameters
    ----------
    pitch_config : PitchConfig, optional
    config : PhonatoryConfig, optional
    """

    def __init__(self, pitch_config=None, config=None):
        self.pitch_config = pitch_config
        self.config = config

    def fit(self, X, y=None):
        self.n_features_out_ = len(FEATURE_NAMES)
        return self

    def extract(self, X):
        out = []
        for item in X:
            clip = item if isinstance(item, AudioClip) else load_wav(item)
            out.append(extract_all(clip, self.pitch_config, self.config))
        return out

    def transform(self, X):
        feats = self.extract(X)
        return np.array([[np.nan if f.as_dict()[n] is None else float(f.as_dict()[n]) for n in FEATURE_NAMES] for f in feats])

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)
