"""Framewise F0 tracking, glottal pulse marks and voiced-run segmentation.

The tracker computes the normalized cross-correlation function (NCCF) of
each frame over the lag band allowed by ``[floor, ceiling]``, keeps the
strongest local maxima as candidates and picks one per frame with a
Viterbi pass that penalises log-f0 jumps. Voicing is decided per frame
before the Viterbi pass, from the NCCF peak and a frame energy gate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

from .audio_io import AudioClip

__all__ = [
    "PitchConfig",
    "PitchTrack",
    "PulseSequence",
    "VoicedSegment",
    "track_pitch",
    "extract_pulses",
    "voiced_segments",
    "nccf_frames",
]


@dataclass(frozen=True)
class PitchConfig:
    floor: float = 60.0
    ceiling: float = 400.0
    frame_hop: float = 0.010
    frame_len: float = 0.040
    voicing_threshold: float = 0.45
    energy_gate: float = 0.01
    octave_cost: float = 0.35
    lag_weight: float = 0.3
    n_candidates: int = 5

    def __post_init__(self):
        if not 0 < self.floor < self.ceiling:
            raise ValueError("need 0 < floor < ceiling")
        if not 0 < self.frame_hop <= self.frame_len:
            raise ValueError("need 0 < frame_hop <= frame_len")
        if not 0 < self.voicing_threshold < 1:
            raise ValueError("voicing_threshold must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    def check_rate(self, sample_rate):
        if self.ceiling >= sample_rate / 2:
            raise ValueError(f"ceiling {self.ceiling} Hz is not below Nyquist of {sample_rate} Hz")


@dataclass(frozen=True)
class PitchTrack:
    """Per-frame F0 (0 where unvoiced), voicing flags and NCCF peak strength."""

    times: np.ndarray
    f0: np.ndarray
    voiced: np.ndarray
    strength: np.ndarray
    frame_hop: float
    duration: float

    @property
    def n_frames(self):
        return self.times.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "f0", "voiced"])
            for t, f, v in zip(self.times, self.f0, self.voiced):
                w.writerow([f"{t:.6f}", f"{f:.6f}", int(v)])


@dataclass(frozen=True)
class VoicedSegment:
    start: float
    end: float

    @property
    def duration(self):
        return self.end - self.start


@dataclass(frozen=True)
class PulseSequence:
    """Glottal pulse marks.

    ``segment`` labels each pulse with its run id; ``periods`` and
    ``amplitude_pairs`` only pair consecutive pulses sharing a run.
    """

    pulse_times: np.ndarray
    amplitudes: np.ndarray
    segment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return self.pulse_times.size

    @property
    def _same(self):
        return self.segment[1:] == self.segment[:-1]

    @property
    def periods(self) -> np.ndarray:
        if self.pulse_times.size < 2:
            return np.zeros(0)
        return np.diff(self.pulse_times)[self._same]

    def runs(self):
        """Yield ``(times, amplitudes)`` per run."""
        for s in np.unique(self.segment):
            m = self.segment == s
            yield self.pulse_times[m], self.amplitudes[m]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pulse_time", "period", "amplitude"])
            n = self.pulse_times.size
            for i in range(n):
                if i + 1 < n and self.segment[i + 1] == self.segment[i]:
                    period = f"{self.pulse_times[i + 1] - self.pulse_times[i]:.9f}"
                else:
                    period = ""
                w.writerow([f"{self.pulse_times[i]:.9f}", period, f"{self.amplitudes[i]:.9f}"])


def _lag_band(cfg, fs):
    lo = int(np.ceil(fs / cfg.ceiling))
    hi = int(np.floor(fs / cfg.floor))
    return lo, hi


def _frame_layout(n_samples, fs, cfg):
    win = int(round(cfg.frame_len * fs))
    hop = int(round(cfg.frame_hop * fs))
    n_frames = 1 + (n_samples - 1) // hop
    return win, hop, n_frames


def nccf_frames(x, fs, cfg, lags):
    """NCCF of every frame at integer ``lags`` (a contiguous range).

    Frame ``i`` is centred on sample ``i * hop``; the signal is zero-padded
    on both sides. Returns an array of shape ``(n_frames, len(lags))``.
    """
    win, hop, n_frames = _frame_layout(x.size, fs, cfg)
    lags = np.asarray(lags)
    lo, hi = int(lags[0]), int(lags[-1])
    span = win + hi + 1
    front = win // 2
    back = span + n_frames * hop
    xp = np.concatenate([np.zeros(front), x, np.zeros(max(back - x.size - front, 0))])
    frames = sliding_window_view(xp, span)[: n_frames * hop : hop][:n_frames]

    nfft = sfft.next_fast_len(span + win)
    ref = sfft.rfft(frames[:, :win], nfft, axis=1)
    full = sfft.rfft(frames, nfft, axis=1)
    xc = sfft.irfft(np.conj(ref) * full, nfft, axis=1)[:, lo : hi + 1]

    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    e0 = csum[:, win][:, None]
    et = csum[:, lo + win : hi + win + 1] - csum[:, lo : hi + 1]
    denom = np.sqrt(e0 * et)
    tiny = 1e-20
    out = np.where(denom > tiny, xc / np.maximum(denom, tiny), 0.0)
    return np.clip(out, -1.0, 1.0)


def _central_rms(x, fs, cfg):
    win, hop, n_frames = _frame_layout(x.size, fs, cfg)
    half = hop // 2
    xp = np.concatenate([np.zeros(half), x, np.zeros(hop + half)])
    e = sliding_window_view(xp**2, hop)[: n_frames * hop : hop][:n_frames]
    return np.sqrt(e.mean(axis=1))


def _parabolic(y_m, y_0, y_p):
    """Vertex offset and height of the parabola through three equispaced points."""
    den = y_m - 2.0 * y_0 + y_p
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den < 0, 0.5 * (y_m - y_p) / den, 0.0)
    d = np.clip(d, -0.5, 0.5)
    return d, y_0 - 0.25 * (y_m - y_p) * d


def _upsample(y, lo, hi, factor):
    """Band-limited (FFT) interpolation of ``y[lo:hi+1]`` with a margin.

    Returns the fine signal and the coarse index of its first sample.
    """
    pad = 32
    a, b = max(lo - pad, 0), min(hi + pad + 1, y.size)
    n = b - a
    # even extension: the periodic continuation has no jump at the ends
    ext = np.concatenate([y[a:b], y[a:b][::-1]])
    fine = sfft.irfft(sfft.rfft(ext), 2 * n * factor)[: n * factor] * factor
    return fine, a


def _cycle_amplitudes(fine, a, factor, pos, period):
    """Peak absolute value within half a period either side of each mark."""
    mag = np.abs(fine)
    amps = []
    for q in pos:
        h = 0.5 * period(q)
        j0 = max(int(np.ceil((q - h - a) * factor)), 0)
        j1 = min(int(np.ceil((q + h - a) * factor)), mag.size)
        amps.append(float(mag[j0:j1].max()) if j1 > j0 else float(mag[min(j0, mag.size - 1)]))
    return amps


def _follow_cycles(y, i0, i1, period, min_corr=0.2):
    """Fractional pulse marks from ``i0`` to ``i1``.

    The first mark is the largest sample within the first period. Each
    next mark is displaced from the previous one by the lag in
    [0.8 T, 1.2 T] maximising the normalized cross-correlation of
    one-period windows (shortened at the signal edges), refined
    parabolically. Following stops at ``i1``
    or when the best correlation drops below ``min_corr``.
    """
    T = period(i0)
    first = i0 + int(np.argmax(y[i0 : min(i0 + int(np.ceil(T)), i1) + 1]))
    marks = [float(first)]
    while True:
        p = marks[-1]
        pi = int(round(p))
        T = period(p)
        h = max(int(round(T / 2)), 1)
        lo = pi + int(np.ceil(0.8 * T))
        hi = min(pi + int(np.floor(1.2 * T)), i1)
        if lo > hi:
            break
        # windows shrink on the side that would leave the signal
        hl = min(h, pi)
        hr = min(h, y.size - 3 - hi)
        if hl + hr < h:
            break
        ref = y[pi - hl : pi + hr + 1]
        seg = y[lo - hl - 1 : hi + hr + 2]
        L = hl + hr + 1
        num = np.correlate(seg, ref, mode="valid")
        e = np.concatenate([[0.0], np.cumsum(seg**2)])
        den = np.sqrt((e[L:] - e[:-L]) * np.dot(ref, ref))
        cc = np.where(den > 0, num / np.where(den > 0, den, 1.0), -1.0)
        # cc[0] and cc[-1] are the guard lags lo-1 and hi+1
        k = 1 + int(np.argmax(cc[1:-1]))
        if cc[k] < min_corr:
            break
        d, _ = _parabolic(cc[k - 1], cc[k], cc[k + 1])
        q = p + (lo - 1 + k + float(d) - pi)
        if q > i1:
            break
        marks.append(q)
    return marks


def _candidates(r, lags, k):
    """Top-``k`` interior local maxima per frame, refined to sub-lag precision.

    ``r`` covers ``lags`` which extend one lag beyond the search band on each
    side. Returns (lag, value) arrays of shape (n_frames, k), NaN-padded.
    """
    mid = r[:, 1:-1]
    peak = (mid >= r[:, :-2]) & (mid > r[:, 2:]) & (mid > 0)
    score = np.where(peak, mid, -np.inf)
    kk = min(k, score.shape[1])
    idx = np.argsort(-score, axis=1, kind="stable")[:, :kk]
    rows = np.arange(r.shape[0])[:, None]
    valid = np.isfinite(score[rows, idx])
    d, v = _parabolic(r[rows, idx], r[rows, idx + 1], r[rows, idx + 2])
    lag = lags[1:-1][idx] + d
    lag = np.where(valid, lag, np.nan)
    v = np.where(valid, np.minimum(v, 1.0), np.nan)
    return lag, v


def _viterbi(lag, val, max_lag, cfg):
    """Choose one candidate per frame for a contiguous voiced run."""
    n, k = lag.shape
    local = np.where(np.isfinite(val), 1.0 - val + cfg.lag_weight * lag / max_lag, np.inf)
    loglag = np.log2(np.where(np.isfinite(lag), lag, 1.0))
    cost = local[0].copy()
    back = np.zeros((n, k), dtype=int)
    for i in range(1, n):
        trans = cfg.octave_cost * np.abs(loglag[i][:, None] - loglag[i - 1][None, :])
        tot = cost[None, :] + trans
        back[i] = np.argmin(tot, axis=1)
        cost = tot[np.arange(k), back[i]] + local[i]
    path = np.zeros(n, dtype=int)
    path[-1] = int(np.argmin(cost))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path


def _runs(mask):
    """(start, stop) index pairs of True runs, stop exclusive."""
    m = np.concatenate([[False], np.asarray(mask, bool), [False]])
    d = np.diff(m.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def track_pitch(clip: AudioClip, cfg: PitchConfig | None = None) -> PitchTrack:
    """Track F0 on ``clip``; frames are centred every ``frame_hop`` from t = 0."""
    cfg = cfg or PitchConfig()
    fs = clip.sample_rate
    cfg.check_rate(fs)
    x = clip.samples
    if clip.duration < cfg.frame_len:
        raise ValueError(f"clip of {clip.duration:.3f} s is shorter than one {cfg.frame_len} s frame")
    lo, hi = _lag_band(cfg, fs)
    lags = np.arange(lo - 1, hi + 2)
    r = nccf_frames(x, fs, cfg, lags)
    cand_lag, cand_val = _candidates(r, lags, cfg.n_candidates)

    n = r.shape[0]
    best = np.nanmax(np.where(np.isfinite(cand_val), cand_val, -1.0), axis=1)
    clip_rms = np.sqrt(np.mean(x**2))
    loud = _central_rms(x, fs, cfg) >= cfg.energy_gate * clip_rms
    voiced = (best >= cfg.voicing_threshold) & loud & (clip_rms > 0)

    f0 = np.zeros(n)
    strength = np.clip(best, 0.0, 1.0)
    for a, b in _runs(voiced):
        path = _viterbi(cand_lag[a:b], cand_val[a:b], hi, cfg)
        sel_lag = cand_lag[np.arange(a, b), path]
        f0[a:b] = fs / sel_lag
        strength[a:b] = cand_val[np.arange(a, b), path]
    f0 = np.where(voiced, np.clip(f0, cfg.floor, cfg.ceiling), 0.0)

    hop = int(round(cfg.frame_hop * fs))
    times = np.arange(n) * hop / fs
    return PitchTrack(times, f0, voiced, strength, hop / fs, clip.duration)


def voiced_segments(track: PitchTrack, min_gap: float | None = None) -> list[VoicedSegment]:
    """Maximal voiced runs; unvoiced gaps shorter than ``min_gap`` are bridged.

    A run of frames ``i..j`` spans ``[t_i - hop/2, t_j + hop/2]`` clipped to
    the clip extent.
    """
    hop = track.frame_hop
    if min_gap is None:
        min_gap = hop
    if min_gap < hop - 1e-12:
        raise ValueError("min_gap must be >= frame_hop")
    runs = _runs(track.voiced)
    merged = []
    for a, b in runs:
        if merged and (a - merged[-1][1]) * hop < min_gap - 1e-9:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    out = []
    for a, b in merged:
        start = max(track.times[a] - hop / 2, 0.0)
        end = min(track.times[b - 1] + hop / 2, track.duration)
        if end > start:
            out.append(VoicedSegment(float(start), float(end)))
    return out


def _segment_f0(track, seg):
    m = track.voiced & (track.times >= seg.start - track.frame_hop) & (track.times <= seg.end + track.frame_hop)
    return track.times[m], track.f0[m]


def extract_pulses(clip: AudioClip, track: PitchTrack, cfg: PitchConfig | None = None) -> PulseSequence:
    """Mark one pulse per glottal cycle.

    Within each unbridged voiced run the polarity with the larger peaks is
    chosen once and cycles are followed from the first-period maximum by
    waveform matching (see ``_follow_cycles``). A cycle's amplitude is the
    peak absolute value within half a period of its mark, read from an 8x
    band-limited interpolation of the run.
    """
    cfg = cfg or PitchConfig()
    x = clip.samples
    fs = clip.sample_rate
    t_out, a_out, s_out = [], [], []
    seg_id = 0
    p_lo, p_hi = 0.8 / cfg.ceiling, 1.25 / cfg.floor

    for seg in voiced_segments(track, track.frame_hop):
        ft, ff = _segment_f0(track, seg)
        if ft.size == 0:
            continue
        i0 = int(np.ceil(seg.start * fs))
        i1 = min(int(np.floor(seg.end * fs)), x.size - 1)
        if i1 - i0 < 3:
            continue
        chunk = x[i0 : i1 + 1]
        pol = 1.0 if np.percentile(chunk, 99.5) >= np.percentile(-chunk, 99.5) else -1.0
        y = pol * x

        def period_at(sample):
            return fs / np.interp(sample / fs, ft, ff)

        pos = _follow_cycles(y, i0, i1, period_at)
        fine, base = _upsample(y, i0, i1, 8)
        amps = _cycle_amplitudes(fine, base, 8, pos, period_at)
        times = [q / fs for q in pos]
        prev = None
        for t, amp in zip(times, amps):
            if prev is not None and not (p_lo <= t - prev <= p_hi):
                seg_id += 1
            t_out.append(t)
            a_out.append(amp)
            s_out.append(seg_id)
            prev = t
        seg_id += 1

    return PulseSequence(np.asarray(t_out, float), np.asarray(a_out, float), np.asarray(s_out, dtype=int))
