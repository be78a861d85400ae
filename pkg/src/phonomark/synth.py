"""Synthetic sustained vowels and cohorts with known ground truth.

A Rosenberg glottal-flow derivative train drives a cascade of two-pole
formant resonators. Every cycle's onset, period and amplitude is recorded,
so perturbation features can be checked against the generator's own lists.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .audio_io import AudioClip, _antialias_filter, write_wav

__all__ = [
    "SynthParams",
    "SyntheticVowel",
    "synth_vowel",
    "GroupSpec",
    "CohortSpec",
    "synth_cohort",
    "null_cohort_spec",
    "planted_cohort_spec",
    "GROUPS",
]

GROUPS = ("C", "preHD", "HD")
_OVERSAMPLE = 8
_OPEN_FRACTION = 0.56


@dataclass
class SynthParams:
    f0: float = 150.0
    duration: float = 3.0
    jitter_pct: float = 0.0
    shimmer_pct: float = 0.0
    tremor_freq: float = 0.0
    tremor_depth: float = 0.0
    break_schedule: list = field(default_factory=list)
    noise_snr: float | None = None
    formants: list = field(default_factory=lambda: [(800.0, 350.0), (1200.0, 400.0)])
    seed: int = 0
    sample_rate: int = 16000
    peak: float = 0.5
    formant_drift: float = 0.0

    def validate(self):
        if not 60 <= self.f0 <= 400:
            raise ValueError(f"f0 {self.f0} outside [60, 400] Hz")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for name in ("jitter_pct", "shimmer_pct", "tremor_depth", "tremor_freq", "formant_drift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.tremor_depth >= 0.5:
            raise ValueError("tremor_depth must be < 0.5")
        if not 0 < self.peak <= 1:
            raise ValueError("peak must lie in (0, 1]")
        prev_end = 0.0
        for a, b in sorted(map(tuple, self.break_schedule)):
            if not (0 <= a < b <= self.duration):
                raise ValueError(f"break ({a}, {b}) outside [0, {self.duration}]")
            if a < prev_end:
                raise ValueError("break intervals overlap")
            prev_end = b
        for fc, bw in self.formants:
            if not (0 < fc < self.sample_rate / 2 and bw > 0):
                raise ValueError(f"bad formant ({fc}, {bw})")


@dataclass
class SyntheticVowel:
    clip: AudioClip
    params: SynthParams
    pulse_times: np.ndarray
    amplitudes: np.ndarray
    interval: np.ndarray
    voiced_intervals: list

    def _pairs(self, v):
        same = self.interval[1:] == self.interval[:-1]
        return v[1:][same], v[:-1][same]

    @property
    def periods(self):
        t1, t0 = self._pairs(self.pulse_times)
        return t1 - t0

    def true_jitter(self):
        """Local jitter (%) of the generator's own period list."""
        p = self.periods
        same = self.interval[2:] == self.interval[1:-1]
        same &= self.interval[1:-1] == self.interval[:-2]
        d = np.abs(np.diff(np.diff(self.pulse_times)))[same]
        return 100.0 * d.mean() / p.mean()

    def true_shimmer(self):
        a1, a0 = self._pairs(self.amplitudes)
        return 100.0 * np.abs(a1 - a0).mean() / self.amplitudes.mean()

    def phonation_time(self):
        return sum(b - a for a, b in self.voiced_intervals)

    def truth(self):
        return {
            "params": asdict(self.params),
            "voiced_intervals": [list(iv) for iv in self.voiced_intervals],
            "n_pulses": int(self.pulse_times.size),
            "jitter_pct": float(self.true_jitter()) if self.pulse_times.size > 2 else None,
            "shimmer_pct": float(self.true_shimmer()) if self.pulse_times.size > 1 else None,
            "phonation_time": float(self.phonation_time()),
        }


def _truncnorm(rng, sigma, size):
    return np.clip(rng.standard_normal(size), -3.0, 3.0) * sigma


def _rosenberg_derivative(tau, T):
    # opening 40% of the period, closing 16%; closure at tau = 0.56 T
    tp, tn = 0.40 * T, 0.16 * T
    out = np.zeros_like(tau)
    m1 = (tau >= 0) & (tau < tp)
    m2 = (tau >= tp) & (tau < tp + tn)
    out[m1] = (np.pi / (2 * tp)) * np.sin(np.pi * tau[m1] / tp)
    out[m2] = -(np.pi / (2 * tn)) * np.sin(np.pi * (tau[m2] - tp) / (2 * tn))
    return out * T


def _resonator(x, fc, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * fc / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return signal.lfilter([sum(a)], a, x)


def _time_varying_resonator(x, fc, bw, fs):
    # per-sample coefficients; only used when formants drift
    r = np.exp(-np.pi * bw / fs)
    a1 = -2 * r * np.cos(2 * np.pi * fc / fs)
    a2 = r * r
    g = 1 + a1 + a2
    y = np.zeros_like(x)
    y1 = y2 = 0.0
    for n in range(x.size):
        yn = g[n] * x[n] - a1[n] * y1 - a2 * y2
        y[n] = yn
        y2, y1 = y1, yn
    return y


def _voiced_intervals(duration, breaks):
    ivs, t = [], 0.0
    for a, b in sorted(map(tuple, breaks)):
        if a > t:
            ivs.append((t, a))
        t = b
    if t < duration:
        ivs.append((t, duration))
    return ivs


def synth_vowel(p: SynthParams) -> SyntheticVowel:
    """Render a sustained vowel and its ground-truth cycle lists.

    Cycle ``i`` starting at ``t_i`` lasts
    ``(1/f0) * (1 + j_i) * (1 + depth * sin(2 pi f_tr t_i))`` and has
    amplitude ``(1 + s_i) * (1 + depth * sin(2 pi f_tr t_i))`` where ``j_i``
    and ``s_i`` are Gaussian with sd ``jitter_pct/100`` and
    ``shimmer_pct/100``, truncated at 3 sd. The recorded pulse time of a
    cycle is its glottal closure, at the cycle's end. Cycles that would run
    past a break are dropped and breaks are silenced.
    """
    p.validate()
    fs = p.sample_rate
    rng = np.random.default_rng(p.seed)
    n = int(round(p.duration * fs))
    intervals = _voiced_intervals(p.duration, p.break_schedule)

    # cycle i ends at its glottal closure instant g_i and lasts T_i, so the
    # recorded closure times differ by exactly the drawn periods
    gcis, periods, amps, which = [], [], [], []
    for k, (a, b) in enumerate(intervals):
        start = a
        while True:
            mod = 1.0 + p.tremor_depth * np.sin(2 * np.pi * p.tremor_freq * start)
            T = (1.0 / p.f0) * (1.0 + _truncnorm(rng, p.jitter_pct / 100.0, 1)[0]) * mod
            amp = (1.0 + _truncnorm(rng, p.shimmer_pct / 100.0, 1)[0]) * mod
            if start + T > b:
                break
            gcis.append(start + T)
            periods.append(T)
            amps.append(amp)
            which.append(k)
            start += T
    gcis = np.asarray(gcis)
    periods = np.asarray(periods)
    amps = np.asarray(amps)
    which = np.asarray(which, dtype=int)

    # render the source oversampled and decimate so the closure
    # discontinuity does not alias differently on every cycle
    ofs = fs * _OVERSAMPLE
    src = np.zeros(n * _OVERSAMPLE)
    for g, T, amp in zip(gcis, periods, amps):
        t0 = g - _OPEN_FRACTION * T
        i0 = int(np.floor(t0 * ofs))
        i1 = min(int(np.ceil(g * ofs)) + 1, src.size)
        idx = np.arange(i0, i1)
        src[i0:i1] += amp * _rosenberg_derivative(idx / ofs - t0, T)
    src = signal.resample_poly(src, 1, _OVERSAMPLE, window=_antialias_filter(1, _OVERSAMPLE, 100.0))[:n]

    y = src
    for fc, bw in p.formants:
        if p.formant_drift > 0:
            tt = np.arange(n) / fs
            # slow +-drift of every formant at 0.7 Hz
            fct = fc * (1.0 + p.formant_drift * np.sin(2 * np.pi * 0.7 * tt))
            y = _time_varying_resonator(y, fct, bw, fs)
        else:
            y = _resonator(y, fc, bw, fs)

    mask = np.zeros(n, dtype=bool)
    for a, b in intervals:
        mask[int(round(a * fs)) : int(round(b * fs))] = True
    y = np.where(mask, y, 0.0)

    scale = p.peak / max(np.max(np.abs(y)), 1e-12)
    y = y * scale
    amps = amps * scale
    if p.noise_snr is not None:
        sig_pow = np.mean(y[mask] ** 2) if mask.any() else np.mean(y**2)
        noise = rng.standard_normal(n) * np.sqrt(sig_pow / 10 ** (p.noise_snr / 10.0))
        y = y + noise
    peak = np.max(np.abs(y))
    if peak > 0.99:
        y = y * (0.99 / peak)
        amps = amps * (0.99 / peak)

    clip = AudioClip(y, fs)
    return SyntheticVowel(clip, p, gcis, amps, which, intervals)


# --------------------------------------------------------------------------
# cohorts


@dataclass
class GroupSpec:
    """Per-group subject count and ranges for generator parameters.

    ``severity`` is a (low, high) range for the latent severity in [0, 1].
    Each entry of ``params`` is a pair (value at the group's lowest
    severity, value at its highest); with ``severity_linked`` the value is
    interpolated by the subject's severity (plus a little noise), otherwise
    drawn uniformly between the two.
    """

    n: int
    severity: tuple = (0.0, 0.0)
    params: dict = field(default_factory=dict)


@dataclass
class CohortSpec:
    groups: dict
    seed: int = 0
    severity_linked: bool = True
    base: dict = field(default_factory=dict)

    def validate(self):
        for g, spec in self.groups.items():
            if g not in GROUPS:
                raise ValueError(f"unknown group {g!r}")
            if spec.n < 2:
                raise ValueError(f"group {g} needs at least 2 subjects")
            lo, hi = spec.severity
            if not 0 <= lo <= hi <= 1:
                raise ValueError(f"group {g}: severity range must lie in [0, 1]")
            for k, v in spec.params.items():
                if k not in _RANGED:
                    raise ValueError(f"group {g}: unknown parameter {k!r}")
                if len(v) != 2:
                    raise ValueError(f"group {g}: range for {k} must be a pair")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"groups", "seed", "severity_linked", "base"}
        if unknown:
            raise ValueError(f"unknown cohort keys: {sorted(unknown)}")
        groups = {}
        for g, gs in d.get("groups", {}).items():
            gs = dict(gs)
            bad = set(gs) - {"n", "severity", "params"}
            if bad:
                raise ValueError(f"group {g}: unknown keys {sorted(bad)}")
            groups[g] = GroupSpec(
                int(gs["n"]),
                tuple(gs.get("severity", (0.0, 0.0))),
                {k: tuple(v) for k, v in gs.get("params", {}).items()},
            )
        spec = cls(groups, int(d.get("seed", 0)), bool(d.get("severity_linked", True)), dict(d.get("base", {})))
        spec.validate()
        return spec

    def to_dict(self):
        return {
            "seed": self.seed,
            "severity_linked": self.severity_linked,
            "base": self.base,
            "groups": {
                g: {"n": s.n, "severity": list(s.severity), "params": {k: list(v) for k, v in s.params.items()}}
                for g, s in self.groups.items()
            },
        }


# parameters a cohort may range over
_RANGED = ("f0", "duration", "jitter_pct", "shimmer_pct", "tremor_freq", "tremor_depth", "noise_snr",
           "n_breaks", "break_len", "formant_drift")


def _clinical_scores(rng, group, severity):
    if group == "C":
        return None, None, None
    tms = float(np.clip(70.0 * severity + rng.normal(0, 2.0), 0, 124))
    tfc = float(np.clip(13.0 - 8.0 * severity + rng.normal(0, 0.5), 0, 13))
    cuhdrs = float(18.0 - 14.0 * severity + rng.normal(0, 0.7))
    return cuhdrs, tfc, tms


def _draw_params(rng, gspec, severity, linked, base, seed):
    vals = {}
    for k, (lo, hi) in gspec.params.items():
        s_lo, s_hi = gspec.severity
        if linked and s_hi > s_lo:
            u = (severity - s_lo) / (s_hi - s_lo)
            # jitter the position a little so parameters are not collinear
            u = float(np.clip(u + rng.normal(0, 0.1), 0, 1))
        else:
            u = rng.uniform()
        vals[k] = lo + u * (hi - lo)
    params = dict(base)
    n_breaks = int(round(vals.pop("n_breaks", params.pop("n_breaks", 0))))
    break_len = vals.pop("break_len", params.pop("break_len", 0.2))
    params.update(vals)
    duration = params.get("duration", 3.0)
    breaks = []
    if n_breaks > 0:
        # evenly spread breaks in the middle 80% of the phonation
        centers = np.linspace(0.1, 0.9, n_breaks + 2)[1:-1] * duration
        for c in centers:
            a, b = c - break_len / 2, c + break_len / 2
            if a > 0 and b < duration:
                breaks.append((round(float(a), 4), round(float(b), 4)))
    params["break_schedule"] = breaks
    params["seed"] = seed
    return SynthParams(**params)


def synth_cohort(spec: CohortSpec, out_dir=None):
    """Render every subject of ``spec``.

    With ``out_dir`` writes ``wav/<subject>.wav`` (16 kHz, 16 bit),
    ``truth/<subject>.json`` and ``manifest.csv`` and returns the manifest
    path; without it returns the in-memory records.
    """
    spec.validate()
    ss = np.random.SeedSequence(spec.seed)
    total = sum(g.n for g in spec.groups.values())
    children = ss.spawn(total)
    records = []
    k = 0
    for group in GROUPS:
        if group not in spec.groups:
            continue
        gspec = spec.groups[group]
        for i in range(gspec.n):
            child = children[k]
            k += 1
            rng = np.random.default_rng(child)
            severity = float(rng.uniform(*gspec.severity)) if gspec.severity[1] > gspec.severity[0] else float(gspec.severity[0])
            seed = int(child.generate_state(1)[0])
            params = _draw_params(rng, gspec, severity, spec.severity_linked, spec.base, seed)
            cuhdrs, tfc, tms = _clinical_scores(rng, group, severity)
            sv = synth_vowel(params)
            records.append({
                "subject_id": f"{group}{i + 1:03d}",
                "group": group,
                "severity": severity,
                "cuhdrs": cuhdrs,
                "tfc": tfc,
                "tms": tms,
                "vowel": sv,
            })
    if out_dir is None:
        return records

    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "truth"), exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create cohort directory {out_dir}: {exc}") from exc
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "subject_id", "group", "cuhdrs", "tfc", "tms"])
        for r in records:
            rel = os.path.join("wav", r["subject_id"] + ".wav")
            write_wav(os.path.join(out_dir, rel), r["vowel"].clip)
            truth = r["vowel"].truth()
            truth.update({k: r[k] for k in ("subject_id", "group", "severity", "cuhdrs", "tfc", "tms")})
            with open(os.path.join(out_dir, "truth", r["subject_id"] + ".json"), "w") as tf:
                json.dump(truth, tf, indent=2, sort_keys=True)
            w.writerow([rel, r["subject_id"], r["group"]] + ["" if r[s] is None else f"{r[s]:.4f}" for s in ("cuhdrs", "tfc", "tms")])
    with open(os.path.join(out_dir, "cohort_spec.json"), "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
    return manifest


def null_cohort_spec(sizes=(24, 16, 45), seed=0, duration=(2.5, 3.5)):
    """All three groups share one parameter distribution."""
    common = {"f0": (110.0, 210.0), "duration": duration, "jitter_pct": (0.2, 1.5),
              "shimmer_pct": (1.0, 6.0), "noise_snr": (15.0, 30.0)}
    groups = {g: GroupSpec(n, (0.0, 1.0) if g != "C" else (0.0, 0.0), dict(common)) for g, n in zip(GROUPS, sizes)}
    return CohortSpec(groups, seed=seed, severity_linked=False)


def planted_cohort_spec(sizes=(24, 16, 45), seed=0, duration=(2.5, 3.5)):
    """Groups pulled strongly apart; within gene carriers parameters track severity."""
    groups = {
        "C": GroupSpec(sizes[0], (0.0, 0.0), {
            "f0": (120.0, 200.0), "duration": duration, "jitter_pct": (0.1, 0.3),
            "shimmer_pct": (0.5, 1.5), "noise_snr": (32.0, 38.0)}),
        "preHD": GroupSpec(sizes[1], (0.0, 0.25), {
            "f0": (120.0, 200.0), "duration": duration, "jitter_pct": (1.0, 1.6),
            "shimmer_pct": (4.0, 6.0), "noise_snr": (22.0, 26.0)}),
        "HD": GroupSpec(sizes[2], (0.35, 1.0), {
            "f0": (120.0, 200.0), "duration": (duration[1], duration[0]), "jitter_pct": (2.5, 4.0),
            "shimmer_pct": (9.0, 14.0), "noise_snr": (15.0, 8.0)}),
    }
    return CohortSpec(groups, seed=seed, severity_linked=True)
