import json

import numpy as np
import pytest

from phonomark.audio_io import AudioClip, resample
from phonomark.phonatory import (
    DIMENSIONS,
    FEATURE_NAMES,
    PhonatoryConfig,
    PhonatoryExtractor,
    PhonatoryFeatures,
    _NotComputable,
    amplitude_contour,
    deltas,
    dfa,
    dfa_exponent,
    dfa_fluctuations,
    extract_all,
    f0_sd,
    hnr,
    jitter_local,
    maximum_phonation_time,
    mel_filterbank,
    mfcc_stats,
    rpde,
    shimmer_local,
    tremor_analysis,
    tremor_indices,
    voice_break_analysis,
)
from phonomark.pitch import PitchTrack, PulseSequence, VoicedSegment, extract_pulses, track_pitch, voiced_segments
from phonomark.synth import SynthParams, synth_vowel

from conftest import FS, tone, white


def _track(f0, hop=0.01):
    f0 = np.asarray(f0, float)
    v = f0 > 0
    return PitchTrack(np.arange(f0.size) * hop, f0, v, np.where(v, 0.9, 0.0), hop, f0.size * hop)


def _pulses(periods, amps=None):
    t = np.concatenate([[0.0], np.cumsum(periods)])
    a = np.ones(t.size) if amps is None else np.asarray(amps, float)
    return PulseSequence(t, a, np.zeros(t.size, dtype=int))


# -- phonation time and breaks ---------------------------------------------

def test_mpt_additive():
    assert maximum_phonation_time([VoicedSegment(0.0, 2.0)]) == 2.0
    assert maximum_phonation_time([VoicedSegment(0.0, 0.8), VoicedSegment(1.0, 2.0)]) == pytest.approx(1.8)
    assert maximum_phonation_time([]) == 0.0


def test_mpt_on_generator_schedule():
    sv = synth_vowel(SynthParams(duration=5.0, seed=3))
    segs = voiced_segments(track_pitch(sv.clip))
    assert maximum_phonation_time(segs) == pytest.approx(sv.phonation_time(), abs=0.1)


def test_continuous_phonation_has_no_breaks():
    tr = _track(np.full(200, 150.0))
    out = voice_break_analysis(tr, voiced_segments(tr), 2.0)
    assert out == {"first_break": None, "n_breaks": 0, "deg_pitch_breaks": 0.0, "deg_vocal_arrests": 0.0}


def test_single_gap():
    f0 = np.full(200, 150.0)
    f0[80:100] = 0.0
    tr = _track(f0)
    out = voice_break_analysis(tr, voiced_segments(tr), 2.0)
    assert out["n_breaks"] == 1
    assert out["first_break"] == pytest.approx(0.8, abs=0.02)
    assert out["deg_vocal_arrests"] == pytest.approx(10.0, abs=1.0)


def test_short_gap_is_not_a_break():
    f0 = np.full(200, 150.0)
    f0[80:83] = 0.0
    tr = _track(f0)
    out = voice_break_analysis(tr, voiced_segments(tr, min_gap=0.01), 2.0)
    assert out["n_breaks"] == 0


def test_octave_jumps_give_pitch_break_degree():
    f0 = np.linspace(140.0, 160.0, 200)
    f0[5::10] *= 2.0  # 10% of frames, isolated
    tr = _track(f0)
    out = voice_break_analysis(tr, voiced_segments(tr), 2.0)
    assert out["deg_pitch_breaks"] == pytest.approx(10.0, abs=2.0)
    assert out["n_breaks"] == 0


# -- f0 and perturbation ---------------------------------------------------

def test_f0_sd_closed_forms():
    assert f0_sd(_track(np.full(100, 150.0))) == 0.0
    assert f0_sd(_track([140.0, 150.0, 160.0])) == pytest.approx(10.0)
    with pytest.raises(_NotComputable):
        f0_sd(_track([150.0, 0.0]))


def test_f0_sd_vibrato():
    t = np.arange(300) * 0.01
    assert f0_sd(_track(150 + 6 * np.sin(2 * np.pi * 5 * t))) == pytest.approx(6 / np.sqrt(2), abs=0.3)


def test_jitter_closed_forms():
    assert jitter_local(_pulses([0.01] * 20)) == pytest.approx(0.0, abs=1e-9)
    assert jitter_local(_pulses([0.0101, 0.0099] * 10)) == pytest.approx(2.0)


def test_shimmer_closed_forms():
    assert shimmer_local(_pulses([0.01] * 20)) == 0.0
    amps = [1.0, 0.9] * 10
    assert shimmer_local(_pulses([0.01] * 19, amps)) == pytest.approx(100 * 0.1 / 0.95, rel=1e-9)


def test_perturbation_ignores_cross_run_pairs():
    t = np.array([0.0, 0.01, 0.02, 0.03, 0.5, 0.51, 0.52, 0.53])
    ps = PulseSequence(t, np.ones(8), np.array([0, 0, 0, 0, 1, 1, 1, 1]))
    assert jitter_local(ps) == pytest.approx(0.0, abs=1e-9)


def test_perturbation_needs_pulses():
    empty = PulseSequence(np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))
    with pytest.raises(_NotComputable):
        jitter_local(empty)
    with pytest.raises(_NotComputable):
        shimmer_local(_pulses([0.01]))


@pytest.mark.parametrize("seed", range(4))
def test_generator_jitter_oracle(seed):
    sv = synth_vowel(SynthParams(f0=100 + 30 * seed, duration=2.0, jitter_pct=1.0, seed=seed))
    got = jitter_local(extract_pulses(sv.clip, track_pitch(sv.clip)))
    assert got == pytest.approx(sv.true_jitter(), rel=0.2)


@pytest.mark.parametrize("seed", range(4))
def test_generator_shimmer_oracle(seed):
    sv = synth_vowel(SynthParams(f0=100 + 30 * seed, duration=2.0, shimmer_pct=5.0, seed=seed))
    got = shimmer_local(extract_pulses(sv.clip, track_pitch(sv.clip)))
    assert got == pytest.approx(sv.true_shimmer(), rel=0.2)


# -- HNR -------------------------------------------------------------------

def _noisy_tone(snr_db, seed=0):
    c = tone(150.0, 2.0, amp=0.1)
    n = np.random.default_rng(seed).standard_normal(c.samples.size)
    n *= np.sqrt(np.mean(c.samples**2) / np.mean(n**2) / 10 ** (snr_db / 10))
    return c.with_samples(c.samples + n)


def test_hnr_pure_sine_near_ceiling():
    c = tone(150.0, 2.0)
    assert hnr(c, track_pitch(c)) >= 35.0


@pytest.mark.parametrize("snr", [0.0, 10.0, 20.0])
def test_hnr_tracks_snr(snr):
    c = _noisy_tone(snr)
    tr = track_pitch(c)
    if snr == 0.0:
        # at 0 dB many frames fall below the voicing threshold; score every frame
        tr = PitchTrack(tr.times, np.full(tr.n_frames, 150.0), np.ones(tr.n_frames, bool), tr.strength,
                        tr.frame_hop, tr.duration)
    assert hnr(c, tr) == pytest.approx(snr, abs=2.0)


def test_hnr_unvoiced():
    c = white(1.0)
    with pytest.raises(_NotComputable):
        hnr(c, track_pitch(c))


# -- RPDE and DFA ----------------------------------------------------------

def _rate(x, fs=22500):
    return AudioClip(np.clip(x, -1, 1), fs)


def test_rpde_periodic_and_noise():
    t = np.arange(22500) / 22500
    assert rpde(_rate(0.5 * np.sin(2 * np.pi * 150 * t))) <= 0.05
    assert rpde(_rate(0.2 * np.random.default_rng(0).standard_normal(22500))) >= 0.8


def test_rpde_silence_not_computable():
    with pytest.raises(_NotComputable):
        rpde(_rate(np.zeros(5000)))


# values frozen from a first run on seeded generator output
RPDE_GOLDEN = {0: 0.5060925926964475, 1: 0.41656161615097126, 2: 0.3806158778475264}


@pytest.mark.parametrize("seed", sorted(RPDE_GOLDEN))
def test_rpde_regression_lock(seed):
    sv = synth_vowel(SynthParams(f0=120 + 20 * seed, duration=1.0, jitter_pct=1.0, shimmer_pct=3.0,
                                 noise_snr=25.0, seed=seed))
    v = rpde(resample(sv.clip, 22500))
    assert v == pytest.approx(RPDE_GOLDEN[seed], abs=1e-9)


def _naive_dfa(x, n):
    y = np.cumsum(x - x.mean())
    res = []
    for k in range(y.size // n):
        s = y[k * n : (k + 1) * n]
        t = np.arange(n)
        fit = np.polyval(np.polyfit(t, s, 1), t)
        res.append(np.mean((s - fit) ** 2))
    return np.sqrt(np.mean(res))


def test_dfa_fluctuation_matches_polyfit_oracle():
    x = np.random.default_rng(5).standard_normal(3000)
    windows = np.array([50, 120, 400])
    np.testing.assert_allclose(dfa_fluctuations(x, windows), [_naive_dfa(x, n) for n in windows], rtol=1e-9)


def test_dfa_white_and_brown():
    x = np.random.default_rng(0).standard_normal(45000)
    assert dfa_exponent(x) == pytest.approx(0.5, abs=0.05)
    assert dfa_exponent(np.cumsum(x)) == pytest.approx(1.5, abs=0.1)
    a = dfa_exponent(x)
    assert dfa(_rate(0.1 * x)) == pytest.approx(a / (1 + a), rel=1e-9)


def test_dfa_too_short():
    with pytest.raises(ValueError):
        dfa_exponent(np.ones(100))


# -- tremor ----------------------------------------------------------------

def test_tremor_analysis_on_contour():
    rate = 100.0
    t = np.arange(300) / rate
    res = tremor_analysis(150 * (1 + 0.04 * np.sin(2 * np.pi * 5 * t)), rate)
    assert res.frequency == pytest.approx(5.0, abs=0.1)
    assert res.depth == pytest.approx(0.04, rel=0.1)
    assert res.index == pytest.approx(100 * res.depth * res.correlation)


def test_tremor_flat_contour():
    res = tremor_analysis(np.full(300, 150.0), 100.0)
    assert res.index == 0.0 and res.frequency is None


@pytest.mark.parametrize("seed", range(3))
def test_generator_tremor(seed):
    sv = synth_vowel(SynthParams(f0=140 + 20 * seed, duration=3.0, tremor_freq=5.0, tremor_depth=0.04, seed=seed))
    tr = track_pitch(sv.clip)
    res = tremor_indices(tr, amplitude_contour(sv.clip, tr))["ftri"]
    assert res.frequency == pytest.approx(5.0, abs=0.5)
    assert res.index == pytest.approx(0.04 * 100 * res.correlation, rel=0.3)


def test_unmodulated_vowel_low_tremor():
    sv = synth_vowel(SynthParams(duration=3.0, seed=2))
    tr = track_pitch(sv.clip)
    out = tremor_indices(tr, amplitude_contour(sv.clip, tr))
    assert out["ftri"].index <= 1.0
    assert out["atri"].index <= 1.0


def test_tremor_gate_on_short_run():
    tr = track_pitch(tone(150.0, 0.8))
    out = tremor_indices(tr, np.ones(tr.n_frames))
    assert out["ftri"] is None and out["atri"] is None and out["reason"]


# -- MFCC ------------------------------------------------------------------

def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(23, 512, 16000)
    assert fb.shape == (23, 257)
    assert np.all(fb.max(axis=1) > 0.5) and fb.min() >= 0


def test_deltas_of_linear_ramp():
    c = np.arange(20, dtype=float)[:, None] * np.array([[1.0, -2.0]])
    d = deltas(c, 2)
    np.testing.assert_allclose(d[2:-2], np.tile([1.0, -2.0], (16, 1)))


def test_mfcc_drift_raises_sd():
    still = synth_vowel(SynthParams(duration=2.0, seed=4))
    drift = synth_vowel(SynthParams(duration=2.0, seed=4, formant_drift=0.3))
    assert mfcc_stats(still.clip)["mean_sd_mfcc"] < mfcc_stats(drift.clip)["mean_sd_mfcc"]


def test_mfcc_identical_frames_zero_sd():
    # the 10 ms hop spans exactly one period; the phase puts a zero just
    # before the first sample so pre-emphasis treats frame 0 like the rest
    c = tone(100.0, 1.0, phase=2 * np.pi / 160)
    out = mfcc_stats(c)
    assert out["mean_sd_mfcc"] == pytest.approx(0.0, abs=1e-6)
    assert out["mean_sd_delta_mfcc"] == pytest.approx(0.0, abs=1e-6)


def test_mfcc_silence_not_computable():
    with pytest.raises(_NotComputable):
        mfcc_stats(AudioClip(np.zeros(16000), FS))


# -- orchestration ---------------------------------------------------------

def test_extract_all_clean_vowel_complete():
    f = extract_all(synth_vowel(SynthParams(duration=5.0, jitter_pct=0.5, shimmer_pct=2.0, seed=1)).clip)
    for n in FEATURE_NAMES:
        assert f.computable(n), (n, f.flags.get(n))
        if n != "first_break":
            assert getattr(f, n) is not None, n
    assert f.first_break is None and f.n_voice_breaks == 0


def test_extract_all_short_clip_gates_tremor():
    f = extract_all(synth_vowel(SynthParams(duration=0.8, seed=1)).clip)
    assert not f.computable("ftri") and not f.computable("atri")
    for n in ("mpt", "f0_sd", "jitter_local", "shimmer_local", "hnr", "rpde", "dfa", "mean_sd_mfcc"):
        assert f.computable(n), n


def test_extract_all_white_noise():
    f = extract_all(white(2.0, amp=0.1))
    assert f.mpt == pytest.approx(0.0, abs=0.1)
    for n in ("jitter_local", "shimmer_local", "hnr"):
        assert not f.computable(n)
    assert f.dfa is not None


def test_extract_all_any_rate():
    sv = synth_vowel(SynthParams(duration=2.0, seed=2))
    up = resample(sv.clip, 44100)
    a, b = extract_all(sv.clip), extract_all(up)
    assert b.jitter_local == pytest.approx(a.jitter_local, abs=0.1)
    assert b.mpt == pytest.approx(a.mpt, abs=0.02)


def test_feature_breaks_on_scheduled_gap():
    sv = synth_vowel(SynthParams(duration=2.0, break_schedule=[(0.8, 1.0)], seed=0))
    f = extract_all(sv.clip)
    assert f.n_voice_breaks == 1
    assert f.first_break == pytest.approx(0.8, abs=0.02)


def test_row_roundtrip_and_json():
    f = extract_all(synth_vowel(SynthParams(duration=0.8, seed=1)).clip)
    row = {k: str(v) for k, v in f.to_row().items()}
    g = PhonatoryFeatures.from_row(row)
    assert g.as_dict() == f.as_dict()
    assert set(g.flags) == set(f.flags)
    meta = json.loads(f.to_json())
    assert set(meta["features"]) == set(FEATURE_NAMES)
    assert meta["features"]["ftri"]["computable"] is False
    assert set(DIMENSIONS) == set(FEATURE_NAMES)


def test_config_validation():
    with pytest.raises(ValueError):
        PhonatoryConfig(median_frames=4)
    with pytest.raises(ValueError):
        PhonatoryConfig(tremor_band=(5.0, 2.0))


def test_extractor_transformer():
    clips = [synth_vowel(SynthParams(duration=0.8, seed=s)).clip for s in range(2)]
    ex = PhonatoryExtractor().fit(clips)
    X = ex.transform(clips)
    assert X.shape == (2, len(FEATURE_NAMES))
    assert np.isnan(X[:, FEATURE_NAMES.index("ftri")]).all()
    assert list(ex.get_feature_names_out()) == list(FEATURE_NAMES)
    assert ex.get_params() == {"pitch_config": None, "config": None}
