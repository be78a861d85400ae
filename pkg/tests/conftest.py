import numpy as np
import pytest

from phonomark.audio_io import AudioClip

FS = 16000


def tone(f0=150.0, duration=2.0, fs=FS, amp=0.5, phase=0.0):
    t = np.arange(int(round(duration * fs))) / fs
    return AudioClip(amp * np.sin(2 * np.pi * f0 * t + phase), fs)


def white(duration=2.0, fs=FS, amp=0.1, seed=0):
    x = amp * np.random.default_rng(seed).standard_normal(int(round(duration * fs)))
    return AudioClip(np.clip(x, -1, 1), fs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
