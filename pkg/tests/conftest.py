import numpy as np
import pytest
from scipy.signal import lfilter

from rtdnn.labels import parse_labels
from rtdnn.phoneset import default_phoneset, parse_phoneset

SR = 16000
HELLO_TEXT = "SEG hh 0 50\nSEG eh 50 80\nSEG l 130 95\nSEG ow 225 95\n"


@pytest.fixture(scope="session")
def ps():
    return default_phoneset()


@pytest.fixture(scope="session")
def toy_ps():
    return parse_phoneset("pau 0 0\naa 1 0\nb 0 1\n")


@pytest.fixture()
def hello(ps):
    return parse_labels(HELLO_TEXT, ps)


@pytest.fixture()
def hello_path(tmp_path):
    p = tmp_path / "hello.lab"
    p.write_text(HELLO_TEXT)
    return p


def resonator(freq, bw, sr=SR):
    r = np.exp(-np.pi * bw / sr)
    th = 2 * np.pi * freq / sr
    return np.array([1.0, -2 * r * np.cos(th), r * r])


def make_vowel(dur=1.0, f0=120.0, formants=((700, 80), (1200, 100)), level=0.1, sr=SR):
    """Harmonic source through cascaded two-pole resonators, scaled to an RMS."""
    n = int(dur * sr)
    n_harm = int(np.ceil(sr / 2 / f0)) - 1
    ph = f0 * np.arange(n) / sr
    src = np.cos(2 * np.pi * np.multiply.outer(ph, np.arange(1, n_harm + 1))).sum(axis=1)
    a = np.array([1.0])
    for f, b in formants:
        a = np.convolve(a, resonator(f, b, sr))
    x = lfilter([1.0], a, src)
    return level * x / np.sqrt(np.mean(x ** 2))


@pytest.fixture(scope="session")
def vowel():
    return make_vowel()
