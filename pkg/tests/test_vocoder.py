import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from rtdnn import vocoder as voc
from rtdnn.vocoder import CoderParams, SynthState, VocoderConfig, VocoderError

from conftest import SR, make_vowel

CFG = VocoderConfig()


def random_stable(rng, p=10, kmax=0.97):
    return voc.reflection_to_lpc(rng.uniform(-kmax, kmax, p))


def flatness(a, n=4096):
    w = np.linspace(0, np.pi, n, endpoint=False) + np.pi / (2 * n)
    A = np.polyval(np.concatenate([[1.0], a])[::-1], np.exp(-1j * w))
    s = 1.0 / np.abs(A) ** 2
    return math.exp(np.mean(np.log(s))) / np.mean(s)


# -- config -----------------------------------------------------------------

def test_config_defaults():
    assert CFG.n_bands == 10
    assert CFG.band_edges[0] == 0 and CFG.band_edges[-1] == 8000


@pytest.mark.parametrize("edges", [(0, 100, 100) + tuple(range(200, 1000, 100)), tuple(range(100, 1200, 100)),
                                   (0, 1000, 9000), tuple(range(0, 9000, 1000))[:-1] + (9000,)])
def test_config_rejects_bad_edges(edges):
    with pytest.raises(VocoderError):
        VocoderConfig(band_edges=edges)


def test_config_from_mapping():
    cfg = voc.config_from_mapping({"lpc_order": "12", "f0_min": "60"})
    assert cfg.lpc_order == 12 and cfg.f0_min == 60.0
    with pytest.raises(VocoderError):
        voc.config_from_mapping({"nope": "1"})


# -- LPC --------------------------------------------------------------------

def test_lpc_zero_frame():
    assert np.array_equal(voc.lpc_analyze(np.zeros(240)), np.zeros(10))


def test_lpc_recovers_ar2():
    a_true = np.array([-1.3, 0.7])  # poles at radius sqrt(0.7)
    rng = np.random.default_rng(3)
    x = lfilter([1.0], np.concatenate([[1.0], a_true]), rng.standard_normal(4000 + 500))[500:]
    a = voc.lpc_analyze(x * voc.hann(4000), 2)
    assert np.max(np.abs(a - a_true)) < 1e-2


def test_lpc_white_noise_is_flat():
    # 4000-sample windows, as in the AR(2) recovery; every one of 100 seeds
    vals = [flatness(voc.lpc_analyze(np.random.default_rng(s).standard_normal(4000) * voc.hann(4000)))
            for s in range(100)]
    assert min(vals) >= 0.9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_lpc_minimum_phase(seed):
    rng = np.random.default_rng(seed)
    x = lfilter([1.0], [1.0, -0.95], rng.standard_normal(240)) * voc.hann(240)
    assert voc.is_minimum_phase(voc.lpc_analyze(x))


def test_levinson_matches_toeplitz_solve():
    from scipy.linalg import solve_toeplitz
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    r = voc.autocorrelation(x, 10)
    a = voc.lpc_analyze(x, 10, white_noise=0.0)
    np.testing.assert_allclose(a, solve_toeplitz(r[:10], -r[1:11]), atol=1e-10)


def test_reflection_round_trip():
    rng = np.random.default_rng(1)
    k = rng.uniform(-0.9, 0.9, 10)
    np.testing.assert_allclose(voc.lpc_to_reflection(voc.reflection_to_lpc(k)), k, atol=1e-12)


# -- LSF --------------------------------------------------------------------

def test_flat_filter_lsf():
    lsf = voc.lpc_to_lsf(np.zeros(10))
    np.testing.assert_allclose(lsf, np.arange(1, 11) * np.pi / 11, atol=1e-9, rtol=0)
    np.testing.assert_allclose(voc.lsf_to_lpc(voc.flat_lsf(10)), np.zeros(10), atol=1e-9)


def test_lsf_against_polynomial_roots():
    # independent oracle: angles of the roots of A(z) +- z^-(p+1) A(1/z)
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = random_stable(rng)
        A = np.concatenate([[1.0], a, [0.0]])
        angles = []
        for poly in (A + A[::-1], A - A[::-1]):
            w = np.angle(np.roots(poly))
            angles += [x for x in w if 1e-6 < x < np.pi - 1e-6]
        np.testing.assert_allclose(voc.lpc_to_lsf(a), np.sort(angles), atol=1e-8)


@pytest.mark.parametrize("p", [1, 2, 3, 9, 10, 12])
def test_lsf_round_trip_orders(p):
    rng = np.random.default_rng(p)
    for _ in range(50):
        a = random_stable(rng, p)
        lsf = voc.lpc_to_lsf(a)
        assert np.all(np.diff(lsf) > 0) and 0 < lsf[0] and lsf[-1] < np.pi
        np.testing.assert_allclose(voc.lsf_to_lpc(lsf), a, atol=1e-8, rtol=0)


def test_lsf_interlace():
    rng = np.random.default_rng(9)
    a = random_stable(rng)
    P, Q = voc._sum_diff_polys(a)
    lsf = voc.lpc_to_lsf(a)
    # even-index LSFs are zeros of P, odd-index ones zeros of Q
    for w in lsf[0::2]:
        assert abs(np.polyval(P, np.exp(1j * w))) < 1e-8
    for w in lsf[1::2]:
        assert abs(np.polyval(Q, np.exp(1j * w))) < 1e-8


def test_unstable_rejected():
    k = np.zeros(10)
    k[3] = 1.5
    with pytest.raises(VocoderError):
        voc.lpc_to_lsf(voc.reflection_to_lpc(k))


@pytest.mark.parametrize("lsf", [[0.1, 0.2, 0.2, 0.5], [0.3, 0.2], [0.0, 1.0], [1.0, np.pi]])
def test_bad_lsf_rejected(lsf):
    with pytest.raises(VocoderError):
        voc.lsf_to_lpc(lsf)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=11, max_size=11))
def test_increasing_lsf_gives_stable_filter(gaps):
    g = np.array(gaps)
    lsf = np.cumsum(g)[:10] * np.pi / g.sum()
    assert voc.is_minimum_phase(voc.lsf_to_lpc(lsf))


# -- pitch and voicing ------------------------------------------------------

def _sine(f, n=640, sr=SR):
    return np.sin(2 * np.pi * f * np.arange(n) / sr)


def test_pitch_sine():
    f0, voiced = voc.estimate_pitch(_sine(100.0))
    assert voiced and 99.5 <= f0 <= 100.5


@pytest.mark.parametrize("f", [80.0, 120.0, 175.0, 260.0])
def test_pitch_harmonic_source(f):
    f0, voiced = voc.estimate_pitch(make_vowel(0.04, f))
    assert voiced and abs(f0 - f) < 1.0


def test_pitch_white_noise_unvoiced():
    for s in range(100):
        _, voiced = voc.estimate_pitch(np.random.default_rng(s).standard_normal(640))
        assert not voiced


def test_pitch_silence():
    assert voc.estimate_pitch(np.zeros(640)) == (CFG.f0_min, False)


def _pulse_train(f0, n=640, sr=SR):
    x = np.zeros(n)
    x[np.round(np.arange(0, n, sr / f0)).astype(int) % n] = 1.0
    return x


def test_boundary_pulse_train():
    assert voc.estimate_boundary(_pulse_train(100.0), 100.0) == 8000


def test_boundary_unvoiced_convention():
    assert voc.estimate_boundary(_pulse_train(100.0), 100.0, voiced=False) == 0.0


def test_boundary_white_noise():
    # a narrow noise band can correlate at the pitch lag by chance; the
    # multi-period minimum keeps this rare
    zero = sum(voc.estimate_boundary(np.random.default_rng(s).standard_normal(640), 120.0) == 0.0
               for s in range(100))
    assert zero >= 95


def test_boundary_mixed_excitation():
    rng = np.random.default_rng(0)
    n = 640
    harm = sum(np.cos(2 * np.pi * h * 125.0 * np.arange(n) / SR) for h in range(1, 17))  # up to 2 kHz
    noise = voc.bandpass(rng.standard_normal(n), 2200.0, 8000.0, SR, top=True)
    x = harm / np.std(harm) + 3 * noise / np.std(noise)
    assert voc.estimate_boundary(x, 125.0) in (1500.0, 2200.0)


def _oracle_periodicity(x, f0, edges=CFG.band_edges, sr=SR):
    # untapered brick-wall bands, Pearson correlation at the rounded period
    L = int(round(sr / f0))
    X = np.fft.rfft(x, 4096)
    f = np.fft.rfftfreq(4096, 1 / sr)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        y = np.fft.irfft(np.where((f >= lo) & (f <= hi), X, 0), 4096)[:len(x)]
        out.append(np.corrcoef(y[:-L], y[L:])[0, 1])
    return np.array(out)


@pytest.mark.parametrize("f0", [100.0, 125.0, 160.0])
def test_band_periodicity_agrees_with_oracle(f0):
    x = _pulse_train(f0)
    ours = voc.band_periodicity(x, f0) > CFG.voicing_threshold
    oracle = _oracle_periodicity(x, f0) > CFG.voicing_threshold
    above = np.array(CFG.band_edges[1:]) > f0
    assert np.array_equal(ours[above], oracle[above])
    assert ours[above].all()


# -- band powers ------------------------------------------------------------

def test_band_powers_silence():
    assert np.all(voc.band_powers(np.zeros(240)) == -100.0)


def test_band_powers_sine_dominance():
    x = _sine(1000.0, 240) * voc.hann(240)
    bp = voc.band_powers(x)
    b = 4  # [1000, 1500)
    assert np.argmax(bp) in (3, 4)
    others = [i for i in range(10) if abs(i - b) > 1]
    assert bp[b] - bp[others].max() >= 20


def test_band_powers_parseval():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(240) * voc.hann(240)
    total = np.sum(10 ** (voc.band_powers(x) / 10))
    assert total == pytest.approx(np.sum(x ** 2), rel=1e-6)


# -- analysis ---------------------------------------------------------------

def test_analyze_length():
    assert len(voc.analyze(np.zeros(16000))) == 200
    assert voc.n_frames_for(81) == 2


def test_analyze_silence():
    for p in voc.analyze(np.zeros(1600)):
        np.testing.assert_allclose(p.lsf, voc.flat_lsf(10), atol=1e-12)
        assert p.log_energy == pytest.approx(math.log(voc.RMS_FLOOR))
        assert p.fb == 0.0 and p.f0 == CFG.f0_min


def test_analyze_rate_mismatch():
    with pytest.raises(VocoderError):
        voc.analyze(np.zeros(100), CFG, sample_rate=8000)


def test_analyze_vowel(vowel):
    params = voc.analyze(vowel)
    interior = params[4:-4]
    assert all(abs(p.f0 - 120.0) <= 2.0 for p in interior)
    assert all(p.fb > 0 for p in interior)
    # formants at 700 and 1200 Hz: bands [400,700)..[1000,1500) hold the peak
    peaks = [int(np.argmax(p.band_powers)) for p in interior]
    assert set(peaks) <= {2, 3, 4}


def test_unvoiced_carries_f0(vowel):
    rng = np.random.default_rng(0)
    x = np.concatenate([vowel[:4000], 0.05 * rng.standard_normal(4000)])
    params = voc.analyze(x)
    tail = params[-20:]
    assert all(p.fb == 0.0 for p in tail)
    assert all(p.f0 == pytest.approx(120.0, abs=2.0) for p in tail)


# -- synthesis --------------------------------------------------------------

def _params(n, f0=100.0, fb=8000.0, le=-3.0, lsf=None):
    lsf = voc.flat_lsf(10) if lsf is None else lsf
    return [CoderParams(lsf.copy(), le, f0, fb, np.zeros(10)) for _ in range(n)]


def test_synthesize_energy_exact():
    rng = np.random.default_rng(0)
    params = []
    for _ in range(40):
        g = np.exp(rng.normal(0, 0.3, 11))
        lsf = np.cumsum(g)[:10] * np.pi / g.sum()
        params.append(CoderParams(lsf, rng.uniform(-6, -1), rng.uniform(80, 200), rng.choice([0.0, 3000.0, 8000.0]),
                                  np.zeros(10)))
    y = voc.synthesize(params)
    assert len(y) == 40 * 80
    for t, p in enumerate(params):
        rms = np.sqrt(np.mean(y[80 * t:80 * (t + 1)] ** 2))
        assert rms == pytest.approx(math.exp(p.log_energy), rel=1e-6)


def test_synthesize_noise_only():
    y = voc.synthesize(_params(10, fb=0.0))
    assert np.sqrt(np.mean(y[:80] ** 2)) == pytest.approx(math.exp(-3.0), rel=1e-6)


def test_synthesize_floor_energy():
    y = voc.synthesize(_params(3, le=math.log(voc.RMS_FLOOR)))
    assert np.sqrt(np.mean(y[80:160] ** 2)) == pytest.approx(voc.RMS_FLOOR, rel=1e-6)


def test_synthesize_periodicity():
    y = voc.synthesize(_params(20))
    seg = y[400:1600]
    r = voc.normalized_autocorr(seg, np.arange(100, 221))
    assert abs(100 + int(np.argmax(r)) - 160) <= 1


def test_synthesize_empty_and_length():
    assert len(voc.synthesize([])) == 0
    assert len(voc.synthesize(_params(200))) == 16000


def test_synthesize_bad_lsf():
    p = _params(1)[0]
    p.lsf[3] = p.lsf[2]
    with pytest.raises(VocoderError):
        voc.synthesize_frame(p, SynthState.initial(CFG))


def test_synthesis_deterministic():
    a = voc.synthesize(_params(5, fb=3000.0), noise_seed=4)
    b = voc.synthesize(_params(5, fb=3000.0), noise_seed=4)
    assert np.array_equal(a, b)


def test_silence_idempotent():
    y = voc.synthesize(voc.analyze(np.zeros(800)))
    assert np.all(np.abs(y) <= 10 * voc.RMS_FLOOR)
    again = voc.analyze(y)
    assert all(p.fb == 0.0 for p in again)


# -- files ------------------------------------------------------------------

def test_track_round_trip(tmp_path):
    params = voc.analyze(make_vowel(0.1))
    path = tmp_path / "t.txt"
    voc.write_track(path, params)
    back = voc.read_track(path)
    assert len(back) == len(params)
    np.testing.assert_allclose(voc.params_to_matrix(back), voc.params_to_matrix(params), rtol=1e-8)
    assert len(path.read_text().splitlines()[0].split()) == 23


def test_wav_round_trip(tmp_path):
    x = 0.5 * _sine(440.0, 1600)
    voc.write_wav(tmp_path / "a.wav", x)
    y, sr = voc.read_wav(tmp_path / "a.wav")
    assert sr == SR and len(y) == 1600
    assert np.max(np.abs(x - y)) <= 1 / 32768
