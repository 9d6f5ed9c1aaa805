import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SR, make_vowel
from rtdnn import netgraph as ng, pipeline as pl, vocoder
from rtdnn.labels import parse_labels, utterance_from_phones


@pytest.fixture(scope="module")
def spec(ps):
    return pl.SynthSpec.default(ps, 0)


@pytest.fixture(scope="module")
def zero_model(ps):
    g = ng.build_default_graph(ps, hidden=ng.SMALL_HIDDEN, buffer_len=2)
    mean = np.concatenate([vocoder.flat_lsf(10), [np.log(0.05), 120.0, 4000.0]])
    g.normalizer = ng.Normalizer(mean, np.ones(13), np.full(10, -30.0), np.ones(10))
    return g


def _labels(dur_ms):
    return f"SEG pau 0 {dur_ms}\n"


def test_one_second_gives_200_frames(ps, vowel):
    item = pl.item_from_audio(vowel, parse_labels(_labels(1000), ps))
    assert len(item.targets) == 200 and item.padded_frames == 0
    assert item.main_matrix().shape == (200, 13) and item.band_matrix().shape == (200, 10)


def test_analyzed_targets_equal_vocoder_analysis(ps, vowel):
    item = pl.item_from_audio(vowel, parse_labels(_labels(1000), ps))
    want = vocoder.analyze(vowel)
    np.testing.assert_array_equal(item.main_matrix(), np.array([p.main_vector() for p in want]))


def test_audio_too_short_is_an_error(ps, vowel):
    with pytest.raises(pl.DataError, match="40 ms shorter"):
        pl.item_from_audio(vowel[: SR * 96 // 100], parse_labels(_labels(1000), ps))


def test_short_remainder_is_padded(ps, vowel):
    u = parse_labels(_labels(1000), ps)
    # a partial last frame is still analyzed
    assert pl.item_from_audio(vowel[:-48], u).padded_frames == 0
    # one whole frame missing: the last analyzed frame is repeated
    item = pl.item_from_audio(vowel[:-80], u)
    assert len(item.targets) == 200 and item.padded_frames == 1
    assert np.array_equal(item.targets[-1].main_vector(), item.targets[-2].main_vector())
    with pytest.raises(pl.DataError):
        pl.item_from_audio(vowel[:-81], u)


def test_longer_audio_is_trimmed(ps, vowel):
    item = pl.item_from_audio(vowel, parse_labels(_labels(500), ps))
    assert len(item.targets) == 100


def test_analyze_item_files(tmp_path, ps, vowel):
    wav, lab = tmp_path / "v.wav", tmp_path / "v.lab"
    vocoder.write_wav(wav, vowel)
    lab.write_text(_labels(1000))
    assert len(pl.analyze_item(wav, lab, ps).targets) == 200
    vocoder.write_wav(wav, vowel, 8000)
    with pytest.raises(pl.DataError, match="sample rate"):
        pl.analyze_item(wav, lab, ps)


def test_synthetic_is_deterministic(ps, spec):
    a = pl.generate_synthetic(spec, ps, 2, 3)
    b = pl.generate_synthetic(pl.SynthSpec.default(ps, 0), ps, 2, 3)
    c = pl.generate_synthetic(spec, ps, 2, 4)
    for x, y in zip(a, b):
        assert x.utterance == y.utterance
        assert np.array_equal(x.main_matrix(), y.main_matrix())
        assert np.array_equal(x.band_matrix(), y.band_matrix())
    assert a[0].utterance != c[0].utterance


def test_synthetic_utterance_shape(ps, spec):
    for item in pl.generate_synthetic(spec, ps, 4, 0):
        u = item.utterance
        labels = [ps.label_of(s.phone_id) for s in u.segments]
        assert labels[0] == labels[-1] == "pau"
        assert 2 + 5 <= len(labels) <= 2 + 8 + 2
        kinds = {m.kind for m in u.marks}
        assert kinds == {"syllable", "word", "phrase", "clause"}
        M = item.main_matrix()
        assert np.all(np.diff(M[:, :10], axis=1) > 0)
        assert np.all((M[:, :10] > 0) & (M[:, :10] < np.pi))
        # f0 declines across the utterance
        assert M[0, 11] > M[-1, 11]


def test_single_phone_targets_are_constant(ps, spec):
    u = utterance_from_phones(ps, ["aa"], [12])
    item = pl.synthetic_item(spec, ps, u)
    M = item.main_matrix()
    r = spec.recipes["aa"]
    for row in M:
        np.testing.assert_array_equal(row[:10], r.lsf)
        assert row[10] == r.log_energy and row[12] == r.fb
    np.testing.assert_allclose(M[:, 11], np.linspace(spec.f0_start, spec.f0_end, 12) + r.f0_offset, atol=1e-9)


def test_synthetic_bands_match_resynthesis(ps, spec):
    item = pl.generate_synthetic(spec, ps, 1, 5)[0]
    audio = vocoder.synthesize(item.targets, noise_seed=0)
    np.testing.assert_allclose(item.band_matrix(), vocoder.band_track(audio), atol=1e-12)


def test_recipe_missing_is_an_error(ps, spec):
    narrow = pl.SynthSpec({"aa": spec.recipes["aa"]}, 0)
    with pytest.raises(pl.DataError, match="no entry"):
        pl.synthetic_item(narrow, ps, utterance_from_phones(ps, ["aa", "b"], [4, 4]))


def test_read_manifest(tmp_path):
    m = tmp_path / "corpus.txt"
    m.write_text("# corpus\nSYNTH 3 5\n\na.wav\tlabs/a.lab\n/abs/b.wav\t/abs/b.lab\n")
    e = pl.read_manifest(m)
    assert e[0] == pl.ManifestEntry("synth", seed=3, count=5)
    assert e[1].wav == tmp_path / "a.wav" and e[1].labels == tmp_path / "labs" / "a.lab"
    assert str(e[2].wav) == "/abs/b.wav"


@pytest.mark.parametrize("text, match", [
    ("", "empty"),
    ("SYNTH 3\n", "SYNTH"),
    ("SYNTH x 2\n", "SYNTH"),
    ("a.wav b.lab\n", "TAB"),
])
def test_manifest_errors(tmp_path, text, match):
    m = tmp_path / "m.txt"
    m.write_text(text)
    with pytest.raises(pl.DataError, match=match):
        pl.read_manifest(m)


def test_build_corpus_and_training_set(ps, tmp_path, vowel):
    vocoder.write_wav(tmp_path / "v.wav", vowel)
    (tmp_path / "v.lab").write_text(_labels(1000))
    entries = [pl.ManifestEntry("synth", seed=1, count=2), pl.ManifestEntry("audio", tmp_path / "v.wav",
                                                                             tmp_path / "v.lab")]
    items = pl.build_corpus(entries, ps)
    data = pl.training_set(items, ps)
    assert data.n_utts == 3
    assert data.lengths[2] == 200
    assert data.X.shape == (int(data.lengths.sum()), 2584)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["pau", "aa", "s", "m", "iy", "t"]), st.integers(1, 30)),
                min_size=1, max_size=6))
def test_length_law(ps, zero_model, segs):
    u = utterance_from_phones(ps, [p for p, _ in segs], [d for _, d in segs])
    audio, rep, res = pl.synthesize_from_utterance(zero_model, u, ps)
    assert len(audio) == rep.n_samples == u.n_frames * 80
    assert rep.n_frames == u.n_frames == len(res)


def test_synthesize_utterance_writes_wav(ps, zero_model, hello_path, tmp_path):
    out = tmp_path / "o.wav"
    audio, rep = pl.synthesize_utterance(zero_model, hello_path, ps, out)
    x, sr = vocoder.read_wav(out)
    assert sr == 16000 and len(x) == 64 * 80 == len(audio)
    assert np.isfinite(audio).all() and np.abs(audio).max() > 0


def test_log_spectral_distance():
    a = np.zeros((3, 4))
    b = np.array([[0, 0, 0, 0], [2, 2, 2, 2], [4, 0, 0, 0]], dtype=float)
    np.testing.assert_allclose(pl.log_spectral_distance(a, b), [0, 2, 2])


def test_vowel_copy_round_trip(ps):
    # analyzed targets resynthesize to the same band powers within a few dB
    x = make_vowel(0.5)
    item = pl.item_from_audio(x, parse_labels(_labels(500), ps))
    audio = vocoder.synthesize(item.targets)
    d = pl.log_spectral_distance(vocoder.band_track(audio)[10:-10], item.band_matrix()[10:-10])
    assert np.median(d) < 3.0
