"""Corpus construction, training-set assembly and label-to-audio synthesis."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import vocoder
from .encoder import EncoderConfig, encode_utterance
from .labels import Mark, Utterance, parse_label_file, utterance_from_phones
from .netgraph import NetGraph, TrainingSet, encoder_config_of, infer, vocoder_config_of
from .phoneset import PAD_LABEL, PhoneSet
from .vocoder import CoderParams, VocoderConfig

# analysis may come up short of the label grid by less than one frame
# (the labels are rounded to it); that remainder is padded
MAX_SHORTFALL_FRAMES = 1


class DataError(ValueError):
    pass


@dataclass
class CorpusItem:
    utterance: Utterance
    targets: list
    source: str
    name: str = ""
    padded_frames: int = 0

    def __post_init__(self):
        if len(self.targets) != self.utterance.n_frames:
            raise DataError(f"{self.name or 'item'}: {len(self.targets)} targets for "
                            f"{self.utterance.n_frames} frames")

    def main_matrix(self) -> np.ndarray:
        return np.array([p.main_vector() for p in self.targets])

    def band_matrix(self) -> np.ndarray:
        return np.array([p.band_powers for p in self.targets])


# -- analyzed corpus ----------------------------------------------------------

def analyze_item(wav_path, label_path, ps: PhoneSet, voc_cfg: VocoderConfig = VocoderConfig()) -> CorpusItem:
    samples, sr = vocoder.read_wav(wav_path)
    if sr != voc_cfg.sample_rate:
        raise DataError(f"{wav_path}: sample rate {sr} Hz, configuration expects {voc_cfg.sample_rate} Hz")
    u = parse_label_file(label_path, ps)
    return item_from_audio(samples, u, voc_cfg, name=str(wav_path))


def item_from_audio(samples, u: Utterance, voc_cfg: VocoderConfig = VocoderConfig(), name: str = "") -> CorpusItem:
    n = u.n_frames
    fs = voc_cfg.frame_samples
    short = n * fs - len(samples)
    if short > MAX_SHORTFALL_FRAMES * fs:
        ms = 1000.0 * short / voc_cfg.sample_rate
        raise DataError(f"{name or 'audio'}: {ms:g} ms shorter than its labels")
    params = vocoder.analyze(samples, voc_cfg)[:n]
    pad = n - len(params)
    for _ in range(pad):
        last = params[-1]
        params.append(CoderParams(last.lsf.copy(), last.log_energy, last.f0, last.fb, last.band_powers.copy()))
    return CorpusItem(u, params, "analyzed", name, pad)


# -- synthetic corpus -----------------------------------------------------------

@dataclass(frozen=True)
class PhoneRecipe:
    lsf: np.ndarray
    log_energy: float
    f0_offset: float
    fb: float


@dataclass(frozen=True)
class SynthSpec:
    """Seeded recipe for a learnable stand-in corpus.

    Canonical per-phone LSFs, energy and voicing boundary; f0 follows a
    declination line from ``f0_start`` to ``f0_end`` over each utterance plus
    a per-phone offset. Tracks interpolate linearly between segment centres.
    """

    recipes: dict
    seed: int
    f0_start: float = 135.0
    f0_end: float = 100.0
    phones_per_utt: tuple = (5, 8)
    vowel_frames: tuple = (12, 24)
    consonant_frames: tuple = (6, 14)
    pause_frames: tuple = (6, 12)
    inventory: tuple = ()

    @classmethod
    def default(cls, ps: PhoneSet, seed: int = 0, lpc_order: int = 10, **kw) -> "SynthSpec":
        rng = np.random.default_rng(seed)
        feat = dict(zip(("voiced", "consonant", "sonorant", "nasal", "fricative", "stop"), range(6)))
        recipes = {}
        inventory = []
        for i, label in enumerate(ps.labels):
            f = ps.feature_table[i]
            gaps = math.pi / (lpc_order + 1) * np.exp(rng.normal(0.0, 0.3, lpc_order + 1))
            lsf = np.cumsum(gaps)[:lpc_order] * (math.pi / gaps.sum())
            if label == PAD_LABEL or f[10] > 0:  # silence-like
                recipes[label] = PhoneRecipe(lsf, math.log(1e-3), 0.0, 0.0)
                continue
            voiced = f[feat["voiced"]] > 0
            if f[feat["consonant"]] == 0:
                energy = rng.uniform(-2.8, -2.0)
            elif f[feat["sonorant"]] > 0:
                energy = rng.uniform(-3.5, -2.8)
            else:
                energy = rng.uniform(-4.5, -3.5)
            if voiced:
                fb = rng.uniform(4000.0, 8000.0) if f[feat["fricative"]] == 0 else 1500.0
            else:
                fb = 0.0
            recipes[label] = PhoneRecipe(lsf, float(energy), float(rng.uniform(-10.0, 10.0)), float(fb))
            inventory.append(label)
        return cls(recipes, seed, inventory=tuple(inventory), **kw)


def _is_vowel(ps: PhoneSet, label: str) -> bool:
    f = ps.feature_table[ps.id_of(label)]
    return f[1] == 0 and f[10] == 0 and label != PAD_LABEL


def random_utterance(spec: SynthSpec, ps: PhoneSet, rng: np.random.Generator) -> Utterance:
    """Random phone string between pauses, with syllable/word/phrase/clause marks."""
    inv = list(spec.inventory)
    vowels = [p for p in inv if _is_vowel(ps, p)]
    cons = [p for p in inv if p not in vowels]
    n = int(rng.integers(spec.phones_per_utt[0], spec.phones_per_utt[1] + 1))
    body = []
    count = 0
    while count < n:
        # CV or CVC syllables
        syl = [str(rng.choice(cons)), str(rng.choice(vowels))]
        if rng.random() < 0.4:
            syl.append(str(rng.choice(cons)))
        body.append(syl)
        count += len(syl)
    phones = [PAD_LABEL]
    durs = [int(rng.integers(spec.pause_frames[0], spec.pause_frames[1] + 1))]
    syl_spans = []
    for syl in body:
        start = sum(durs)
        for p in syl:
            lo, hi = spec.vowel_frames if p in vowels else spec.consonant_frames
            phones.append(p)
            durs.append(int(rng.integers(lo, hi + 1)))
        syl_spans.append((start, sum(durs)))
    body_end = sum(durs)
    phones.append(PAD_LABEL)
    durs.append(int(rng.integers(spec.pause_frames[0], spec.pause_frames[1] + 1)))

    marks = []
    words = []
    i = 0
    while i < len(syl_spans):
        k = int(rng.integers(1, 3))
        words.append(syl_spans[i:i + k])
        i += k
    for w in words:
        stressed = int(rng.integers(len(w)))
        for j, (s, e) in enumerate(w):
            marks.append(Mark("syllable", s, e, "primary" if j == stressed else str(rng.choice(["none", "secondary"]))))
        marks.append(Mark("word", w[0][0], w[-1][1], word_class="content" if rng.random() < 0.6 else "function"))
    split = words[len(words) // 2][0][0] if len(words) > 1 else None
    body_start = syl_spans[0][0]
    if split is None:
        marks.append(Mark("phrase", body_start, body_end))
    else:
        marks += [Mark("phrase", body_start, split), Mark("phrase", split, body_end)]
    marks.append(Mark("clause", body_start, body_end))
    return utterance_from_phones(ps, phones, durs, marks)


def _interp_tracks(centers, values, n_frames):
    t = np.arange(n_frames, dtype=np.float64)
    return np.stack([np.interp(t, centers, values[:, j]) for j in range(values.shape[1])], axis=1)


def synthetic_item(spec: SynthSpec, ps: PhoneSet, u: Utterance, voc_cfg: VocoderConfig = VocoderConfig(),
                   name: str = "") -> CorpusItem:
    P = voc_cfg.lpc_order
    rows, centers = [], []
    for seg in u.segments:
        label = ps.label_of(seg.phone_id)
        r = spec.recipes.get(label)
        if r is None:
            raise DataError(f"synthetic recipe has no entry for phone {label!r}")
        if len(r.lsf) != P:
            raise DataError(f"recipe for {label!r} has order {len(r.lsf)}, vocoder uses {P}")
        rows.append(np.concatenate([r.lsf, [r.log_energy, r.f0_offset, r.fb]]))
        centers.append(seg.start_frame + 0.5 * (seg.dur_frames - 1))
    T = u.n_frames
    tracks = _interp_tracks(np.array(centers), np.array(rows), T)
    frac = np.arange(T) / max(T - 1, 1)
    tracks[:, P + 1] += spec.f0_start + (spec.f0_end - spec.f0_start) * frac
    main = [CoderParams(m[:P].copy(), float(m[P]), float(m[P + 1]), float(m[P + 2]), np.zeros(voc_cfg.n_bands))
            for m in tracks]
    # band targets are what the vocoder actually produces for these tracks
    audio = vocoder.synthesize(main, voc_cfg, noise_seed=0)
    bands = vocoder.band_track(audio, voc_cfg)
    for p, b in zip(main, bands):
        p.band_powers = b
    return CorpusItem(u, main, "synthetic", name)


def generate_synthetic(spec: SynthSpec, ps: PhoneSet, n_utts: int, seed: int,
                       voc_cfg: VocoderConfig = VocoderConfig()) -> list[CorpusItem]:
    rng = np.random.default_rng([spec.seed, seed])
    return [synthetic_item(spec, ps, random_utterance(spec, ps, rng), voc_cfg, f"synth-{seed}-{i}")
            for i in range(n_utts)]


# -- manifests and training sets ------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    kind: str          # "audio" or "synth"
    wav: Path | None = None
    labels: Path | None = None
    seed: int = 0
    count: int = 0


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    out = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "SYNTH":
            try:
                _, seed, n = parts
                out.append(ManifestEntry("synth", seed=int(seed), count=int(n)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'SYNTH <seed> <n>'") from None
            continue
        parts = raw.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'wav_path<TAB>label_path'")
        wav, lab = (Path(p.strip()) for p in parts)
        out.append(ManifestEntry("audio", base / wav if not wav.is_absolute() else wav,
                                 base / lab if not lab.is_absolute() else lab))
    if not out:
        raise DataError(f"{path}: empty manifest")
    return out


def build_corpus(entries, ps: PhoneSet, voc_cfg: VocoderConfig = VocoderConfig(), synth_seed: int = 0):
    spec = None
    items = []
    for e in entries:
        if e.kind == "synth":
            if spec is None:
                spec = SynthSpec.default(ps, synth_seed, voc_cfg.lpc_order)
            items += generate_synthetic(spec, ps, e.count, e.seed, voc_cfg)
        else:
            items.append(analyze_item(e.wav, e.labels, ps, voc_cfg))
    return items


def training_set(items, ps: PhoneSet, enc_cfg: EncoderConfig | None = None) -> TrainingSet:
    return TrainingSet.from_items(
        (encode_utterance(it.utterance, ps, enc_cfg).matrix, it.main_matrix(), it.band_matrix()) for it in items)


# -- synthesis ---------------------------------------------------------------------

@dataclass
class SynthesisReport:
    n_frames: int
    n_samples: int
    lsf_repairs: int
    runtime_s: float


def synthesize_from_utterance(g: NetGraph, u: Utterance, ps: PhoneSet, noise_seed: int = 0):
    t0 = time.perf_counter()
    enc = encode_utterance(u, ps, encoder_config_of(g))
    voc_cfg = vocoder_config_of(g)
    res = infer(g, enc)
    audio = vocoder.synthesize(res.params, voc_cfg, noise_seed)
    report = SynthesisReport(u.n_frames, len(audio), res.lsf_repairs, time.perf_counter() - t0)
    return audio, report, res


def synthesize_utterance(g: NetGraph, label_path, ps: PhoneSet, out_wav=None, noise_seed: int = 0):
    """Labels -> encoder -> network -> vocoder; writes a WAV when ``out_wav`` is given."""
    u = parse_label_file(label_path, ps)
    audio, report, _ = synthesize_from_utterance(g, u, ps, noise_seed)
    if out_wav is not None:
        vocoder.write_wav(out_wav, audio, vocoder_config_of(g).sample_rate)
    return audio, report


def log_spectral_distance(a, b) -> np.ndarray:
    """Per-frame RMS difference of two dB band-power tracks."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return np.sqrt(np.mean((a - b) ** 2, axis=1))
