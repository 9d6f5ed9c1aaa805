"""Mixed-source LSF vocoder: analysis and synthesis at 5 ms frames.

The synthesis filter is ``1/A(z)`` with ``A(z) = 1 + sum_k a[k] z^-(k+1)``.
Excitation is a harmonic pulse train below the voicing boundary ``fb`` plus
white noise above it.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal.windows import tukey

from . import kernels

RMS_FLOOR = 1e-5
DB_FLOOR = -100.0
LSF_GRID = 1024
_LSF_GRID_MAX = 1 << 16
PERIOD_MULTIPLES = (1, 2, 3)
GAIN_RAMP = 20
TAPER_ALPHA = 0.25

DEFAULT_BAND_EDGES = (0.0, 200.0, 400.0, 700.0, 1000.0, 1500.0, 2200.0, 3200.0, 4500.0, 6000.0, 8000.0)


class VocoderError(ValueError):
    pass


@dataclass(frozen=True)
class VocoderConfig:
    sample_rate: int = 16000
    frame_samples: int = 80
    lpc_order: int = 10
    analysis_window: int = 240
    pitch_window: int = 640
    band_edges: tuple[float, ...] = DEFAULT_BAND_EDGES
    f0_min: float = 50.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    nfft: int = 512

    def __post_init__(self):
        edges = tuple(float(e) for e in self.band_edges)
        object.__setattr__(self, "band_edges", edges)
        if len(edges) != 11:
            raise VocoderError(f"need 11 band edges for 10 bands, got {len(edges)}")
        if edges[0] != 0.0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise VocoderError("band edges must start at 0 and increase strictly")
        if edges[-1] > self.sample_rate / 2:
            raise VocoderError("top band edge exceeds the Nyquist frequency")
        if self.analysis_window < self.lpc_order + 1:
            raise VocoderError("analysis window shorter than lpc_order + 1")
        if not (0 < self.f0_min < self.f0_max <= self.sample_rate / 2):
            raise VocoderError("need 0 < f0_min < f0_max <= Nyquist")

    @property
    def n_bands(self) -> int:
        return len(self.band_edges) - 1

    @property
    def param_dim(self) -> int:
        return self.lpc_order + 3 + self.n_bands


@dataclass
class CoderParams:
    lsf: np.ndarray
    log_energy: float
    f0: float
    fb: float
    band_powers: np.ndarray

    def main_vector(self) -> np.ndarray:
        return np.concatenate([self.lsf, [self.log_energy, self.f0, self.fb]])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.main_vector(), self.band_powers])

    @classmethod
    def from_vector(cls, v, lpc_order: int = 10) -> "CoderParams":
        v = np.asarray(v, dtype=np.float64)
        p = lpc_order
        return cls(v[:p].copy(), float(v[p]), float(v[p + 1]), float(v[p + 2]), v[p + 3:].copy())


@dataclass
class SynthState:
    ar_memory: np.ndarray
    pulse_phase: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    gain: float = 0.0

    @classmethod
    def initial(cls, cfg: VocoderConfig, noise_seed: int = 0) -> "SynthState":
        return cls(np.zeros(cfg.lpc_order), 0.0, np.random.default_rng(noise_seed))


def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


# --- LPC / LSF -------------------------------------------------------------

def autocorrelation(x, order):
    x = np.asarray(x, dtype=np.float64)
    return np.array([np.dot(x[: len(x) - k], x[k:]) for k in range(order + 1)])


def lpc_analyze(frame, order: int = 10, white_noise: float = 1e-9) -> np.ndarray:
    """Autocorrelation-method LPC; returns ``a[1..order]``, zeros for silence."""
    frame = np.asarray(frame, dtype=np.float64)
    if len(frame) < order + 1:
        raise VocoderError("frame shorter than order + 1")
    if not np.all(np.isfinite(frame)):
        raise VocoderError("non-finite samples")
    r = autocorrelation(frame, order)
    if r[0] <= 0.0:
        return np.zeros(order)
    r[0] *= 1.0 + white_noise
    a, _, _ = kernels.levinson(r, order)
    return a


def lpc_to_reflection(a) -> np.ndarray:
    """Step-down recursion; |k| < 1 for all k iff ``A(z)`` is minimum phase."""
    a = np.array(a, dtype=np.float64)
    p = len(a)
    k = np.zeros(p)
    for i in range(p - 1, -1, -1):
        ki = a[i]
        k[i] = ki
        if abs(ki) >= 1.0:
            k[:i] = np.nan
            break
        a = (a[:i] - ki * a[:i][::-1]) / (1.0 - ki * ki)
    return k


def reflection_to_lpc(k) -> np.ndarray:
    a = np.zeros(0)
    for ki in k:
        a = np.concatenate([a + ki * a[::-1], [ki]])
    return a


def is_minimum_phase(a) -> bool:
    k = lpc_to_reflection(a)
    return bool(np.all(np.abs(k) < 1.0))


def _sum_diff_polys(a):
    """Symmetric sum/difference polynomials with trivial roots at z=+-1 removed."""
    A = np.concatenate([[1.0], a, [0.0]])
    P = A + A[::-1]
    Q = A - A[::-1]
    p = len(a)
    if p % 2 == 0:
        P = np.polydiv(P, [1.0, 1.0])[0]
        Q = np.polydiv(Q, [1.0, -1.0])[0]
    else:
        Q = np.polydiv(Q, [1.0, 0.0, -1.0])[0]
    return P, Q


def _cos_coeffs(sym):
    """Coefficients of e^{jwM} S(e^{jw}) as a cosine series, S symmetric of degree 2M."""
    m = (len(sym) - 1) // 2
    c = np.empty(m + 1)
    c[0] = sym[m]
    c[1:] = 2.0 * sym[m + 1:]
    return c


def lpc_to_lsf(a, n_grid: int = LSF_GRID) -> np.ndarray:
    """Line spectral frequencies (radians, ascending) of a minimum-phase ``A(z)``."""
    a = np.asarray(a, dtype=np.float64)
    p = len(a)
    if not is_minimum_phase(a):
        raise VocoderError("LPC polynomial is not minimum phase")
    P, Q = _sum_diff_polys(a)
    cp, cq = _cos_coeffs(P), _cos_coeffs(Q)
    n_p, n_q = len(cp) - 1, len(cq) - 1
    grid = n_grid
    while True:
        rp = kernels.cosine_roots(cp, grid)
        rq = kernels.cosine_roots(cq, grid)
        if len(rp) == n_p and len(rq) == n_q or grid >= _LSF_GRID_MAX:
            break
        grid *= 4
    if len(rp) != n_p or len(rq) != n_q:
        raise VocoderError(f"found {len(rp) + len(rq)} line spectral frequencies, expected {p}")
    lsf = np.empty(p)
    lsf[0::2] = rp
    lsf[1::2] = rq
    if np.any(np.diff(lsf) <= 0) or lsf[0] <= 0 or lsf[-1] >= np.pi:
        raise VocoderError("line spectral frequencies do not interlace")
    return lsf


def _poly_from_angles(ws):
    poly = np.array([1.0])
    for w in ws:
        poly = np.convolve(poly, [1.0, -2.0 * math.cos(w), 1.0])
    return poly


def lsf_to_lpc(lsf) -> np.ndarray:
    lsf = np.asarray(lsf, dtype=np.float64)
    p = len(lsf)
    if np.any(np.diff(lsf) <= 0) or p and (lsf[0] <= 0 or lsf[-1] >= np.pi):
        raise VocoderError("LSFs must be strictly increasing inside (0, pi)")
    P = _poly_from_angles(lsf[0::2])
    Q = _poly_from_angles(lsf[1::2])
    if p % 2 == 0:
        P = np.convolve(P, [1.0, 1.0])
        Q = np.convolve(Q, [1.0, -1.0])
    else:
        Q = np.convolve(Q, [1.0, 0.0, -1.0])
    A = 0.5 * (P + Q)
    return A[1:p + 1]


def flat_lsf(order: int = 10) -> np.ndarray:
    return np.arange(1, order + 1) * np.pi / (order + 1)


# --- source analysis -------------------------------------------------------

def normalized_autocorr(x, lags):
    """Pearson-style normalized autocorrelation of ``x`` over overlapping parts."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    ex = np.concatenate([[0.0], np.cumsum(x * x)])
    out = np.zeros(len(lags))
    for i, L in enumerate(lags):
        if L <= 0 or L >= n:
            continue
        num = np.dot(x[: n - L], x[L:])
        den = math.sqrt(ex[n - L] * (ex[n] - ex[L]))
        out[i] = num / den if den > 0 else 0.0
    return out


def estimate_pitch(frame, cfg: VocoderConfig = VocoderConfig()):
    """Return ``(f0, voiced)`` from the normalized autocorrelation peak."""
    x = np.asarray(frame, dtype=np.float64)
    x = x - x.mean()
    lmin = max(2, int(math.floor(cfg.sample_rate / cfg.f0_max)))
    lmax = int(math.ceil(cfg.sample_rate / cfg.f0_min))
    if len(x) <= lmax + 1 or np.dot(x, x) <= (RMS_FLOOR ** 2) * len(x):
        return cfg.f0_min, False
    lags = np.arange(lmin - 1, lmax + 2)
    r = normalized_autocorr(x, lags)
    inner = r[1:-1]
    best = int(np.argmax(inner))
    if inner[best] < cfg.voicing_threshold:
        return cfg.f0_min, False
    # prefer the shortest lag whose local peak is close to the global one
    for i in range(len(inner)):
        if inner[i] >= 0.9 * inner[best] and r[i] <= inner[i] >= r[i + 2]:
            best = i
            break
    L = lags[best + 1]
    y0, y1, y2 = r[best], r[best + 1], r[best + 2]
    den = y0 - 2.0 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den < 0 else 0.0
    f0 = cfg.sample_rate / (L + float(np.clip(shift, -0.5, 0.5)))
    return float(np.clip(f0, cfg.f0_min, cfg.f0_max)), True


def _band_mask(n_bins, nfft, sr, lo, hi, top):
    freqs = np.arange(n_bins) * sr / nfft
    return (freqs >= lo) & ((freqs < hi) | (top & (freqs <= hi)))


def bandpass(x, lo, hi, sr, top=False):
    """Brick-wall band-pass via zero-padded FFT masking."""
    n = len(x)
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    X = np.fft.rfft(x, nfft)
    X[~_band_mask(len(X), nfft, sr, lo, hi, top)] = 0.0
    return np.fft.irfft(X, nfft)[:n]


def band_periodicity(x, f0, cfg: VocoderConfig = VocoderConfig()) -> np.ndarray:
    """Per-band normalized autocorrelation at the pitch lag.

    The value for a band is the minimum over one, two and three pitch
    periods (multiples reaching past 60% of the frame are skipped), which
    keeps narrow noise bands from looking periodic by chance.
    """
    x = np.asarray(x, dtype=np.float64)
    # flat-topped taper: limits leakage without skewing the lagged overlap
    x = (x - np.mean(x)) * tukey(len(x), TAPER_ALPHA, sym=False)
    period = cfg.sample_rate / f0
    lag_sets = [
        np.array([int(math.floor(m * period)), int(math.ceil(m * period))])
        for m in PERIOD_MULTIPLES
        if m == 1 or m * period <= 0.6 * len(x)
    ]
    edges = cfg.band_edges
    out = np.zeros(cfg.n_bands)
    for b in range(cfg.n_bands):
        y = bandpass(x, edges[b], edges[b + 1], cfg.sample_rate, top=b == cfg.n_bands - 1)
        out[b] = min(normalized_autocorr(y, lags).max() for lags in lag_sets)
    return out


def estimate_boundary(frame, f0, cfg: VocoderConfig = VocoderConfig(), voiced: bool = True) -> float:
    """Voicing boundary: upper edge of the last periodic band scanning upward.

    Bands lying entirely below f0 hold no harmonic and are skipped.
    """
    if not voiced or f0 <= 0:
        return 0.0
    per = band_periodicity(frame, f0, cfg)
    fb = 0.0
    for b in range(cfg.n_bands):
        if cfg.band_edges[b + 1] <= f0:
            continue
        if per[b] <= cfg.voicing_threshold:
            break
        fb = cfg.band_edges[b + 1]
    return fb


def band_powers(frame, cfg: VocoderConfig = VocoderConfig()) -> np.ndarray:
    """Band energies in dB of an already-windowed frame; bands partition the spectrum."""
    x = np.asarray(frame, dtype=np.float64)
    nfft = max(cfg.nfft, 1 << int(math.ceil(math.log2(max(len(x), 2)))))
    X = np.fft.rfft(x, nfft)
    pw = np.abs(X) ** 2 / nfft
    weights = np.full(len(X), 2.0)
    weights[0] = 1.0
    if nfft % 2 == 0:
        weights[-1] = 1.0
    pw *= weights
    edges = cfg.band_edges
    top = edges[-1] >= cfg.sample_rate / 2
    out = np.empty(cfg.n_bands)
    for b in range(cfg.n_bands):
        mask = _band_mask(len(X), nfft, cfg.sample_rate, edges[b], edges[b + 1], top and b == cfg.n_bands - 1)
        out[b] = pw[mask].sum()
    return db(out)


def db(power):
    power = np.asarray(power, dtype=np.float64)
    return np.maximum(10.0 * np.log10(np.maximum(power, 1e-300)), DB_FLOOR)


# --- whole-signal analysis / synthesis -------------------------------------

def _segment(x, center, length):
    start = center - length // 2
    out = np.zeros(length)
    lo, hi = max(start, 0), min(start + length, len(x))
    if hi > lo:
        out[lo - start:hi - start] = x[lo:hi]
    return out


def n_frames_for(n_samples: int, cfg: VocoderConfig = VocoderConfig()) -> int:
    return -(-n_samples // cfg.frame_samples)


def analyze_frame(x, t, cfg: VocoderConfig, last_f0: float) -> CoderParams:
    fs = cfg.frame_samples
    center = t * fs + fs // 2
    seg = _segment(x, center, cfg.analysis_window)
    frame = _segment(x, center, fs)
    rms = math.sqrt(np.mean(frame ** 2))
    log_energy = math.log(max(rms, RMS_FLOOR))
    win = seg * hann(cfg.analysis_window)
    bands = band_powers(win, cfg)
    silent = math.sqrt(np.mean(seg ** 2)) <= 2.0 * RMS_FLOOR
    if silent:
        return CoderParams(flat_lsf(cfg.lpc_order), log_energy, last_f0, 0.0, bands)
    lsf = lpc_to_lsf(lpc_analyze(win, cfg.lpc_order))
    pitch_seg = _segment(x, center, cfg.pitch_window)
    f0, voiced = estimate_pitch(pitch_seg, cfg)
    fb = estimate_boundary(pitch_seg, f0, cfg, voiced)
    if not voiced or fb == 0.0:
        return CoderParams(lsf, log_energy, last_f0, 0.0, bands)
    return CoderParams(lsf, log_energy, f0, fb, bands)


def analyze(samples, cfg: VocoderConfig = VocoderConfig(), sample_rate: int | None = None) -> list[CoderParams]:
    """One parameter set per 5 ms frame; unvoiced frames carry the last voiced f0."""
    if sample_rate is not None and sample_rate != cfg.sample_rate:
        raise VocoderError(f"sample rate {sample_rate} does not match configured {cfg.sample_rate}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise VocoderError("expected mono audio")
    out = []
    last_f0 = cfg.f0_min
    for t in range(n_frames_for(len(x), cfg)):
        p = analyze_frame(x, t, cfg, last_f0)
        if p.fb > 0:
            last_f0 = p.f0
        out.append(p)
    return out


def band_track(samples, cfg: VocoderConfig = VocoderConfig()) -> np.ndarray:
    """Band powers only, frame for frame as :func:`analyze` computes them."""
    x = np.asarray(samples, dtype=np.float64)
    win = hann(cfg.analysis_window)
    fs = cfg.frame_samples
    rows = [band_powers(_segment(x, t * fs + fs // 2, cfg.analysis_window) * win, cfg)
            for t in range(n_frames_for(len(x), cfg))]
    return np.array(rows).reshape(-1, cfg.n_bands)


def _excitation(p: CoderParams, state: SynthState, cfg: VocoderConfig):
    n = cfg.frame_samples
    sr = cfg.sample_rate
    f0 = min(max(p.f0, cfg.f0_min), cfg.f0_max)
    fb = min(max(p.fb, 0.0), sr / 2)
    n_harm = 0
    if fb > 0:
        n_harm = int(math.ceil(min(fb, sr / 2) / f0)) - 1
    pulses, phase = kernels.harmonic_excitation(n, f0, n_harm, float(sr), state.pulse_phase)
    noise = state.rng.standard_normal(n) * math.sqrt(sr / (4.0 * f0))
    if fb > 0:
        N = np.fft.rfft(noise)
        N[np.arange(len(N)) * sr / n < fb] = 0.0
        noise = np.fft.irfft(N, n)
    return pulses + noise, phase


def _gain_curve(raw, g_start, target, ramp):
    """Gain per sample: linear ramp from ``g_start`` to ``g`` over ``ramp`` samples,
    then ``g``; ``g`` chosen so that ``rms(raw * curve) == target``."""
    n = len(raw)
    u = np.minimum((np.arange(n) + 1.0) / ramp, 1.0)
    e = raw * raw
    qa = np.dot(e, u * u)
    qb = g_start * np.dot(e, u * (1.0 - u))
    qc = g_start * g_start * np.dot(e, (1.0 - u) ** 2) - n * target * target
    disc = qb * qb - qa * qc
    if g_start > 0 and qc <= 0.0 <= disc:
        g = (-qb + math.sqrt(disc)) / qa
        curve = g_start * (1.0 - u) + g * u
    else:
        # ramp cannot reach the target from the previous gain: plain scaling
        g = target / math.sqrt(np.mean(e))
        curve = np.full(n, g)
    return curve, g


def synthesize_frame(p: CoderParams, state: SynthState, cfg: VocoderConfig = VocoderConfig()):
    """Emit one frame; the result's RMS equals ``exp(log_energy)``.

    Filter memory lives in the unscaled domain; the output gain ramps from the
    previous frame's gain to avoid steps at frame boundaries.
    """
    a = lsf_to_lpc(p.lsf)
    exc, phase = _excitation(p, state, cfg)
    raw, mem = kernels.allpole(exc, a, state.ar_memory)
    rms = math.sqrt(np.mean(raw ** 2))
    target = math.exp(p.log_energy)
    if not rms > 0 or not math.isfinite(rms):
        raise VocoderError("synthesis filter produced a degenerate frame")
    curve, g = _gain_curve(raw, state.gain, target, GAIN_RAMP)
    y = raw * curve
    # remove the residual rounding so the frame RMS is exact
    y *= target / math.sqrt(np.mean(y ** 2))
    state.ar_memory = mem
    state.pulse_phase = phase
    state.gain = g
    return y, state


def synthesize(params, cfg: VocoderConfig = VocoderConfig(), noise_seed: int = 0) -> np.ndarray:
    state = SynthState.initial(cfg, noise_seed)
    frames = []
    for p in params:
        y, state = synthesize_frame(p, state, cfg)
        frames.append(y)
    return np.concatenate(frames) if frames else np.zeros(0)


# --- file formats ----------------------------------------------------------

def params_to_matrix(params) -> np.ndarray:
    return np.array([p.to_vector() for p in params])


def matrix_to_params(M, lpc_order: int = 10) -> list[CoderParams]:
    return [CoderParams.from_vector(row, lpc_order) for row in np.atleast_2d(M)]


def write_track(path, params):
    with open(path, "w", encoding="utf-8") as fh:
        for p in params:
            fh.write(" ".join(f"{v:.9g}" for v in p.to_vector()) + "\n")


def read_track(path, lpc_order: int = 10) -> list[CoderParams]:
    rows = [list(map(float, line.split())) for line in Path(path).read_text().splitlines() if line.strip()]
    return [CoderParams.from_vector(r, lpc_order) for r in rows]


def read_wav(path):
    """Read 16-bit PCM mono WAV; returns ``(samples in [-1, 1), sample_rate)``."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise VocoderError(f"{path}: expected 16-bit mono PCM")
        sr = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, sr


def write_wav(path, samples, sample_rate: int = 16000):
    x = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(x.tobytes())


def config_from_mapping(m: dict, base: VocoderConfig = VocoderConfig()) -> VocoderConfig:
    kw = {}
    for key, val in m.items():
        if key == "band_edges":
            kw[key] = tuple(float(v) for v in str(val).split(","))
        elif key in ("sample_rate", "frame_samples", "lpc_order", "analysis_window", "pitch_window", "nfft"):
            kw[key] = int(val)
        elif key in ("f0_min", "f0_max", "voicing_threshold"):
            kw[key] = float(val)
        else:
            raise VocoderError(f"unknown vocoder setting {key!r}")
    return replace(base, **kw)
