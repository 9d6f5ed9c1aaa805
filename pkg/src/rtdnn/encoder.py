"""Per-frame network input: TDNN phone streams, 9-phone duration/distance
coding, and the prosodic/syntactic stream.

Stream layout of one frame (concatenated in this order):

* ``a_labels``   taps x n_phones one-hots of the phone under each tap
* ``b_features`` taps x F articulatory features of the same phones
* ``c_dd_labels``   9 x (n_phones + 2): context segment one-hot, duration, distance
* ``d_dd_features`` 9 x (F + 2): context segment features, duration, distance
* ``e_prosody``  same-syllable flags per tap, same-word flags per tap,
  (primary, secondary) stress, (content, function) word class, and
  previous/current/next (duration, distance) for phrases and clauses
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .labels import Utterance, segment_at
from .phoneset import PhoneSet

WINDOW_HALF_FRAMES = 30  # 300 ms window at 5 ms frames

_DEFAULT_OFFSETS = (1, 2, 3, 4, 5, 6, 8, 10, 13, 17, 22, 28)


@dataclass(frozen=True)
class SamplingSchedule:
    offsets: tuple[int, ...]

    def __post_init__(self):
        offs = tuple(int(o) for o in self.offsets)
        object.__setattr__(self, "offsets", offs)
        if 0 not in offs:
            raise ValueError("schedule must contain offset 0")
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError("schedule offsets must be strictly increasing")
        if set(offs) != {-o for o in offs}:
            raise ValueError("schedule must be symmetric about 0")
        if max(abs(o) for o in offs) > WINDOW_HALF_FRAMES:
            raise ValueError(f"schedule exceeds +-{WINDOW_HALF_FRAMES} frames")
        pos = [o for o in offs if o >= 0]
        gaps = np.diff(pos)
        if np.any(np.diff(gaps) < 0):
            raise ValueError("schedule gaps must not shrink away from the center")

    @property
    def n_taps(self) -> int:
        return len(self.offsets)

    def gaps(self) -> list[int]:
        pos = [o for o in self.offsets if o >= 0]
        return [b - a for a, b in zip(pos, pos[1:])]


def default_schedule() -> SamplingSchedule:
    return SamplingSchedule(tuple(-o for o in reversed(_DEFAULT_OFFSETS)) + (0,) + _DEFAULT_OFFSETS)


@dataclass(frozen=True)
class StreamLayout:
    """Names, widths and offsets of the streams inside a flat input row."""

    names: tuple[str, ...]
    dims: tuple[int, ...]

    def offset(self, name: str) -> int:
        i = self.names.index(name)
        return int(sum(self.dims[:i]))

    def slice(self, name: str) -> slice:
        o = self.offset(name)
        return slice(o, o + self.dims[self.names.index(name)])

    @property
    def total(self) -> int:
        return int(sum(self.dims))


@dataclass(frozen=True)
class EncoderConfig:
    schedule: SamplingSchedule = field(default_factory=default_schedule)
    context_radius: int = 4
    max_dist_frames: int = 60
    # syntactic elements carrying duration/distance coding
    dd_mark_kinds: tuple[str, ...] = ("phrase", "clause")

    @property
    def n_context(self) -> int:
        return 2 * self.context_radius + 1

    def prosody_dim(self) -> int:
        return 2 * self.schedule.n_taps + 4 + 6 * len(self.dd_mark_kinds)

    def layout(self, ps: PhoneSet) -> StreamLayout:
        n, f, k, taps = ps.n_phones, ps.n_features, self.n_context, self.schedule.n_taps
        return StreamLayout(
            ("a_labels", "b_features", "c_dd_labels", "d_dd_features", "e_prosody"),
            (taps * n, taps * f, k * (n + 2), k * (f + 2), self.prosody_dim()),
        )

    def input_dim(self, ps: PhoneSet, feedback_dim: int = 0) -> int:
        return self.layout(ps).total + feedback_dim


@dataclass(frozen=True)
class InputVector:
    a_labels: np.ndarray
    b_features: np.ndarray
    c_dd_labels: np.ndarray
    d_dd_features: np.ndarray
    e_prosody: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([
            self.a_labels.ravel(), self.b_features.ravel(), self.c_dd_labels.ravel(),
            self.d_dd_features.ravel(), self.e_prosody.ravel(),
        ])

    @classmethod
    def from_flat(cls, row, ps: PhoneSet, cfg: EncoderConfig) -> "InputVector":
        lay = cfg.layout(ps)
        taps, k = cfg.schedule.n_taps, cfg.n_context
        shapes = {
            "a_labels": (taps, ps.n_phones), "b_features": (taps, ps.n_features),
            "c_dd_labels": (k, ps.n_phones + 2), "d_dd_features": (k, ps.n_features + 2),
            "e_prosody": (lay.dims[-1],),
        }
        return cls(**{n: np.asarray(row[lay.slice(n)]).reshape(shapes[n]) for n in lay.names})


class EncodedUtterance(Sequence):
    """Frame-major input matrix with per-frame :class:`InputVector` views."""

    def __init__(self, matrix: np.ndarray, ps: PhoneSet, cfg: EncoderConfig):
        self.matrix = matrix
        self.ps = ps
        self.cfg = cfg
        self.layout = cfg.layout(ps)

    def __len__(self):
        return self.matrix.shape[0]

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[i] for i in range(*t.indices(len(self)))]
        return InputVector.from_flat(self.matrix[t], self.ps, self.cfg)


def _clip_dur(d, cap):
    return np.minimum(np.asarray(d, dtype=np.float64) / cap, 1.0)


def _clip_dist(d, cap):
    return np.clip(np.asarray(d, dtype=np.float64) / cap, -1.0, 1.0)


def _dd_context(spans, cur, t, radius, cap):
    """(duration, distance, valid) for the ``2*radius+1`` spans around ``cur``.

    ``cur`` may be -1 when no span covers ``t``; the center slot is then padding.
    """
    n = len(spans)
    dur = np.zeros(2 * radius + 1)
    dist = np.zeros(2 * radius + 1)
    valid = np.zeros(2 * radius + 1, dtype=bool)
    for k, s in enumerate(range(-radius, radius + 1)):
        j = cur + s
        if cur >= 0 and 0 <= j < n:
            start, length = spans[j]
            dur[k] = _clip_dur(length, cap)
            dist[k] = _clip_dist(start - t, cap)
            valid[k] = True
        else:
            dist[k] = 1.0 if s > 0 else -1.0
    return dur, dist, valid


def _mark_context(marks, t, cap):
    """Previous/current/next (duration, distance) for one mark kind."""
    spans = [(m.start_frame, m.end_frame - m.start_frame) for m in marks]
    cur = next((i for i, m in enumerate(marks) if m.covers(t)), -1)
    out = np.zeros(6)
    if cur >= 0:
        dur, dist, _ = _dd_context(spans, cur, t, 1, cap)
        out[0::2], out[1::2] = dur, dist
        return out
    # between marks: previous is the last mark ending at or before t
    prev = max((i for i, m in enumerate(marks) if m.end_frame <= t), default=None)
    nxt = min((i for i, m in enumerate(marks) if m.start_frame > t), default=None)
    out[1], out[3], out[5] = -1.0, -1.0, 1.0
    if prev is not None:
        out[0], out[1] = _clip_dur(spans[prev][1], cap), _clip_dist(spans[prev][0] - t, cap)
    if nxt is not None:
        out[4], out[5] = _clip_dur(spans[nxt][1], cap), _clip_dist(spans[nxt][0] - t, cap)
    return out


def _covering(marks, t):
    return next((m for m in marks if m.covers(t)), None)


def encode_frame(u: Utterance, t: int, ps: PhoneSet, cfg: EncoderConfig | None = None) -> InputVector:
    """Encode frame ``t`` directly from the utterance (reference path)."""
    cfg = cfg or EncoderConfig()
    if not (0 <= t < u.n_frames):
        raise IndexError(f"frame {t} out of range [0, {u.n_frames})")
    table = ps.feature_table
    offs = cfg.schedule.offsets
    cap = cfg.max_dist_frames

    tap_ids = []
    for o in offs:
        src = t + o
        tap_ids.append(u.segments[segment_at(u, src)].phone_id if 0 <= src < u.n_frames else 0)
    tap_ids = np.array(tap_ids)
    a = np.zeros((len(offs), ps.n_phones))
    a[np.arange(len(offs)), tap_ids] = 1.0
    b = table[tap_ids].copy()

    cur = segment_at(u, t)
    spans = [(s.start_frame, s.dur_frames) for s in u.segments]
    dur, dist, valid = _dd_context(spans, cur, t, cfg.context_radius, cap)
    ctx_ids = np.array([
        u.segments[cur + s].phone_id if valid[k] else 0
        for k, s in enumerate(range(-cfg.context_radius, cfg.context_radius + 1))
    ])
    k = cfg.n_context
    c = np.zeros((k, ps.n_phones + 2))
    c[np.arange(k), ctx_ids] = 1.0
    c[:, -2], c[:, -1] = dur, dist
    d = np.zeros((k, ps.n_features + 2))
    d[:, :-2] = table[ctx_ids]
    d[:, -2], d[:, -1] = dur, dist

    e = []
    for kind in ("syllable", "word"):
        cov = _covering(u.marks_of(kind), t)
        e.append([1.0 if cov is not None and cov.covers(t + o) else 0.0 for o in offs])
    syl = _covering(u.marks_of("syllable"), t)
    wrd = _covering(u.marks_of("word"), t)
    e.append([
        float(syl is not None and syl.stress == "primary"),
        float(syl is not None and syl.stress == "secondary"),
        float(wrd is not None and wrd.word_class == "content"),
        float(wrd is not None and wrd.word_class == "function"),
    ])
    for kind in cfg.dd_mark_kinds:
        e.append(_mark_context(u.marks_of(kind), t, cap))
    return InputVector(a, b, c, d, np.concatenate([np.asarray(x, dtype=np.float64) for x in e]))


def _frame_mark_index(marks, n_frames):
    idx = np.full(n_frames, -1, dtype=np.int64)
    for i, m in enumerate(marks):
        idx[m.start_frame:m.end_frame] = i
    return idx


def encode_utterance(u: Utterance, ps: PhoneSet, cfg: EncoderConfig | None = None) -> EncodedUtterance:
    """Vectorized batch form of :func:`encode_frame` for all frames."""
    cfg = cfg or EncoderConfig()
    T = u.n_frames
    n, f = ps.n_phones, ps.n_features
    table = ps.feature_table
    offs = np.array(cfg.schedule.offsets)
    taps = len(offs)
    cap = float(cfg.max_dist_frames)
    lay = cfg.layout(ps)
    X = np.zeros((T, lay.total))

    frames = np.arange(T)
    seg_of = u.frame_segments()
    pid = u.phone_ids
    src = frames[:, None] + offs[None, :]
    inside = (src >= 0) & (src < T)
    tap_ids = np.where(inside, pid[seg_of[np.clip(src, 0, T - 1)]], 0)

    a = np.zeros((T, taps, n))
    np.put_along_axis(a, tap_ids[..., None], 1.0, axis=2)
    X[:, lay.slice("a_labels")] = a.reshape(T, -1)
    X[:, lay.slice("b_features")] = table[tap_ids].reshape(T, -1)

    r = cfg.context_radius
    k = cfg.n_context
    rel = np.arange(-r, r + 1)
    j = seg_of[:, None] + rel[None, :]
    valid = (j >= 0) & (j < len(u.segments))
    jc = np.clip(j, 0, len(u.segments) - 1)
    starts = np.array([s.start_frame for s in u.segments])
    durs = np.array([s.dur_frames for s in u.segments])
    ctx_ids = np.where(valid, pid[jc], 0)
    dur = np.where(valid, _clip_dur(durs[jc], cap), 0.0)
    dist = np.where(valid, _clip_dist(starts[jc] - frames[:, None], cap), np.sign(rel)[None, :] + (rel == 0))
    c = np.zeros((T, k, n + 2))
    np.put_along_axis(c[..., :n], ctx_ids[..., None], 1.0, axis=2)
    c[..., n], c[..., n + 1] = dur, dist
    d = np.zeros((T, k, f + 2))
    d[..., :f] = table[ctx_ids]
    d[..., f], d[..., f + 1] = dur, dist
    X[:, lay.slice("c_dd_labels")] = c.reshape(T, -1)
    X[:, lay.slice("d_dd_features")] = d.reshape(T, -1)

    e = np.zeros((T, lay.dims[-1]))
    src_c = np.clip(src, 0, T - 1)
    col = 0
    cov_idx = {}
    for kind in ("syllable", "word"):
        idx = _frame_mark_index(u.marks_of(kind), T)
        cov_idx[kind] = idx
        same = inside & (idx[:, None] >= 0) & (idx[src_c] == idx[:, None])
        e[:, col:col + taps] = same
        col += taps
    syl_marks, wrd_marks = u.marks_of("syllable"), u.marks_of("word")
    stress = np.array([m.stress for m in syl_marks] + [None], dtype=object)[cov_idx["syllable"]]
    wclass = np.array([m.word_class for m in wrd_marks] + [None], dtype=object)[cov_idx["word"]]
    e[:, col] = stress == "primary"
    e[:, col + 1] = stress == "secondary"
    e[:, col + 2] = wclass == "content"
    e[:, col + 3] = wclass == "function"
    col += 4
    for kind in cfg.dd_mark_kinds:
        marks = u.marks_of(kind)
        for t in range(T):
            e[t, col:col + 6] = _mark_context(marks, t, cap)
        col += 6
    X[:, lay.slice("e_prosody")] = e
    return EncodedUtterance(X, ps, cfg)


def format_matrix(enc: EncodedUtterance) -> str:
    return "".join(" ".join(f"{v:.9g}" for v in row) + "\n" for row in enc.matrix)


def config_from_mapping(m: dict, base: EncoderConfig | None = None) -> EncoderConfig:
    """Build an :class:`EncoderConfig` from ``key=value`` settings."""
    base = base or EncoderConfig()
    kw = {}
    for key, val in m.items():
        if key == "schedule":
            kw[key] = SamplingSchedule(tuple(int(v) for v in str(val).split(",")))
        elif key in ("context_radius", "max_dist_frames"):
            kw[key] = int(val)
        elif key == "dd_mark_kinds":
            kw[key] = tuple(v.strip() for v in str(val).split(",") if v.strip())
        else:
            raise ValueError(f"unknown encoder setting {key!r}")
    return replace(base, **kw)
