"""Utterance label files on the 5 ms frame grid.

Record types (times in milliseconds)::

    SEG <label> <start_ms> <dur_ms>
    SYL <start_ms> <end_ms> <0|1|2>      # stress: none / primary / secondary
    WRD <start_ms> <end_ms> <C|F>        # content / function word
    PHR <start_ms> <end_ms>
    CLS <start_ms> <end_ms>
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .phoneset import PhoneSet, PhoneSetError

FRAME_MS = 5.0
# "#" opens a comment only at line start or after whitespace, so "h#" stays a label
_COMMENT = re.compile(r"(^|\s)#.*$")

MARK_KINDS = ("syllable", "word", "phrase", "clause")
STRESS = ("none", "primary", "secondary")
WORD_CLASS = ("content", "function")

_RECORD_KIND = {"SYL": "syllable", "WRD": "word", "PHR": "phrase", "CLS": "clause"}
_KIND_RECORD = {v: k for k, v in _RECORD_KIND.items()}


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    phone_id: int
    start_frame: int
    dur_frames: int

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.dur_frames


@dataclass(frozen=True)
class Mark:
    kind: str
    start_frame: int
    end_frame: int
    stress: str | None = None
    word_class: str | None = None

    def covers(self, t: int) -> bool:
        return self.start_frame <= t < self.end_frame


@dataclass(frozen=True)
class Utterance:
    segments: tuple[Segment, ...]
    marks: tuple[Mark, ...] = ()
    frame_ms: float = FRAME_MS

    def __post_init__(self):
        if not self.segments:
            raise LabelError("utterance has no segments")
        pos = 0
        for seg in self.segments:
            if seg.start_frame != pos or seg.dur_frames <= 0:
                raise LabelError(f"segments do not tile the utterance at frame {pos}")
            pos = seg.end_frame
        for kind in MARK_KINDS:
            prev_end = 0
            for m in self.marks_of(kind):
                if m.end_frame <= m.start_frame:
                    raise LabelError(f"empty {kind} mark at frame {m.start_frame}")
                if m.start_frame < prev_end:
                    raise LabelError(f"overlapping or unsorted {kind} marks at frame {m.start_frame}")
                if m.start_frame < 0 or m.end_frame > pos:
                    raise LabelError(f"{kind} mark [{m.start_frame}, {m.end_frame}) outside [0, {pos}]")
                prev_end = m.end_frame
        starts = np.array([s.start_frame for s in self.segments])
        object.__setattr__(self, "_starts", starts)

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end_frame

    @property
    def phone_ids(self) -> np.ndarray:
        return np.array([s.phone_id for s in self.segments], dtype=np.int64)

    def marks_of(self, kind: str) -> tuple[Mark, ...]:
        if kind not in MARK_KINDS:
            raise LabelError(f"unknown mark kind {kind!r}")
        return tuple(m for m in self.marks if m.kind == kind)

    def frame_segments(self) -> np.ndarray:
        """Segment ordinal of every frame, shape ``(n_frames,)``."""
        return np.repeat(np.arange(len(self.segments)), [s.dur_frames for s in self.segments])


def segment_at(u: Utterance, t: int) -> int:
    if not (0 <= t < u.n_frames):
        raise IndexError(f"frame {t} out of range [0, {u.n_frames})")
    return int(np.searchsorted(u._starts, t, side="right")) - 1


def _to_frame(ms: float) -> int:
    # round half up; Python's round() is banker's rounding
    return int(math.floor(ms / FRAME_MS + 0.5))


def parse_labels(text: str, ps: PhoneSet, source: str = "<string>") -> Utterance:
    seg_recs = []
    mark_recs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub("", raw).strip()
        if not line:
            continue
        tag, *args = line.split()
        where = f"{source}:{lineno}"
        try:
            if tag == "SEG":
                if len(args) != 3:
                    raise LabelError(f"{where}: SEG needs <label> <start_ms> <dur_ms>")
                label, start, dur = args[0], float(args[1]), float(args[2])
                try:
                    pid = ps.id_of(label)
                except PhoneSetError as exc:
                    raise LabelError(f"{where}: {exc}") from None
                if dur <= 0:
                    raise LabelError(f"{where}: non-positive duration")
                if seg_recs and start < seg_recs[-1][1]:
                    raise LabelError(f"{where}: SEG start {start} ms precedes previous SEG")
                seg_recs.append((pid, start, start + dur, lineno))
            elif tag in _RECORD_KIND:
                kind = _RECORD_KIND[tag]
                nargs = 3 if tag in ("SYL", "WRD") else 2
                if len(args) != nargs:
                    raise LabelError(f"{where}: {tag} expects {nargs} fields")
                start, end = float(args[0]), float(args[1])
                stress = word_class = None
                if tag == "SYL":
                    if args[2] not in ("0", "1", "2"):
                        raise LabelError(f"{where}: stress must be 0, 1 or 2")
                    stress = STRESS[int(args[2])]
                elif tag == "WRD":
                    if args[2] not in ("C", "F"):
                        raise LabelError(f"{where}: word class must be C or F")
                    word_class = "content" if args[2] == "C" else "function"
                mark_recs.append((kind, start, end, stress, word_class, lineno))
            else:
                raise LabelError(f"{where}: unknown record {tag!r}")
        except ValueError as exc:
            if isinstance(exc, LabelError):
                raise
            raise LabelError(f"{where}: {exc}") from None
    if not seg_recs:
        raise LabelError(f"{source}: no SEG records")

    segments = []
    pos = 0
    for pid, _start, end, lineno in seg_recs:
        end_f = _to_frame(end)
        if end_f <= pos:
            raise LabelError(f"{source}:{lineno}: segment collapses to zero frames on the 5 ms grid")
        segments.append(Segment(pid, pos, end_f - pos))
        pos = end_f

    marks = []
    for kind, start, end, stress, word_class, lineno in mark_recs:
        s, e = _to_frame(start), _to_frame(end)
        if e <= s:
            raise LabelError(f"{source}:{lineno}: {kind} mark collapses to zero frames")
        if s < 0 or e > pos:
            raise LabelError(f"{source}:{lineno}: {kind} mark outside the utterance")
        marks.append(Mark(kind, s, e, stress, word_class))
    marks.sort(key=lambda m: (MARK_KINDS.index(m.kind), m.start_frame))
    try:
        return Utterance(tuple(segments), tuple(marks))
    except LabelError as exc:
        raise LabelError(f"{source}: {exc}") from None


def parse_label_file(path, ps: PhoneSet) -> Utterance:
    path = Path(path)
    return parse_labels(path.read_text(encoding="utf-8"), ps, str(path))


def _ms(frames: int, frame_ms: float) -> str:
    return f"{frames * frame_ms:g}"


def serialize_labels(u: Utterance, ps: PhoneSet) -> str:
    """Canonical label text; parsing it reproduces ``u`` exactly."""
    fm = u.frame_ms
    lines = [f"SEG {ps.label_of(s.phone_id)} {_ms(s.start_frame, fm)} {_ms(s.dur_frames, fm)}" for s in u.segments]
    for m in u.marks:
        rec = f"{_KIND_RECORD[m.kind]} {_ms(m.start_frame, fm)} {_ms(m.end_frame, fm)}"
        if m.kind == "syllable":
            rec += f" {STRESS.index(m.stress or 'none')}"
        elif m.kind == "word":
            rec += " C" if m.word_class != "function" else " F"
        lines.append(rec)
    return "\n".join(lines) + "\n"


def utterance_from_phones(ps: PhoneSet, phones, dur_frames, marks=()) -> Utterance:
    segs = []
    pos = 0
    for label, d in zip(phones, dur_frames):
        segs.append(Segment(ps.id_of(label), pos, int(d)))
        pos += int(d)
    return Utterance(tuple(segs), tuple(marks))
