"""Phone inventory and articulatory feature table."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

PAD_LABEL = "pau"
# "#" opens a comment only at line start or after whitespace, so "h#" stays a label
_COMMENT = re.compile(r"(^|\s)#.*$")


class PhoneSetError(ValueError):
    """Raised for malformed or inconsistent phone tables."""


@dataclass(frozen=True)
class Phone:
    id: int
    label: str
    features: np.ndarray


@dataclass(frozen=True)
class PhoneSet:
    """Ordered phone inventory; index 0 is the padding phone."""

    phones: tuple[Phone, ...]
    _by_label: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.phones:
            raise PhoneSetError("empty phone set")
        if self.phones[0].label != PAD_LABEL:
            raise PhoneSetError(f"first phone must be {PAD_LABEL!r}, got {self.phones[0].label!r}")
        n_feat = len(self.phones[0].features)
        by_label = {}
        for i, ph in enumerate(self.phones):
            if ph.id != i:
                raise PhoneSetError(f"phone {ph.label!r} has id {ph.id}, expected {i}")
            if ph.label in by_label:
                raise PhoneSetError(f"duplicate label {ph.label!r}")
            if len(ph.features) != n_feat:
                raise PhoneSetError(f"phone {ph.label!r} has {len(ph.features)} features, expected {n_feat}")
            by_label[ph.label] = i
        object.__setattr__(self, "_by_label", by_label)
        table = np.array([ph.features for ph in self.phones], dtype=np.float64).reshape(len(self.phones), n_feat)
        table.setflags(write=False)
        object.__setattr__(self, "_table", table)

    @property
    def n_phones(self) -> int:
        return len(self.phones)

    @property
    def n_features(self) -> int:
        return self._table.shape[1]

    @property
    def labels(self) -> list[str]:
        return [ph.label for ph in self.phones]

    @property
    def feature_table(self) -> np.ndarray:
        """Read-only ``(n_phones, n_features)`` array."""
        return self._table

    def id_of(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise PhoneSetError(f"unknown phone label {label!r}") from None

    def label_of(self, id: int) -> str:
        self._check_id(id)
        return self.phones[id].label

    def __contains__(self, label) -> bool:
        return label in self._by_label

    def _check_id(self, id):
        if not (0 <= id < self.n_phones):
            raise IndexError(f"phone id {id} out of range [0, {self.n_phones})")


def one_hot(ps: PhoneSet, id: int) -> np.ndarray:
    ps._check_id(id)
    v = np.zeros(ps.n_phones)
    v[id] = 1.0
    return v


def features_of(ps: PhoneSet, id: int) -> np.ndarray:
    ps._check_id(id)
    return ps.feature_table[id].copy()


def parse_phoneset(text: str, source: str = "<string>") -> PhoneSet:
    """Parse the phone table text format.

    Each data line is ``label f1 ... fF``; ``#`` starts a comment. The first
    data line fixes ``F`` and must be the padding phone.
    """
    phones = []
    n_feat = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub("", raw).strip()
        if not line:
            continue
        label, *vals = line.split()
        try:
            feats = np.array([float(v) for v in vals])
        except ValueError as exc:
            raise PhoneSetError(f"{source}:{lineno}: bad feature value ({exc})") from None
        if n_feat is None:
            n_feat = len(feats)
        elif len(feats) != n_feat:
            raise PhoneSetError(f"{source}:{lineno}: ragged row, {len(feats)} features where {n_feat} expected")
        if not np.all(np.isfinite(feats)):
            raise PhoneSetError(f"{source}:{lineno}: non-finite feature")
        if any(p.label == label for p in phones):
            raise PhoneSetError(f"{source}:{lineno}: duplicate label {label!r}")
        feats.setflags(write=False)
        phones.append(Phone(len(phones), label, feats))
    return PhoneSet(tuple(phones))


def load_phoneset(path=None) -> PhoneSet:
    """Load a phone table from ``path``, or the bundled TIMIT table if None."""
    if path is None:
        text = resources.files("rtdnn.data").joinpath("timit.phones").read_text(encoding="utf-8")
        return parse_phoneset(text, "timit.phones")
    path = Path(path)
    return parse_phoneset(path.read_text(encoding="utf-8"), str(path))


def default_phoneset() -> PhoneSet:
    return load_phoneset(None)
