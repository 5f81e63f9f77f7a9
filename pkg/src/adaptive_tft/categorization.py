"""End-pattern extraction, binary pattern keys and category grouping."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnpatternableError
from .segmentation import Subseries


@dataclass(frozen=True, order=True)
class PatternKey:
    """Up/down code of an end-pattern; earliest comparison is the MSB."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"bits must be 0/1, got {self.bits}")

    @property
    def as_int(self) -> int:
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    @property
    def p_len(self) -> int:
        return len(self.bits) + 1

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    @classmethod
    def from_int(cls, value: int, p_len: int) -> "PatternKey":
        width = p_len - 1
        if not 0 <= value < 2 ** width:
            raise ValueError(f"{value} outside the {width}-bit key space")
        return cls(tuple((value >> (width - 1 - j)) & 1 for j in range(width)))

    @classmethod
    def parse(cls, text: str) -> "PatternKey":
        return cls(tuple(int(c) for c in text.strip()))


def key_space(p_len: int) -> list[PatternKey]:
    return [PatternKey.from_int(i, p_len) for i in range(2 ** (p_len - 1))]


def extract_end_pattern(subseries: Subseries | np.ndarray, p_len: int) -> np.ndarray:
    values = subseries.values if isinstance(subseries, Subseries) else np.asarray(subseries)
    if len(values) < p_len:
        raise UnpatternableError(f"segment of length {len(values)} is shorter than p_len={p_len}")
    return np.asarray(values[len(values) - p_len:], dtype=float)


def encode_binary(pattern) -> PatternKey:
    v = np.asarray(pattern, dtype=float)
    if len(v) < 2:
        raise ValueError("a pattern needs at least 2 values")
    # ties count as an increase
    return PatternKey(tuple(int(b) for b in (v[1:] >= v[:-1])))


@dataclass
class CategoryDataset:
    key: PatternKey
    members: list[Subseries] = field(default_factory=list)

    def lengths(self) -> list[int]:
        return [len(m) for m in self.members]


@dataclass
class Grouping:
    categories: dict[PatternKey, CategoryDataset]
    skipped: int = 0

    def __getitem__(self, key: PatternKey) -> CategoryDataset:
        return self.categories[key]

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self):
        return iter(self.categories)

    def items(self):
        return self.categories.items()


def group_by_pattern(segments: list[Subseries], p_len: int) -> Grouping:
    """Assign each segment to the category named by its predecessor's end-pattern.

    The first segment never joins a category; successors of segments shorter
    than ``p_len`` are skipped and counted.
    """
    categories: dict[PatternKey, CategoryDataset] = {}
    skipped = 0
    for prev, nxt in zip(segments, segments[1:]):
        try:
            key = encode_binary(extract_end_pattern(prev, p_len))
        except UnpatternableError:
            skipped += 1
            continue
        categories.setdefault(key, CategoryDataset(key)).members.append(nxt)
    return Grouping(dict(sorted(categories.items())), skipped)


def format_category_report(grouping: Grouping) -> str:
    lines = ["key_bits,member_count,mean_length,min_length,max_length"]
    for key, ds in grouping.items():
        lengths = ds.lengths()
        lines.append(f"{key},{len(lengths)},{float(np.mean(lengths))!r},{min(lengths)},{max(lengths)}")
    return "\n".join(lines) + "\n"


def write_category_report(grouping: Grouping, path: str | Path) -> None:
    Path(path).write_text(format_category_report(grouping))
