"""Many-to-one flow filter.

Packets of a window are grouped into (source, destination) classes, then two
delete rules run once each, in order:

1. a source talking to two or more distinct destinations loses all its classes;
2. a destination left with classes from a single source loses that class.

What remains is traffic where every surviving source has exactly one
destination and every surviving destination has at least two sources.
Ports play no part in the grouping.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .ingest import WindowSample


@dataclass(frozen=True, slots=True)
class FlowClass:
    src_ip: int
    dst_ip: int
    packet_count: int


@dataclass(frozen=True)
class FilteredWindow:
    index: int
    start: float
    classes: tuple[FlowClass, ...] = ()
    access_counts: dict[int, int] = field(default_factory=dict)


def classify(window: WindowSample) -> list[FlowClass]:
    pairs = Counter((r.src_ip, r.dst_ip) for r in window.records)
    return [FlowClass(s, d, c) for (s, d), c in sorted(pairs.items())]


def is_many_to_one(classes: Iterable[FlowClass]) -> bool:
    dests_of: dict[int, set[int]] = defaultdict(set)
    srcs_of: dict[int, set[int]] = defaultdict(set)
    for c in classes:
        dests_of[c.src_ip].add(c.dst_ip)
        srcs_of[c.dst_ip].add(c.src_ip)
    return all(len(d) == 1 for d in dests_of.values()) and all(len(s) >= 2 for s in srcs_of.values())


def apply_delete_rules(classes: Iterable[FlowClass], index: int = 0, start: float = 0.0) -> FilteredWindow:
    classes = list(classes)
    fan_out: dict[int, set[int]] = defaultdict(set)
    for c in classes:
        fan_out[c.src_ip].add(c.dst_ip)
    kept = [c for c in classes if len(fan_out[c.src_ip]) == 1]

    fan_in: dict[int, set[int]] = defaultdict(set)
    for c in kept:
        fan_in[c.dst_ip].add(c.src_ip)
    kept = [c for c in kept if len(fan_in[c.dst_ip]) >= 2]

    assert is_many_to_one(kept), "delete rules left a non many-to-one class"
    counts: dict[int, int] = {}
    for c in kept:
        counts[c.src_ip] = counts.get(c.src_ip, 0) + c.packet_count
    return FilteredWindow(index, start, tuple(kept), counts)


def filter_window(window: WindowSample) -> FilteredWindow:
    return apply_delete_rules(classify(window), window.index, window.start)


# -- columnar path ------------------------------------------------------------
# Keys pack (window, address) into one int64: k << 33 | key. Address keys use
# at most 33 bits (IPv6 digests carry the 2**32 flag), so k may reach 2**30.

_SHIFT = np.int64(33)


def _pack(k: np.ndarray, key: np.ndarray) -> np.ndarray:
    return (k.astype(np.int64) << _SHIFT) | key.astype(np.int64)


@dataclass(frozen=True)
class ClassTable:
    """Flow classes of many windows, sorted by (k, src, dst)."""

    k: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    count: np.ndarray
    n_windows: int

    def __len__(self) -> int:
        return int(self.k.size)


@dataclass(frozen=True)
class SourceTable:
    """Per-window access counts: one row per (k, src), sorted by (k, src)."""

    k: np.ndarray
    src: np.ndarray
    count: np.ndarray
    n_windows: int

    def __len__(self) -> int:
        return int(self.k.size)

    def window(self, k: int) -> dict[int, int]:
        lo, hi = np.searchsorted(self.k, [k, k + 1])
        return dict(zip(self.src[lo:hi].tolist(), self.count[lo:hi].tolist()))


def _group_starts(*cols: np.ndarray) -> np.ndarray:
    n = cols[0].size
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    change = np.zeros(n, dtype=bool)
    change[0] = True
    for c in cols:
        change[1:] |= c[1:] != c[:-1]
    return np.flatnonzero(change)


def classify_table(k: np.ndarray, src: np.ndarray, dst: np.ndarray, n_windows: int | None = None) -> ClassTable:
    ksrc = _pack(k, src)
    dst = np.asarray(dst, dtype=np.uint64)
    order = np.lexsort((dst, ksrc))
    ksrc, dst_s = ksrc[order], dst[order]
    starts = _group_starts(ksrc, dst_s)
    counts = np.diff(np.append(starts, ksrc.size))
    ks = ksrc[starts]
    if n_windows is None:
        n_windows = int(k.max()) + 1 if k.size else 0
    return ClassTable(
        ks >> _SHIFT,
        (ks & ((np.int64(1) << _SHIFT) - 1)).astype(np.uint64),
        dst_s[starts],
        counts.astype(np.int64),
        n_windows,
    )


def delete_rules_table(ct: ClassTable) -> ClassTable:
    if len(ct) == 0:
        return ct
    # rule 1: rows are sorted by (k, src), so fan-out is a run length
    ksrc = _pack(ct.k, ct.src)
    starts = _group_starts(ksrc)
    runs = np.diff(np.append(starts, ksrc.size))
    fan_out = np.repeat(runs, runs)
    keep = fan_out == 1
    k, src, dst, count = ct.k[keep], ct.src[keep], ct.dst[keep], ct.count[keep]
    # rule 2: surviving sources are unique per window, so fan-in = class count
    _, inverse, fan_in = np.unique(_pack(k, dst), return_inverse=True, return_counts=True)
    keep = fan_in[inverse] >= 2
    return ClassTable(k[keep], src[keep], dst[keep], count[keep], ct.n_windows)


def source_table(ct: ClassTable) -> SourceTable:
    """Sum class packet counts per (k, src)."""
    if len(ct) == 0:
        return SourceTable(ct.k, ct.src, ct.count, ct.n_windows)
    ksrc = _pack(ct.k, ct.src)
    starts = _group_starts(ksrc)
    counts = np.add.reduceat(ct.count, starts) if starts.size else ct.count
    return SourceTable(ct.k[starts], ct.src[starts], counts.astype(np.int64), ct.n_windows)
