"""Packet flow records: CSV parsing and unit-time windowing.

Input lines are ``timestamp_us,src_ip,dst_ip,dst_port``. Timestamps are
integer microseconds since stream start; addresses are dotted-quad IPv4 or
colon-hex IPv6. A leading header line and blank lines are skipped, and files
ending in ``.gz`` are decompressed transparently.

Addresses are carried as integer *keys*: an IPv4 address is its own value,
an IPv6 address becomes ``IPV6_KEY_FLAG | map_ipv6(addr)``.
"""
from __future__ import annotations

import gzip
import io
import ipaddress
import os
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .ipd import IPV6_KEY_FLAG, map_ipv6

HEADER_LINE = "timestamp_us,src_ip,dst_ip,dst_port"
FIELDS = ("timestamp_us", "src_ip", "dst_ip", "dst_port")


class FlowParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, field: int | None = None):
        self.lineno = lineno
        self.field = field
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if field is not None:
            where.append(f"field {field} ({FIELDS[field - 1]})")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp_us: int
    src_ip: int
    dst_ip: int
    dst_port: int

    @property
    def timestamp(self) -> float:
        return self.timestamp_us / 1e6


@dataclass(frozen=True)
class SamplingConfig:
    unit_time: float = 0.8
    role: str = "detection-stream"

    def __post_init__(self):
        if not self.unit_time > 0:
            raise ValueError(f"unit_time must be positive, got {self.unit_time}")
        if self.unit_us < 1:
            raise ValueError(f"unit_time {self.unit_time} is below microsecond resolution")
        if self.role not in ("training-stream", "detection-stream"):
            raise ValueError(f"unknown stream role {self.role!r}")

    @property
    def unit_us(self) -> int:
        return int(round(self.unit_time * 1e6))


@dataclass(frozen=True)
class WindowSample:
    index: int
    start: float
    records: tuple[PacketRecord, ...] = ()
    access_counts: dict[int, int] = field(default_factory=dict)


def parse_address(text: str, lineno: int | None = None, fieldno: int | None = None) -> int:
    try:
        if ":" in text:
            return IPV6_KEY_FLAG | map_ipv6(ipaddress.IPv6Address(text))
        return int(ipaddress.IPv4Address(text))
    except ValueError as exc:
        raise FlowParseError(f"invalid address {text!r}", lineno, fieldno) from exc


def format_address(key: int) -> str:
    if key >= IPV6_KEY_FLAG:
        raise ValueError("hashed IPv6 keys cannot be written back as addresses")
    return str(ipaddress.IPv4Address(key))


def parse_flow_record(line: str, lineno: int | None = None) -> PacketRecord:
    parts = line.strip().split(",")
    if len(parts) != 4:
        raise FlowParseError(f"expected 4 comma-separated fields, got {len(parts)}", lineno)
    ts_text, src_text, dst_text, port_text = (p.strip() for p in parts)
    if not ts_text.isdigit():
        raise FlowParseError(f"invalid timestamp {ts_text!r}", lineno, 1)
    src = parse_address(src_text, lineno, 2)
    dst = parse_address(dst_text, lineno, 3)
    if not port_text.isdigit():
        raise FlowParseError(f"invalid port {port_text!r}", lineno, 4)
    port = int(port_text)
    if port > 0xFFFF:
        raise FlowParseError(f"port {port} out of range", lineno, 4)
    return PacketRecord(int(ts_text), src, dst, port)


def _open_text(path: str | os.PathLike) -> IO[str]:
    if os.fspath(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="ascii", newline="")
    return open(path, "r", encoding="ascii", newline="")


def _is_header(line: str) -> bool:
    stripped = line.lstrip()
    return bool(stripped) and not stripped[0].isdigit()


def iter_flow_records(lines: Iterable[str]) -> Iterator[PacketRecord]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if lineno == 1 and _is_header(line):
            continue
        yield parse_flow_record(line, lineno)


def read_flow_records(path: str | os.PathLike) -> list[PacketRecord]:
    with _open_text(path) as fh:
        return list(iter_flow_records(fh))


def window_stream(records: Iterable[PacketRecord], cfg: SamplingConfig) -> list[WindowSample]:
    """Bucket records into windows ``k = floor(t / unit_time)``.

    Windows are emitted from 0 to the last occupied index, empty ones
    included, so downstream series are evenly spaced.
    """
    unit_us = cfg.unit_us
    buckets: dict[int, list[PacketRecord]] = {}
    last = -1
    reordered = 0
    for rec in records:
        if rec.timestamp_us < last:
            reordered += 1
        last = max(last, rec.timestamp_us)
        buckets.setdefault(rec.timestamp_us // unit_us, []).append(rec)
    if reordered:
        warnings.warn(f"{reordered} records arrived out of timestamp order; bucketed by value")
    if not buckets:
        return []
    windows = []
    for k in range(max(buckets) + 1):
        recs = tuple(buckets.get(k, ()))
        counts = Counter(r.src_ip for r in recs)
        windows.append(WindowSample(k, k * unit_us / 1e6, recs, dict(counts)))
    return windows


# -- columnar path ------------------------------------------------------------


@dataclass(frozen=True)
class FlowTable:
    """Column-oriented packet records; the bulk ingestion format."""

    ts_us: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    port: np.ndarray

    def __len__(self) -> int:
        return int(self.ts_us.size)

    @classmethod
    def empty(cls) -> "FlowTable":
        return cls(
            np.zeros(0, np.int64), np.zeros(0, np.uint64), np.zeros(0, np.uint64), np.zeros(0, np.uint16)
        )

    @classmethod
    def from_records(cls, records: Sequence[PacketRecord]) -> "FlowTable":
        if not records:
            return cls.empty()
        return cls(
            np.fromiter((r.timestamp_us for r in records), np.int64, len(records)),
            np.fromiter((r.src_ip for r in records), np.uint64, len(records)),
            np.fromiter((r.dst_ip for r in records), np.uint64, len(records)),
            np.fromiter((r.dst_port for r in records), np.uint16, len(records)),
        )

    def records(self) -> Iterator[PacketRecord]:
        for t, s, d, p in zip(self.ts_us.tolist(), self.src.tolist(), self.dst.tolist(), self.port.tolist()):
            yield PacketRecord(t, s, d, p)

    def window_index(self, cfg: SamplingConfig) -> np.ndarray:
        return self.ts_us // cfg.unit_us

    def n_windows(self, cfg: SamplingConfig) -> int:
        if len(self) == 0:
            return 0
        return int(self.ts_us.max() // cfg.unit_us) + 1

    def check_order(self) -> None:
        if self.ts_us.size > 1:
            reordered = int(np.count_nonzero(np.diff(self.ts_us) < 0))
            if reordered:
                warnings.warn(f"{reordered} records arrived out of timestamp order; bucketed by value")


def _fast_parse(data: bytes) -> FlowTable | None:
    """Vectorised parse of an all-IPv4 file; None means use the line parser."""
    if b":" in data:
        return None
    body = data
    first_nl = data.find(b"\n")
    first = data[: first_nl if first_nl >= 0 else len(data)]
    if first.strip() and not first.lstrip()[:1].isdigit():
        body = data[first_nl + 1:] if first_nl >= 0 else b""
    if not body.strip():
        return FlowTable.empty()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cols = np.loadtxt(io.BytesIO(body.replace(b".", b",")), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        return None
    if cols.shape[1] != 10:
        return None
    octets = cols[:, 1:9]
    if (cols[:, 0] < 0).any() or (octets < 0).any() or (octets > 255).any():
        return None
    if (cols[:, 9] < 0).any() or (cols[:, 9] > 0xFFFF).any():
        return None
    o = octets.astype(np.uint64)
    src = (o[:, 0] << np.uint64(24)) | (o[:, 1] << np.uint64(16)) | (o[:, 2] << np.uint64(8)) | o[:, 3]
    dst = (o[:, 4] << np.uint64(24)) | (o[:, 5] << np.uint64(16)) | (o[:, 6] << np.uint64(8)) | o[:, 7]
    return FlowTable(cols[:, 0].copy(), src, dst, cols[:, 9].astype(np.uint16))


def parse_flow_bytes(data: bytes) -> FlowTable:
    table = _fast_parse(data)
    if table is None:
        # slow path: exact error location, IPv6 support
        text = data.decode("ascii", errors="replace")
        table = FlowTable.from_records(list(iter_flow_records(text.splitlines())))
    table.check_order()
    return table


def read_flow_table(path: str | os.PathLike) -> FlowTable:
    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    return parse_flow_bytes(data)


def write_flow_table(table: FlowTable, path: str | os.PathLike) -> None:
    cache: dict[int, str] = {}

    def fmt(key: int) -> str:
        text = cache.get(key)
        if text is None:
            if key >= IPV6_KEY_FLAG:
                raise ValueError("hashed IPv6 keys cannot be written back as addresses")
            text = cache[key] = f"{key >> 24}.{(key >> 16) & 255}.{(key >> 8) & 255}.{key & 255}"
        return text

    ts = table.ts_us.tolist()
    src = [fmt(x) for x in table.src.tolist()]
    dst = [fmt(x) for x in table.dst.tolist()]
    lines = [HEADER_LINE]
    lines.extend(f"{t},{s},{d},{p}" for t, s, d, p in zip(ts, src, dst, table.port.tolist()))
    payload = ("\n".join(lines) + "\n").encode("ascii")
    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    if opener is gzip.open:
        # mtime pinned so repeated runs give identical bytes
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
