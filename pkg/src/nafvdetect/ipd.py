"""Bit-per-address membership store for IP addresses (the old-user database).

Addresses are addressed by byte and bit offset: ``byte = ip // 8`` and
``bit = ip % 8``, with bit 0 being the least-significant bit of the byte.

Two layouts share the same class:

* ``ipv4-direct`` (``bits == 32``): one bit per IPv4 address, 512 MiB backing.
  The array is allocated with ``np.zeros`` so the OS hands out zero pages
  lazily and untouched regions cost nothing.
* ``hashed`` (``bits < 32``): keys are run through the murmur3 32-bit
  finalizer and masked to ``bits`` bits. Used for small test bitmaps.

IPv6 addresses never reach the bitmap directly: ingestion turns them into
32-bit digests with :func:`map_ipv6` (CRC-32 of the 16 address bytes) and
tags the key with :data:`IPV6_KEY_FLAG`. The flag is dropped on lookup.
"""
from __future__ import annotations

import ipaddress
import os
import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"IPD1"
HEADER = struct.Struct("<4sI")
IPV6_KEY_FLAG = 1 << 32
_MASK32 = 0xFFFFFFFF
_SPARSE_CHUNK = 1 << 20

Ipv6Like = Union[int, bytes, ipaddress.IPv6Address, str]


class IpdFormatError(ValueError):
    """Snapshot has a wrong magic or an unsupported bit width."""


class IpdCorruptError(ValueError):
    """Snapshot is truncated or otherwise unreadable."""


def byte_bit_offset(ip: int) -> tuple[int, int]:
    return ip >> 3, ip & 7


def map_ipv6(addr: Ipv6Like) -> int:
    """Deterministic 32-bit digest of an IPv6 address (CRC-32, zlib polynomial).

    The digest of ``::`` is 3971697493.
    """
    if isinstance(addr, str):
        addr = ipaddress.IPv6Address(addr)
    if isinstance(addr, ipaddress.IPv6Address):
        raw = addr.packed
    elif isinstance(addr, int):
        if not 0 <= addr < 1 << 128:
            raise ValueError(f"not a 128-bit address: {addr}")
        raw = addr.to_bytes(16, "big")
    else:
        raw = bytes(addr)
        if len(raw) != 16:
            raise ValueError("IPv6 address must be 16 bytes")
    return zlib.crc32(raw) & _MASK32


def fmix32(h: int) -> int:
    h &= _MASK32
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _MASK32
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _MASK32
    h ^= h >> 16
    return h


def _fmix32_array(h: np.ndarray) -> np.ndarray:
    h = h.astype(np.uint64) & _MASK32
    h ^= h >> np.uint64(16)
    h = (h * np.uint64(0x85EBCA6B)) & np.uint64(_MASK32)
    h ^= h >> np.uint64(13)
    h = (h * np.uint64(0xC2B2AE35)) & np.uint64(_MASK32)
    h ^= h >> np.uint64(16)
    return h


class IpBitmap:
    """Set of IP address keys stored as a bit array of ``2**bits`` bits.

    Reads may run concurrently; writes must be exclusive. :meth:`freeze`
    makes the array read-only once training is over.
    """

    def __init__(self, bits: int = 32):
        if not 1 <= bits <= 32:
            raise ValueError(f"bits must be in 1..32, got {bits}")
        self.bits = bits
        self.mode = "ipv4-direct" if bits == 32 else "hashed"
        self._mask = (1 << bits) - 1
        self._array = np.zeros(max(1, (1 << bits) >> 3), dtype=np.uint8)
        self._count = 0

    # -- addressing ---------------------------------------------------------

    def index(self, key: int) -> int:
        key &= _MASK32
        if self.mode == "ipv4-direct":
            return key
        return fmix32(key) & self._mask

    def index_many(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.uint64) & np.uint64(_MASK32)
        if self.mode == "ipv4-direct":
            return keys
        return _fmix32_array(keys) & np.uint64(self._mask)

    # -- scalar operations --------------------------------------------------

    def mark(self, key: int) -> None:
        byte, bit = byte_bit_offset(self.index(key))
        old = int(self._array[byte])
        new = old | (1 << bit)
        if new != old:
            self._array[byte] = new
            self._count += 1

    def unmark(self, key: int) -> None:
        byte, bit = byte_bit_offset(self.index(key))
        old = int(self._array[byte])
        new = old & ~(1 << bit) & 0xFF
        if new != old:
            self._array[byte] = new
            self._count -= 1

    def is_marked(self, key: int) -> bool:
        byte, bit = byte_bit_offset(self.index(key))
        return bool((int(self._array[byte]) >> bit) & 1)

    __contains__ = is_marked

    def count_marked(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    # -- vectorised operations ----------------------------------------------

    def contains_many(self, keys: np.ndarray) -> np.ndarray:
        idx = self.index_many(keys)
        byte = (idx >> np.uint64(3)).astype(np.intp)
        bit = (idx & np.uint64(7)).astype(np.uint8)
        return ((self._array[byte] >> bit) & 1).astype(bool)

    def mark_many(self, keys: np.ndarray) -> None:
        idx = np.unique(self.index_many(keys))
        if idx.size == 0:
            return
        fresh = idx[~self._test_indices(idx)]
        byte = (fresh >> np.uint64(3)).astype(np.intp)
        bit = (fresh & np.uint64(7)).astype(np.uint8)
        # np.bitwise_or.at handles several bits landing in one byte
        np.bitwise_or.at(self._array, byte, (np.uint8(1) << bit).astype(np.uint8))
        self._count += int(fresh.size)

    def _test_indices(self, idx: np.ndarray) -> np.ndarray:
        byte = (idx >> np.uint64(3)).astype(np.intp)
        bit = (idx & np.uint64(7)).astype(np.uint8)
        return ((self._array[byte] >> bit) & 1).astype(bool)

    # -- housekeeping -------------------------------------------------------

    def popcount(self) -> int:
        """Full scan of the bit array; O(size), used to audit ``count_marked``."""
        arr = self._array
        whole = arr.size - arr.size % 8
        total = int(np.bitwise_count(arr[:whole].view(np.uint64)).sum(dtype=np.int64))
        if whole < arr.size:
            total += int(np.bitwise_count(arr[whole:]).sum())
        return total

    def freeze(self) -> "IpBitmap":
        self._array.flags.writeable = False
        return self

    @property
    def frozen(self) -> bool:
        return not self._array.flags.writeable

    def copy(self) -> "IpBitmap":
        other = IpBitmap.__new__(IpBitmap)
        other.bits, other.mode, other._mask = self.bits, self.mode, self._mask
        other._array = self._array.copy()
        other._count = self._count
        return other

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IpBitmap):
            return NotImplemented
        if self.bits != other.bits or self._count != other._count:
            return False
        a, b = self._array, other._array
        # chunked so comparing two direct-mode bitmaps never builds a 512 MiB temporary
        return all(
            np.array_equal(a[i:i + _SPARSE_CHUNK], b[i:i + _SPARSE_CHUNK]) for i in range(0, a.size, _SPARSE_CHUNK)
        )

    def __repr__(self) -> str:
        return f"IpBitmap(bits={self.bits}, mode={self.mode!r}, marked={self._count})"

    # -- snapshot format ----------------------------------------------------
    # 8-byte header (magic "IPD1", uint32 LE bit width) followed by the raw
    # bit array. All-zero regions are written as file holes.

    def save(self, path: str | os.PathLike) -> None:
        arr = self._array
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, self.bits))
            base = HEADER.size
            for start in range(0, arr.size, _SPARSE_CHUNK):
                chunk = arr[start:start + _SPARSE_CHUNK]
                if chunk.any():
                    fh.seek(base + start)
                    fh.write(chunk.tobytes())
            fh.truncate(base + arr.size)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IpBitmap":
        path = Path(path)
        try:
            size = path.stat().st_size
            with open(path, "rb") as fh:
                head = fh.read(HEADER.size)
        except OSError as exc:
            raise IpdCorruptError(f"cannot read IPD snapshot {path}: {exc}") from exc
        if len(head) < HEADER.size:
            raise IpdCorruptError(f"IPD snapshot {path} is truncated (no header)")
        magic, bits = HEADER.unpack(head)
        if magic != MAGIC:
            raise IpdFormatError(f"IPD snapshot {path} has magic {magic!r}, expected {MAGIC!r}")
        if not 1 <= bits <= 32:
            raise IpdFormatError(f"IPD snapshot {path} declares unsupported width {bits}")
        nbytes = max(1, (1 << bits) >> 3)
        if size != HEADER.size + nbytes:
            raise IpdCorruptError(
                f"IPD snapshot {path} holds {size - HEADER.size} bytes, expected {nbytes}"
            )
        bitmap = cls.__new__(cls)
        bitmap.bits = bits
        bitmap.mode = "ipv4-direct" if bits == 32 else "hashed"
        bitmap._mask = (1 << bits) - 1
        # copy-on-write map: pages of a sparse snapshot stay unmaterialised
        bitmap._array = np.memmap(path, dtype=np.uint8, mode="c", offset=HEADER.size, shape=(nbytes,))
        bitmap._count = bitmap.popcount()
        return bitmap
