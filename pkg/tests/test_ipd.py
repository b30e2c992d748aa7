import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nafvdetect.ipd import IPV6_KEY_FLAG, IpBitmap, IpdCorruptError, IpdFormatError, byte_bit_offset, map_ipv6

ALL_ZERO_V6_DIGEST = 3971697493


def test_golden_offset():
    byte, bit = byte_bit_offset(1232040553)
    assert (byte, bit) == (154005069, 1)
    assert byte == 0x092DEE4D


@pytest.mark.parametrize("ip, expected", [(0, (0, 0)), (4294967295, (536870911, 7)), (7, (0, 7)), (8, (1, 0))])
def test_offset_edges(ip, expected):
    assert byte_bit_offset(ip) == expected


@given(st.integers(0, 2**32 - 1))
def test_offset_recombines(ip):
    byte, bit = byte_bit_offset(ip)
    assert 8 * byte + bit == ip and 0 <= bit < 8


def test_mark_sets_lsb_first_bit():
    bm = IpBitmap()
    bm.mark(1232040553)
    assert bm.is_marked(1232040553)
    assert 1232040553 in bm
    assert bm._array[0x092DEE4D] == 0b10


def test_fresh_bitmap_is_empty():
    bm = IpBitmap()
    assert bm.count_marked() == 0
    assert not any(bm.is_marked(x) for x in (0, 1, 2**31, 2**32 - 1))
    assert bm.mode == "ipv4-direct"


def test_count_marked_examples():
    bm = IpBitmap(16)
    for ip in (1, 2, 3):
        bm.mark(ip)
    assert bm.count_marked() == 3
    other = IpBitmap(16)
    other.mark(9)
    other.mark(9)
    assert other.count_marked() == 1 == len(other)


def test_unmark_transitions_only():
    bm = IpBitmap(12)
    bm.unmark(5)
    assert bm.count_marked() == 0
    bm.mark(5)
    bm.unmark(5)
    bm.unmark(5)
    assert bm.count_marked() == 0 and not bm.is_marked(5)


def test_map_ipv6_golden_and_deterministic():
    assert map_ipv6(bytes(16)) == ALL_ZERO_V6_DIGEST
    assert ALL_ZERO_V6_DIGEST == zlib.crc32(bytes(16))
    addr = "2001:db8::1"
    assert map_ipv6(addr) == map_ipv6(addr)
    assert map_ipv6(addr) == map_ipv6(0x20010DB8000000000000000000000001)


def test_map_ipv6_birthday_bound():
    rng = np.random.default_rng(3)
    n = 10**6
    raw = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    blob = raw.tobytes()
    digests = np.fromiter((map_ipv6(blob[i:i + 16]) for i in range(0, 16 * n, 16)), dtype=np.uint64, count=n)
    collisions = n - np.unique(digests).size
    expected = n * (n - 1) / 2 / 2**32
    # Poisson with mean ~116: six standard deviations either side
    assert abs(collisions - expected) < 6 * np.sqrt(expected)
    assert abs(collisions / n - 1.16e-4) < 7e-5


def test_hashed_mode_and_ipv6_keys():
    bm = IpBitmap(20)
    assert bm.mode == "hashed"
    key = IPV6_KEY_FLAG | map_ipv6("::1")
    bm.mark(key)
    assert bm.is_marked(key)
    assert bm.count_marked() == 1


@pytest.mark.parametrize("bits", [0, 33])
def test_bits_range(bits):
    with pytest.raises(ValueError):
        IpBitmap(bits)


@given(st.lists(st.tuples(st.sampled_from(["mark", "unmark", "check"]), st.integers(0, 4095)), max_size=300))
def test_matches_set_oracle(commands):
    bm, ref = IpBitmap(12), set()
    for op, ip in commands:
        if op == "mark":
            bm.mark(ip)
            ref.add(ip)
        elif op == "unmark":
            bm.unmark(ip)
            ref.discard(ip)
        else:
            assert bm.is_marked(ip) == (ip in ref)
    assert bm.count_marked() == len(ref) == bm.popcount()


def test_mark_unmark_half_oracle(rng):
    bm = IpBitmap()
    ips = np.unique(rng.integers(0, 2**32, size=10**5, dtype=np.uint64))
    for ip in ips.tolist():
        bm.mark(ip)
    for ip in ips[::2].tolist():
        bm.unmark(ip)
    ref = set(ips[1::2].tolist())
    probe = np.concatenate([ips, rng.integers(0, 2**32, size=1000, dtype=np.uint64)])
    assert [bm.is_marked(ip) for ip in probe.tolist()] == [ip in ref for ip in probe.tolist()]
    assert bm.count_marked() == len(ref) == bm.popcount()


def test_vectorised_paths_agree(rng):
    keys = rng.integers(0, 2**32, size=5000, dtype=np.uint64)
    keys = np.concatenate([keys, keys[:100]])
    a, b = IpBitmap(), IpBitmap()
    a.mark_many(keys)
    for key in keys.tolist():
        b.mark(key)
    assert a == b
    assert a.contains_many(keys).all()
    assert a.count_marked() == np.unique(keys).size


def test_freeze_blocks_writes():
    bm = IpBitmap(10)
    bm.mark(1)
    bm.freeze()
    assert bm.frozen
    with pytest.raises(ValueError):
        bm.mark(2)
    assert bm.is_marked(1)


@pytest.mark.parametrize("bits", [10, 32])
def test_snapshot_round_trip(tmp_path, bits):
    bm = IpBitmap(bits)
    for ip in (0, 1232040553, 2**32 - 1, 77):
        bm.mark(ip)
    path = tmp_path / "o.ipd"
    bm.save(path)
    with open(path, "rb") as fh:
        assert fh.read(8) == b"IPD1" + bits.to_bytes(4, "little")
    back = IpBitmap.load(path)
    assert back == bm
    assert back.mode == bm.mode
    back.mark(5)  # copy-on-write: the file is untouched
    assert IpBitmap.load(path) == bm


def test_snapshot_errors(tmp_path):
    bm = IpBitmap(10)
    bm.mark(3)
    path = tmp_path / "o.ipd"
    bm.save(path)
    data = path.read_bytes()
    (tmp_path / "short.ipd").write_bytes(data[:-10])
    with pytest.raises(IpdCorruptError):
        IpBitmap.load(tmp_path / "short.ipd")
    (tmp_path / "magic.ipd").write_bytes(b"XPD1" + data[4:])
    with pytest.raises(IpdFormatError):
        IpBitmap.load(tmp_path / "magic.ipd")
    (tmp_path / "bits.ipd").write_bytes(b"IPD1" + (40).to_bytes(4, "little") + data[8:])
    with pytest.raises(IpdFormatError):
        IpBitmap.load(tmp_path / "bits.ipd")
