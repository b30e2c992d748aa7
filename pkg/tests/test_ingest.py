import gzip
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nafvdetect.ingest import (
    FlowParseError,
    FlowTable,
    PacketRecord,
    SamplingConfig,
    format_address,
    iter_flow_records,
    parse_flow_bytes,
    parse_flow_record,
    read_flow_records,
    read_flow_table,
    window_stream,
    write_flow_table,
)
from nafvdetect.ipd import IPV6_KEY_FLAG, map_ipv6


def rec(t_us, src, dst=1, port=80):
    return PacketRecord(t_us, src, dst, port)


def test_parse_reference_line():
    r = parse_flow_record("800000,73.111.114.105,10.0.0.1,80")
    assert r.timestamp == 0.8
    assert (r.src_ip, r.dst_ip, r.dst_port) == (1232040553, 0x0A000001, 80)


def test_parse_zero_line():
    assert parse_flow_record("0,0.0.0.0,0.0.0.0,0") == PacketRecord(0, 0, 0, 0)


def test_bad_octet_names_field_three():
    with pytest.raises(FlowParseError) as err:
        parse_flow_record("123,1.2.3.4,5.6.7.300,80", lineno=4)
    assert err.value.field == 3 and err.value.lineno == 4
    assert "line 4" in str(err.value) and "field 3" in str(err.value)


@pytest.mark.parametrize(
    "line, field",
    [
        ("1,1.2.3.4,5.6.7.8,65536", 4),
        ("1,1.2.3.4,5.6.7.8,-1", 4),
        ("x,1.2.3.4,5.6.7.8,80", 1),
        ("-5,1.2.3.4,5.6.7.8,80", 1),
        ("1,1.2.3,5.6.7.8,80", 2),
    ],
)
def test_field_errors(line, field):
    with pytest.raises(FlowParseError) as err:
        parse_flow_record(line)
    assert err.value.field == field


def test_wrong_field_count():
    with pytest.raises(FlowParseError):
        parse_flow_record("1,1.2.3.4,5.6.7.8")


def test_ipv6_address_becomes_flagged_key():
    r = parse_flow_record("5,2001:db8::1,10.0.0.1,443")
    assert r.src_ip == IPV6_KEY_FLAG | map_ipv6("2001:db8::1")
    assert format_address(r.dst_ip) == "10.0.0.1"


def test_header_and_blank_lines_skipped():
    lines = ["timestamp_us,src_ip,dst_ip,dst_port", "", "1,1.1.1.1,2.2.2.2,80", "  ", "2,1.1.1.1,2.2.2.2,80"]
    assert len(list(iter_flow_records(lines))) == 2


def test_windows_by_floor_division():
    records = [rec(100_000, 1), rec(900_000, 2), rec(1_700_000, 3)]
    windows = window_stream(records, SamplingConfig(0.8))
    assert [w.index for w in windows] == [0, 1, 2]
    assert [[r.timestamp for r in w.records] for w in windows] == [[0.1], [0.9], [1.7]]


def test_empty_input():
    assert window_stream([], SamplingConfig()) == []


def test_access_counts():
    records = [rec(1, 0xA), rec(2, 0xA), rec(3, 0xA), rec(4, 0xB)]
    (w,) = window_stream(records, SamplingConfig())
    assert w.access_counts == {0xA: 3, 0xB: 1}


def test_gaps_emit_empty_windows():
    windows = window_stream([rec(0, 1), rec(4_000_000, 2)], SamplingConfig(1.0))
    assert [len(w.records) for w in windows] == [1, 0, 0, 0, 1]
    assert windows[2].start == 2.0 and windows[2].access_counts == {}


def test_out_of_order_warns_and_buckets_by_value():
    with pytest.warns(UserWarning):
        windows = window_stream([rec(1_000_000, 1), rec(10, 2)], SamplingConfig(0.8))
    assert windows[0].access_counts == {2: 1}
    assert windows[1].access_counts == {1: 1}


def test_unit_time_must_be_positive():
    with pytest.raises(ValueError):
        SamplingConfig(0)


record_lists = st.lists(
    st.builds(rec, st.integers(0, 20_000_000), st.integers(0, 50), st.integers(0, 5)), max_size=80
)


@given(record_lists, st.sampled_from([0.1, 0.8, 1.0, 3.3]))
def test_partition_properties(records, unit_time):
    records = sorted(records, key=lambda r: r.timestamp_us)
    cfg = SamplingConfig(unit_time)
    windows = window_stream(records, cfg)
    assert sum(len(w.records) for w in windows) == len(records)
    for w in windows:
        for r in w.records:
            assert r.timestamp_us // cfg.unit_us == w.index
            assert w.start <= r.timestamp + 1e-9 < w.start + unit_time + 1e-9
        assert w.access_counts == dict(Counter(r.src_ip for r in w.records))
        assert sum(w.access_counts.values()) == len(w.records)
    assert [w.index for w in windows] == list(range(len(windows)))


@given(record_lists)
def test_table_matches_record_path(records):
    records = sorted(records, key=lambda r: r.timestamp_us)
    table = FlowTable.from_records(records)
    assert list(table.records()) == records
    cfg = SamplingConfig(0.8)
    assert table.n_windows(cfg) == len(window_stream(records, cfg))


def test_file_round_trip(tmp_path, rng):
    n = 500
    table = FlowTable(
        np.sort(rng.integers(0, 10**7, n)).astype(np.int64),
        rng.integers(0, 2**32, n, dtype=np.uint64),
        rng.integers(0, 2**32, n, dtype=np.uint64),
        rng.integers(0, 65536, n).astype(np.uint16),
    )
    for name in ("f.csv", "f.csv.gz"):
        write_flow_table(table, tmp_path / name)
        back = read_flow_table(tmp_path / name)
        for col in ("ts_us", "src", "dst", "port"):
            assert np.array_equal(getattr(back, col), getattr(table, col))
    assert read_flow_records(tmp_path / "f.csv.gz") == list(table.records())
    with gzip.open(tmp_path / "f.csv.gz", "rt") as fh:
        assert fh.readline().strip() == "timestamp_us,src_ip,dst_ip,dst_port"


def test_fast_and_slow_parse_agree():
    text = "timestamp_us,src_ip,dst_ip,dst_port\n1,1.2.3.4,5.6.7.8,80\n2,9.9.9.9,5.6.7.8,443\n"
    fast = parse_flow_bytes(text.encode())
    slow = parse_flow_bytes((text + "3,::1,5.6.7.8,53\n").encode())
    assert np.array_equal(fast.src, slow.src[:2])
    assert slow.src[2] == IPV6_KEY_FLAG | map_ipv6("::1")


def test_table_parse_error_reports_line():
    with pytest.raises(FlowParseError) as err:
        parse_flow_bytes(b"1,1.2.3.4,5.6.7.8,80\n2,1.2.3.4,5.6.7.999,80\n")
    assert err.value.lineno == 2 and err.value.field == 3
