import io
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from encounter_atlas import cdr as cdr_mod
from encounter_atlas.cdr import (
    CallRecord,
    CdrError,
    CdrFrame,
    Tower,
    TowerError,
    format_record,
    load_towers,
    parse_cdr,
    read_cdr_frame,
    write_cdr,
    write_towers,
)


def test_single_line_maps_fields():
    records, issues = parse_cdr(b"A,B,T1,1467331200,1467331260\n")
    assert records == [CallRecord("A", "B", "T1", 1467331200, 1467331260)]
    assert issues == []


def test_self_loop_is_an_issue():
    records, issues = parse_cdr(b"A,A,T1,1467331200,1467331260\n")
    assert records == []
    assert [i.reason for i in issues] == ["self-loop rejected"]
    assert issues[0].line == 1


def test_ten_thousand_lines_with_three_corrupt():
    rng = random.Random(7)
    lines = [f"U{rng.randrange(50)},V{k},T{k % 9},{1000 + k},{1060 + k}" for k in range(10_000)]
    corrupt = {17: "U1,V1,T1,abc,10", 5000: "U2,V2,T2,20,10", 9999: "only,three,fields"}
    for idx, text in corrupt.items():
        lines[idx] = text
    data = ("\n".join(lines) + "\n").encode()
    for parse in (parse_cdr, lambda d: (lambda f: (f.to_records(), f.issues))(read_cdr_frame(d))):
        records, issues = parse(data)
        assert len(records) == 9_997
        assert sorted(i.line for i in issues) == sorted(k + 1 for k in corrupt)


@pytest.mark.parametrize(
    "line, reason",
    [
        ("A,B,T1,10", "expected 5 fields, got 4"),
        ("A,B,T1,10,20,30", "expected 5 fields, got 6"),
        (",B,T1,10,20", "empty identifier"),
        ("A,B,T1,-1,20", "timestamp is not a non-negative integer"),
        ("A,B,T1,1.5,20", "timestamp is not a non-negative integer"),
        ("A,B,T1,30,20", "end_time precedes start_time"),
        ("A,A,T1,10,20", "self-loop rejected"),
    ],
)
def test_rejection_reasons(line, reason):
    # A valid first line keeps the bad one from being read as a header.
    data = f"X,Y,T0,1,2\n{line}\n".encode()
    _, slow = parse_cdr(data)
    fast = read_cdr_frame(data).issues
    assert [i.reason for i in slow] == [reason]
    assert fast == slow


def test_strict_mode_raises_on_first_bad_line():
    data = b"A,B,T1,1,2\nA,B,T1,9,8\nA,A,T1,1,2\n"
    with pytest.raises(CdrError, match="line 2"):
        parse_cdr(data, strict=True)
    with pytest.raises(CdrError, match="line 2"):
        read_cdr_frame(data, strict=True)


def test_header_and_blank_lines_are_skipped():
    data = b"caller,callee,tower,start,end\n\nA,B,T1,5,6\n\n"
    records, issues = parse_cdr(data)
    assert records == [CallRecord("A", "B", "T1", 5, 6)]
    assert issues == []
    assert read_cdr_frame(data).to_records() == records


def test_header_only_on_first_line():
    data = b"A,B,T1,5,6\ncaller,callee,tower,start,end\n"
    records, issues = parse_cdr(data)
    assert len(records) == 1
    assert issues[0].reason == "timestamp is not a non-negative integer"


def test_unreadable_source(tmp_path):
    with pytest.raises(CdrError):
        parse_cdr(tmp_path / "missing.csv")


def test_record_invariants():
    with pytest.raises(ValueError):
        CallRecord("A", "B", "T", 10, 5)
    with pytest.raises(ValueError):
        CallRecord("A", "A", "T", 1, 5)


def test_round_trip_through_file(tmp_path):
    recs = [CallRecord("A", "B", "T1", 1, 2), CallRecord("C", "D", "T2", 3, 3)]
    path = tmp_path / "cdr.csv"
    write_cdr(recs, path)
    assert parse_cdr(path)[0] == recs
    assert read_cdr_frame(path).to_records() == recs
    assert CdrFrame.from_records(recs).to_records() == recs


_ident = st.text(alphabet="abcXYZ09_-. ", min_size=1, max_size=6).filter(lambda s: s.strip() == s)


@given(_ident, _ident, _ident, st.integers(0, 10**12), st.integers(0, 10**6))
def test_format_then_parse_is_identity(a, b, t, start, dur):
    if a == b:
        return
    rec = CallRecord(a, b, t, start, start + dur)
    records, issues = parse_cdr(("X,Y,T,1,2\n" + format_record(rec) + "\n").encode())
    assert records[1] == rec and issues == []


_fragments = st.sampled_from(
    ["A", "B", "T1", "", " ", "12", "007", "-3", "x", ",", "\r", "\n", "\t", "é", "\x1c", "\xff", "99999999999999999999"]
)


@given(st.lists(_fragments, max_size=40), st.booleans())
def test_parse_is_total_and_fast_path_agrees(parts, strict):
    data = "".join(parts).encode("utf-8", errors="surrogateescape")
    try:
        slow = parse_cdr(data, strict=strict)
    except CdrError as exc:
        with pytest.raises(CdrError, match=str(exc).split(":")[0]):
            read_cdr_frame(data, strict=strict)
        return
    fast = read_cdr_frame(data, strict=strict)
    assert fast.to_records() == slow[0]
    assert fast.issues == slow[1]
    nonblank = [ln for ln in data.decode("utf-8", "replace").split("\n") if ln.strip()]
    header = 1 if nonblank and cdr_mod._is_header([f.strip() for f in nonblank[0].split(",")]) else 0
    assert len(slow[0]) + len(slow[1]) + header == len(nonblank)


@given(st.lists(st.sampled_from(["A,B,T1,1,2", "", "bad", "x,y,z,start,end", "C,D,T2,3,1"]), max_size=30), st.integers(1, 4))
def test_batched_parse_matches_single_pass(lines, batch):
    data = "\n".join(lines).encode()
    old = cdr_mod.PARSE_BATCH_LINES
    try:
        cdr_mod.PARSE_BATCH_LINES = batch
        batched = read_cdr_frame(data)
    finally:
        cdr_mod.PARSE_BATCH_LINES = old
    records, issues = parse_cdr(data)
    assert batched.to_records() == records
    assert batched.issues == issues


def test_fallback_bytes_use_line_parser():
    data = b"A\x1c,B,T1,1,2\nC,D,T1,1,2\n"
    fast = read_cdr_frame(data)
    assert fast.to_records() == parse_cdr(data)[0]


def test_crlf_lines():
    data = b"A,B,T1,1,2\r\nC,D,T1,3,4\r\n"
    assert read_cdr_frame(data).to_records() == parse_cdr(data)[0]
    assert len(parse_cdr(data)[0]) == 2


# towers


def test_tower_line_maps_fields():
    towers = load_towers(b"T1,42.5,1.52,food\n")
    assert towers == {"T1": Tower("T1", 42.5, 1.52, "food")}


def test_duplicate_tower_id():
    with pytest.raises(TowerError, match="duplicate"):
        load_towers(b"T1,42.5,1.52\nT1,42.6,1.53\n")


def test_out_of_range_latitude():
    with pytest.raises(TowerError):
        load_towers(b"T2,95.0,1.5,\n")


def test_out_of_range_longitude():
    with pytest.raises(ValueError):
        Tower("T", 0.0, 181.0)


def test_tower_header_and_missing_category():
    towers = load_towers(io.BytesIO(b"tower_id,lat,lon,poi\nT1,1,2,\nT2,3,4\n"))
    assert towers["T1"].poi_category is None
    assert towers["T2"] == Tower("T2", 3.0, 4.0)


def test_tower_round_trip(tmp_path):
    towers = [Tower("T1", 42.123456789, -1.5, "food"), Tower("T2", -89.9, 179.99)]
    write_towers(towers, tmp_path / "t.csv")
    assert list(load_towers(tmp_path / "t.csv").values()) == towers
