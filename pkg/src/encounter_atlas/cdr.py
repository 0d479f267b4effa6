"""Call-detail-record and tower data model, parsing and validation."""

from __future__ import annotations

import codecs
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Union

import numpy as np
import polars as pl

Source = Union[str, Path, bytes, BinaryIO]

CDR_COLUMNS = ("caller_id", "callee_id", "tower_id", "start_time", "end_time")
TOWER_COLUMNS = ("tower_id", "lat", "lon", "poi_category")
MAX_TS_DIGITS = 18
_TS_PATTERN = rf"^[0-9]{{1,{MAX_TS_DIGITS}}}$"
_TS_RE = re.compile(rf"[0-9]{{1,{MAX_TS_DIGITS}}}")
# Python treats these as whitespace when stripping; polars does not.
_FALLBACK_BYTES = (b"\x1c", b"\x1d", b"\x1e", b"\x1f")


class CdrError(ValueError):
    """Raised for unreadable sources or, in strict mode, malformed lines."""


class TowerError(ValueError):
    """Raised for invalid tower tables."""


@dataclass(frozen=True, slots=True)
class CallRecord:
    caller_id: str
    callee_id: str
    tower_id: str
    start_time: int
    end_time: int

    def __post_init__(self) -> None:
        if self.end_time < self.start_time:
            raise ValueError("end_time precedes start_time")
        if self.caller_id == self.callee_id:
            raise ValueError("self-loop record")


@dataclass(frozen=True, slots=True)
class Tower:
    tower_id: str
    latitude: float
    longitude: float
    poi_category: Optional[str] = None

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range")


@dataclass(frozen=True, slots=True)
class ParseIssue:
    line: int
    reason: str
    text: str = ""


def format_record(record: CallRecord) -> str:
    """Canonical CDR line for a record (no trailing newline)."""
    return (
        f"{record.caller_id},{record.callee_id},{record.tower_id},"
        f"{record.start_time},{record.end_time}"
    )


def write_cdr(records: Iterable[CallRecord], dest: Union[str, Path]) -> None:
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(format_record(rec))
            fh.write("\n")


def _read_bytes(source: Source) -> bytes:
    try:
        if isinstance(source, bytes):
            return source
        if isinstance(source, (str, Path)):
            return Path(source).read_bytes()
        data = source.read()
    except OSError as exc:
        raise CdrError(f"cannot read CDR source: {exc}") from exc
    if isinstance(data, str):
        return data.encode("utf-8")
    return data


def _is_header(fields: list[str]) -> bool:
    return len(fields) == 5 and not (_TS_RE.fullmatch(fields[3]) or _TS_RE.fullmatch(fields[4]))


def _check_fields(fields: list[str]) -> Optional[str]:
    """Return the rejection reason for a split line, or None if valid."""
    if len(fields) != 5:
        return f"expected 5 fields, got {len(fields)}"
    caller, callee, tower, start, end = fields
    if not caller or not callee or not tower:
        return "empty identifier"
    if not _TS_RE.fullmatch(start) or not _TS_RE.fullmatch(end):
        return "timestamp is not a non-negative integer"
    if int(end) < int(start):
        return "end_time precedes start_time"
    if caller == callee:
        return "self-loop rejected"
    return None


def parse_cdr(source: Source, strict: bool = False) -> tuple[list[CallRecord], list[ParseIssue]]:
    """Parse a comma-delimited CDR stream into records and per-line issues.

    Blank lines are skipped. A first line whose timestamp fields are both
    non-numeric is taken as a header. In strict mode the first malformed
    line raises :class:`CdrError`.
    """
    text = _read_bytes(source).decode("utf-8", errors="replace")
    records: list[CallRecord] = []
    issues: list[ParseIssue] = []
    first = True
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        fields = [f.strip() for f in raw.split(",")]
        if first:
            first = False
            if _is_header(fields):
                continue
        reason = _check_fields(fields)
        if reason is not None:
            if strict:
                raise CdrError(f"line {lineno}: {reason}")
            issues.append(ParseIssue(lineno, reason, raw.rstrip("\r")))
            continue
        records.append(CallRecord(fields[0], fields[1], fields[2], int(fields[3]), int(fields[4])))
    return records, issues


@dataclass
class CdrFrame:
    """Columnar CDR table: string id columns and int64 times."""

    frame: pl.DataFrame
    issues: list[ParseIssue]

    def __len__(self) -> int:
        return self.frame.height

    @classmethod
    def from_records(cls, records: Iterable[CallRecord]) -> "CdrFrame":
        recs = list(records)
        frame = pl.DataFrame(
            {
                "caller_id": [r.caller_id for r in recs],
                "callee_id": [r.callee_id for r in recs],
                "tower_id": [r.tower_id for r in recs],
                "start_time": np.array([r.start_time for r in recs], dtype=np.int64),
                "end_time": np.array([r.end_time for r in recs], dtype=np.int64),
            },
            schema={
                "caller_id": pl.Utf8,
                "callee_id": pl.Utf8,
                "tower_id": pl.Utf8,
                "start_time": pl.Int64,
                "end_time": pl.Int64,
            },
        )
        return cls(frame, [])

    def to_records(self) -> list[CallRecord]:
        return [CallRecord(*row) for row in self.frame.iter_rows()]


def read_cdr_frame(source: Source, strict: bool = False) -> CdrFrame:
    """Vectorized equivalent of :func:`parse_cdr` returning a :class:`CdrFrame`.

    Falls back to the line parser for inputs the columnar reader rejects.
    """
    data = _read_bytes(source)
    try:
        lines = _read_lines(data)
    except (pl.exceptions.PolarsError, OSError, ValueError):
        records, issues = parse_cdr(data, strict=strict)
        result = CdrFrame.from_records(records)
        result.issues = issues
        return result
    return _parse_lines(lines, strict)


def _read_lines(data: bytes) -> pl.Series:
    if not data:
        return pl.Series("line", [], dtype=pl.Utf8)
    if any(b in data for b in _FALLBACK_BYTES):
        raise ValueError("control separators present")
    _check_utf8(data)  # lossy decoding is left to the line parser
    frame = pl.read_csv(
        io.BytesIO(data),
        has_header=False,
        separator="\x1e",
        quote_char=None,
        new_columns=["line"],
        schema={"line": pl.Utf8},
        rechunk=True,
    )
    expected = data.count(b"\n") + (0 if data.endswith(b"\n") else 1)
    if frame.height != expected or data.count(b"\r") != data.count(b"\r\n"):
        raise ValueError("line structure not representable")
    return frame.get_column("line")


def _check_utf8(data: bytes, block: int = 1 << 24) -> None:
    decoder = codecs.getincrementaldecoder("utf-8")()
    view = memoryview(data)
    for start in range(0, len(data), block):
        decoder.decode(view[start : start + block])
    decoder.decode(b"", final=True)


PARSE_BATCH_LINES = 1_000_000


def _parse_lines(lines: pl.Series, strict: bool, batch: Optional[int] = None) -> CdrFrame:
    """Validate and split lines batch by batch to bound intermediate memory."""
    batch = batch or PARSE_BATCH_LINES
    frames: list[pl.DataFrame] = []
    issues: list[ParseIssue] = []
    seen_content = False
    for offset in range(0, max(len(lines), 1), batch):
        part = lines.slice(offset, batch)
        good, bad, had_content = _parse_batch(part, offset, strict, check_header=not seen_content)
        seen_content = seen_content or had_content
        frames.append(good)
        issues.extend(bad)
    frame = pl.concat(frames, rechunk=True) if len(frames) > 1 else frames[0]
    return CdrFrame(frame, issues)


def _parse_batch(
    lines: pl.Series, offset: int, strict: bool, check_header: bool
) -> tuple[pl.DataFrame, list[ParseIssue], bool]:
    df = pl.DataFrame({"line": lines}).with_row_index("lineno", offset=offset + 1)
    df = df.filter(pl.col("line").is_not_null() & (pl.col("line").str.strip_chars() != ""))
    had_content = df.height > 0
    df = df.with_columns(
        (pl.col("line").str.count_matches(",", literal=True) + 1).alias("nfields"),
        pl.col("line").str.split_exact(",", 4).struct.rename_fields(list(CDR_COLUMNS)).alias("parts"),
    ).unnest("parts")
    df = df.with_columns([pl.col(c).str.strip_chars() for c in CDR_COLUMNS])
    if check_header and df.height:
        head = df.row(0, named=True)
        if head["nfields"] == 5 and not (
            _TS_RE.fullmatch(head["start_time"]) or _TS_RE.fullmatch(head["end_time"])
        ):
            df = df.slice(1)
    ts_ok = pl.col("start_time").str.contains(_TS_PATTERN) & pl.col("end_time").str.contains(_TS_PATTERN)
    df = df.with_columns(
        pl.when(ts_ok).then(pl.col("start_time").cast(pl.Int64, strict=False)).alias("start_i"),
        pl.when(ts_ok).then(pl.col("end_time").cast(pl.Int64, strict=False)).alias("end_i"),
    )
    reason = (
        pl.when(pl.col("nfields") != 5)
        .then(pl.format("expected 5 fields, got {}", pl.col("nfields")))
        .when((pl.col("caller_id") == "") | (pl.col("callee_id") == "") | (pl.col("tower_id") == ""))
        .then(pl.lit("empty identifier"))
        .when(~ts_ok)
        .then(pl.lit("timestamp is not a non-negative integer"))
        .when(pl.col("end_i") < pl.col("start_i"))
        .then(pl.lit("end_time precedes start_time"))
        .when(pl.col("caller_id") == pl.col("callee_id"))
        .then(pl.lit("self-loop rejected"))
        .otherwise(None)
        .alias("reason")
    )
    df = df.with_columns(reason)
    issues: list[ParseIssue] = []
    if df.get_column("reason").null_count() != df.height:
        bad = df.filter(pl.col("reason").is_not_null())
        if strict:
            row = bad.row(0, named=True)
            raise CdrError(f"line {row['lineno']}: {row['reason']}")
        issues = [
            ParseIssue(int(n), r, t.rstrip("\r"))
            for n, r, t in bad.select("lineno", "reason", "line").iter_rows()
        ]
        df = df.filter(pl.col("reason").is_null())
    good = df.select(
        pl.col("caller_id"),
        pl.col("callee_id"),
        pl.col("tower_id"),
        pl.col("start_i").alias("start_time"),
        pl.col("end_i").alias("end_time"),
    )
    return good, issues, had_content


def load_towers(source: Source) -> dict[str, Tower]:
    """Read ``tower_id,lat,lon[,poi_category]`` lines into a table keyed by id."""
    text = _read_bytes(source).decode("utf-8", errors="replace")
    towers: dict[str, Tower] = {}
    first = True
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        fields = [f.strip() for f in raw.split(",")]
        if first:
            first = False
            if len(fields) >= 3 and _not_float(fields[1]) and _not_float(fields[2]):
                continue
        if len(fields) not in (3, 4) or not fields[0]:
            raise TowerError(f"line {lineno}: expected tower_id,lat,lon[,poi_category]")
        tower_id = fields[0]
        if tower_id in towers:
            raise TowerError(f"line {lineno}: duplicate tower_id {tower_id!r}")
        try:
            lat, lon = float(fields[1]), float(fields[2])
        except ValueError as exc:
            raise TowerError(f"line {lineno}: non-numeric coordinate") from exc
        poi = fields[3] if len(fields) == 4 and fields[3] else None
        try:
            towers[tower_id] = Tower(tower_id, lat, lon, poi)
        except ValueError as exc:
            raise TowerError(f"line {lineno}: {exc}") from exc
    return towers


def _not_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return True
    return False


def write_towers(towers: Iterable[Tower], dest: Union[str, Path]) -> None:
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        for t in towers:
            fh.write(f"{t.tower_id},{t.latitude!r},{t.longitude!r},{t.poi_category or ''}\n")
