"""Hourly pageview dump parsing and the monthly alignment pipeline.

Three stages mirror how the raw dumps become one aligned table: hourly
files merge into a day (outer join over page keys, zero fill, daily view
threshold), days intersect into a monthly page index, and the index is
assembled into a MonthTable. Storage is a gzip-compressed CSV with a
JSON sidecar carrying a whole-file checksum; bytes are deterministic for
identical input. A Parquet writer is available as an optional extra.
"""

from __future__ import annotations

import calendar
import csv
import gzip
import hashlib
import io
import json
import urllib.request
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .seriesstore import MonthTable, PageKey, TimeSeries

__all__ = [
    "HourRecord",
    "DayTable",
    "IngestManifest",
    "IngestError",
    "ChecksumError",
    "parse_hour_file",
    "build_day",
    "intersect_month",
    "assemble_month",
    "write_month",
    "read_month",
    "write_month_parquet",
    "ingest_month",
    "hour_file_name",
    "month_file_urls",
    "download_month",
]

DAILY_VIEW_THRESHOLD = 10
DEFAULT_BASE_URL = "https://dumps.wikimedia.org/other/pageviews/"

STORAGE_FORMAT = "tailedts-month-v1"


class IngestError(RuntimeError):
    pass


class ChecksumError(IngestError):
    pass


@dataclass(frozen=True)
class HourRecord:
    """One grouped line of an hourly dump file.

    total_response_size is parsed for validation and ignored afterwards.
    """

    domain_code: str
    page_title: str
    count_views: int
    total_response_size: int = 0


def parse_hour_file(stream) -> tuple[list[HourRecord], int]:
    """Parse one decompressed hourly dump into grouped records.

    A well-formed line has exactly four space-separated fields with
    integer count and byte-size fields. Anything else is skipped and
    counted, never fatal. Empty domain or title normalizes to "NA";
    duplicate keys within the hour are summed. Records come back sorted
    by key. Returns (records, skipped_line_count).
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    grouped: dict[tuple[str, str], list[int]] = {}
    skipped = 0
    for raw in stream:
        line = raw.rstrip(b"\r\n")
        if not line:
            skipped += 1
            continue
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            skipped += 1
            continue
        parts = text.split(" ")
        if len(parts) != 4:
            skipped += 1
            continue
        domain, title, count_s, size_s = parts
        try:
            count = int(count_s)
            size = int(size_s)
        except ValueError:
            skipped += 1
            continue
        if count < 0 or size < 0:
            skipped += 1
            continue
        key = (domain or "NA", title or "NA")
        cell = grouped.setdefault(key, [0, 0])
        cell[0] += count
        cell[1] += size
    records = [
        HourRecord(domain_code=k[0], page_title=k[1], count_views=v[0], total_response_size=v[1])
        for k, v in sorted(grouped.items())
    ]
    return records, skipped


@dataclass(frozen=True)
class DayTable:
    """Per-page 24-hour count vectors for one date, threshold applied."""

    day: date
    rows: dict[PageKey, np.ndarray]
    lines_read: int = 0
    lines_skipped: int = 0

    def total(self, key: PageKey) -> int:
        return int(np.sum(self.rows[key], dtype=np.int64))


def _read_gz_records(path: Path) -> tuple[list[HourRecord], int, int]:
    lines = 0
    try:
        with gzip.open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IngestError(f"cannot read hour file {path}: {exc}") from exc
    lines = data.count(b"\n") + (1 if data and not data.endswith(b"\n") else 0)
    records, skipped = parse_hour_file(io.BytesIO(data))
    return records, lines, skipped


def build_day(hour_inputs, day: date, threshold: int = DAILY_VIEW_THRESHOLD) -> DayTable:
    """Outer-join 24 hourly record lists into one day table.

    `hour_inputs` maps hour (0..23) to a list of HourRecord. Cells with no
    observation are zero; rows whose 24-hour total falls below `threshold`
    are dropped. A missing hour raises naming that hour.
    """
    missing = [h for h in range(24) if h not in hour_inputs]
    if missing:
        raise IngestError(f"day {day.isoformat()} is missing hour {missing[0]:02d}")
    acc: dict[PageKey, np.ndarray] = {}
    for hour in range(24):
        for rec in hour_inputs[hour]:
            key = PageKey(rec.domain_code, rec.page_title)
            row = acc.get(key)
            if row is None:
                row = np.zeros(24, dtype=np.int64)
                acc[key] = row
            row[hour] += rec.count_views
    rows = {
        key: row.astype(np.uint32)
        for key, row in acc.items()
        if int(row.sum()) >= threshold
    }
    return DayTable(day=day, rows=rows)


def intersect_month(day_tables) -> list[PageKey]:
    """Keys present in every day table, sorted for determinism.

    An empty intersection is a valid (if suspicious) result and only
    warns.
    """
    tables = list(day_tables)
    if not tables:
        raise IngestError("need at least one day table")
    keys = set(tables[0].rows)
    for tbl in tables[1:]:
        keys &= tbl.rows.keys()
    if not keys:
        warnings.warn("no page survives every day of the span", stacklevel=2)
    return sorted(keys)


def assemble_month(page_index, day_tables, month: tuple[int, int]) -> MonthTable:
    """Concatenate D x 24 hourly counts per indexed page, in day order."""
    tables = list(day_tables)
    start = datetime(month[0], month[1], 1, tzinfo=timezone.utc)
    t = 24 * len(tables)
    series = []
    for key in page_index:
        chunks = []
        for tbl in tables:
            row = tbl.rows.get(key)
            if row is None:
                raise IngestError(
                    f"page {key} missing from day {tbl.day.isoformat()}: "
                    "index was not built by intersect_month"
                )
            chunks.append(row)
        values = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint32)
        series.append(TimeSeries(key=key, start=start, values=values))
    return MonthTable.build(month, series, start=start, t=t)


@dataclass
class IngestManifest:
    """Pipeline statistics for one assembled month."""

    month: str
    days: list[dict] = field(default_factory=list)
    pages: int = 0
    data_points: int = 0
    zero_fraction: float = 0.0
    skipped_lines: int = 0

    def to_json(self) -> str:
        payload = {
            "month": self.month,
            "days": self.days,
            "pages": self.pages,
            "data_points": self.data_points,
            "zero_fraction": self.zero_fraction,
            "skipped_lines": self.skipped_lines,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "IngestManifest":
        data = json.loads(text)
        return cls(**data)


def _csv_field(value: str) -> str:
    if any(ch in value for ch in (",", '"', "\n", "\r")):
        return '"' + value.replace('"', '""') + '"'
    return value


def write_month(table: MonthTable, path) -> None:
    """Write a MonthTable as deterministic CSV.gz plus a JSON sidecar.

    Header is domain_code,page_title,v0000..v{T-1}; rows keep the table
    order. gzip runs with mtime pinned to zero so identical tables give
    identical bytes; the sidecar records a sha256 of the compressed file.
    """
    path = Path(path)
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", compresslevel=9, mtime=0) as gz:
        header = "domain_code,page_title," + ",".join(f"v{i:04d}" for i in range(table.t))
        gz.write(header.encode("utf-8") + b"\n")
        for s in table.series:
            fields = [_csv_field(s.key.domain_code), _csv_field(s.key.page_title)]
            line = ",".join(fields) + "," + ",".join(str(int(v)) for v in s.values)
            gz.write(line.encode("utf-8") + b"\n")
    blob = buf.getvalue()
    path.write_bytes(blob)
    sidecar = {
        "format": STORAGE_FORMAT,
        "year": table.month[0],
        "month": table.month[1],
        "start": table.start.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "hours": table.t,
        "rows": table.rows,
        "zero_fraction": table.zero_fraction,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def read_month(path) -> MonthTable:
    """Read a table written by write_month, verifying the checksum."""
    path = Path(path)
    sidecar_path = Path(str(path) + ".manifest.json")
    if not sidecar_path.exists():
        raise IngestError(f"missing sidecar manifest {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    if sidecar.get("format") != STORAGE_FORMAT:
        raise IngestError(f"unsupported storage format {sidecar.get('format')!r}")
    blob = path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != sidecar["sha256"]:
        raise ChecksumError(f"checksum mismatch for {path}: file is truncated or corrupt")

    start = datetime.strptime(sidecar["start"], "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    t = int(sidecar["hours"])
    month = (int(sidecar["year"]), int(sidecar["month"]))

    series = []
    with gzip.GzipFile(fileobj=io.BytesIO(blob), mode="rb") as gz:
        text = io.TextIOWrapper(gz, encoding="utf-8", newline="")
        reader = csv.reader(text)
        header = next(reader)
        if header[:2] != ["domain_code", "page_title"] or len(header) != t + 2:
            raise IngestError("header does not match the sidecar manifest")
        for row in reader:
            key = PageKey(row[0], row[1])
            values = np.array([int(v) for v in row[2:]], dtype=np.uint32)
            series.append(TimeSeries(key=key, start=start, values=values))
    if len(series) != int(sidecar["rows"]):
        raise IngestError("row count does not match the sidecar manifest")
    return MonthTable.build(month, series, start=start, t=t)


def write_month_parquet(table: MonthTable, path) -> None:
    """Optional Parquet (zstd) writer matching the distributed layout."""
    try:
        import pyarrow as pa
        import pyarrow.parquet as pq
    except ImportError as exc:  # pragma: no cover
        raise IngestError("parquet support needs the 'parquet' extra (pyarrow)") from exc
    cols: dict[str, object] = {
        "domain_code": [s.key.domain_code for s in table.series],
        "page_title": [s.key.page_title for s in table.series],
    }
    matrix = np.stack([s.values for s in table.series]) if table.series else np.zeros((0, table.t), dtype=np.uint32)
    for i in range(table.t):
        cols[f"v{i:04d}"] = matrix[:, i]
    pq.write_table(pa.table(cols), str(path), compression="zstd")


def hour_file_name(year: int, month: int, day: int, hour: int) -> str:
    return f"pageviews-{year:04d}{month:02d}{day:02d}-{hour:02d}0000.gz"


def month_file_urls(year: int, month: int, days: int | None = None,
                    base_url: str = DEFAULT_BASE_URL) -> list[str]:
    """Planned source URLs for one month of hourly dumps."""
    if days is None:
        days = calendar.monthrange(year, month)[1]
    root = f"{base_url.rstrip('/')}/{year:04d}/{year:04d}-{month:02d}/"
    return [
        root + hour_file_name(year, month, day, hour)
        for day in range(1, days + 1)
        for hour in range(24)
    ]


def download_month(dest_dir, year: int, month: int, days: int | None = None,
                   base_url: str = DEFAULT_BASE_URL, log=None) -> list[Path]:
    """Fetch one month of hourly dump files; skips files already present."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    fetched = []
    for url in month_file_urls(year, month, days, base_url):
        name = url.rsplit("/", 1)[1]
        target = dest / name
        if target.exists():
            continue
        if log:
            log("download", url=url)
        with urllib.request.urlopen(url) as resp, open(target, "wb") as out:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
        fetched.append(target)
    return fetched


def ingest_month(source_dir, year: int, month: int, *,
                 threshold: int = DAILY_VIEW_THRESHOLD,
                 days: int | None = None) -> tuple[MonthTable, IngestManifest]:
    """Run the full pipeline over a directory of hourly dump files.

    `days` defaults to the calendar month length; shorter spans are for
    fixtures and partial reprocessing. All 24 files of every requested
    day must exist, otherwise the offending date and hour is named.
    """
    source = Path(source_dir)
    if days is None:
        days = calendar.monthrange(year, month)[1]
    manifest = IngestManifest(month=f"{year:04d}-{month:02d}")

    day_tables = []
    for day_num in range(1, days + 1):
        the_day = date(year, month, day_num)
        hour_inputs = {}
        day_files = []
        lines_read = 0
        lines_skipped = 0
        for hour in range(24):
            path = source / hour_file_name(year, month, day_num, hour)
            if not path.exists():
                raise IngestError(
                    f"missing hour file for {the_day.isoformat()} hour {hour:02d}: {path.name}"
                )
            records, lines, skipped = _read_gz_records(path)
            hour_inputs[hour] = records
            day_files.append(path.name)
            lines_read += lines
            lines_skipped += skipped
        table = build_day(hour_inputs, the_day, threshold)
        day_tables.append(table)
        manifest.days.append({
            "date": the_day.isoformat(),
            "files": day_files,
            "lines_read": lines_read,
            "lines_skipped": lines_skipped,
            "pages_retained": len(table.rows),
        })
        manifest.skipped_lines += lines_skipped

    index = intersect_month(day_tables)
    table = assemble_month(index, day_tables, (year, month))
    manifest.pages = table.rows
    manifest.data_points = table.rows * table.t
    manifest.zero_fraction = table.zero_fraction
    return table, manifest
