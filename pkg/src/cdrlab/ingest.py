"""Parse, validate, and serialize CDR, top-up, tower, and label files.

All parsers are line-oriented: well-formed lines become records, malformed
lines land in a reject report carrying the physical line number and a
reason.  Crossing the reject-fraction cap aborts with a summary, since a
dirty file is more likely a schema mismatch than real data.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
from dataclasses import dataclass

from .records import (
    COMM_KINDS,
    EVENT_KINDS,
    CdrRecord,
    Dataset,
    TopUpRecord,
    Tower,
    format_timestamp,
    parse_timestamp,
)

log = logging.getLogger("cdrlab.ingest")

CDR_FIELDS = ("caller", "callee", "tower", "timestamp", "kind", "magnitude")
TOPUP_FIELDS = ("buyer", "retailer", "retailer_tower", "timestamp", "amount")

DEFAULT_CDR_SCHEMA = {name: name for name in CDR_FIELDS}
DEFAULT_TOPUP_SCHEMA = {name: name for name in TOPUP_FIELDS}

DEFAULT_REJECT_CAP = 0.01


class IngestError(ValueError):
    """Unrecoverable input problem: missing file columns, dirty beyond cap."""


@dataclass
class RejectReport:
    source: str
    rejects: list[tuple[int, str]]
    total_rows: int

    def fraction(self) -> float:
        if self.total_rows == 0:
            return 0.0
        return len(self.rejects) / self.total_rows


def open_text(path: str, mode: str = "rt"):
    """Open a text file, transparently gzip when the name ends '.gz'."""
    if str(path).endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8", newline="")
    return io.open(path, mode, encoding="utf-8", newline="")


def _numbered_rows(fh, delimiter: str) -> list[tuple[int, list[str]]]:
    """CSV rows with their physical line numbers; '#' lines and blanks skipped.

    Fields never contain embedded newlines in this toolkit, so per-line csv
    parsing is safe and keeps line numbers exact.
    """
    numbered: list[tuple[int, str]] = []
    for physical, raw in enumerate(fh, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        numbered.append((physical, raw))
    rows = csv.reader((text for _, text in numbered), delimiter=delimiter)
    return [(num, row) for (num, _), row in zip(numbered, rows)]


def write_rejects_csv(report: RejectReport, path: str, header_comment: str | None = None) -> None:
    with open_text(path, "wt") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh)
        writer.writerow(["line", "reason"])
        for line_no, reason in report.rejects:
            writer.writerow([line_no, reason])


def _header_positions(header: list[str], schema: dict[str, str], required: tuple[str, ...], source: str) -> dict[str, int]:
    positions = {}
    for logical, column in schema.items():
        if column in header:
            positions[logical] = header.index(column)
    missing = [f for f in required if f not in positions]
    if missing:
        raise IngestError(f"{source}: schema columns not found in header: {', '.join(missing)}")
    return positions


def _check_cap(report: RejectReport, cap: float) -> None:
    if report.total_rows and report.fraction() > cap:
        sample = "; ".join(f"line {n}: {r}" for n, r in report.rejects[:5])
        raise IngestError(
            f"{report.source}: {len(report.rejects)} of {report.total_rows} lines rejected "
            f"(fraction {report.fraction():.4f} > cap {cap}); first reasons: {sample}"
        )


def parse_cdr_file(
    path: str,
    schema: dict[str, str] | None = None,
    delimiter: str = ",",
    known_towers: set[str] | None = None,
    window: tuple[int, int] | None = None,
    reject_cap: float = DEFAULT_REJECT_CAP,
) -> tuple[list[CdrRecord], RejectReport]:
    """Read one CDR CSV.  Schema maps logical field -> header column.

    Schema keys beyond the six standard fields name pass-through attribute
    columns (IMSI, IMEI, ...) kept on the record but never analyzed.
    """
    schema = dict(schema or DEFAULT_CDR_SCHEMA)
    # Required in the header; callee/magnitude may still be blank per row.
    required = ("caller", "callee", "tower", "timestamp", "kind", "magnitude")
    records: list[CdrRecord] = []
    rejects: list[tuple[int, str]] = []
    total = 0
    with open_text(path) as fh:
        numbered = _numbered_rows(fh, delimiter)
        if not numbered:
            return [], RejectReport(str(path), [], 0)
        header = numbered[0][1]
        pos = _header_positions(header, schema, required, str(path))
        attr_fields = sorted(k for k in pos if k not in CDR_FIELDS)
        for line_no, row in numbered[1:]:
            total += 1
            reason = None
            if max(pos.values()) >= len(row):
                rejects.append((line_no, "wrong field count"))
                continue
            caller = row[pos["caller"]].strip()
            callee = row[pos["callee"]].strip() or None
            tower = row[pos["tower"]].strip()
            kind = row[pos["kind"]].strip().lower()
            raw_ts = row[pos["timestamp"]].strip()
            raw_mag = row[pos["magnitude"]].strip()
            if not caller:
                reason = "missing caller"
            elif not tower:
                reason = "missing tower"
            elif kind not in EVENT_KINDS:
                reason = f"unknown kind {kind!r}"
            elif kind == "voice" and callee is None:
                reason = "voice missing callee"
            if reason is None:
                try:
                    ts = parse_timestamp(raw_ts)
                except ValueError:
                    reason = "bad timestamp"
            if reason is None and window is not None and not (window[0] <= ts < window[1]):
                reason = "timestamp outside window"
            if reason is None:
                if raw_mag == "":
                    if kind in ("sms", "mms"):
                        magnitude = 1.0
                    elif kind == "data":
                        magnitude = 0.0
                    else:
                        reason = "missing magnitude"
                else:
                    try:
                        magnitude = float(raw_mag)
                    except ValueError:
                        reason = "bad magnitude"
                    else:
                        if magnitude < 0:
                            reason = "negative magnitude"
            if reason is None and known_towers is not None and tower not in known_towers:
                log.warning("%s line %d: unknown tower %r", path, line_no, tower)
                reason = f"unknown tower {tower!r}"
            if reason is not None:
                rejects.append((line_no, reason))
                continue
            attrs = tuple((f, row[pos[f]].strip()) for f in attr_fields)
            records.append(CdrRecord(caller, callee, tower, ts, kind, magnitude, attrs))
    report = RejectReport(str(path), rejects, total)
    _check_cap(report, reject_cap)
    return records, report


def parse_topup_file(
    path: str,
    schema: dict[str, str] | None = None,
    delimiter: str = ",",
    known_towers: set[str] | None = None,
    window: tuple[int, int] | None = None,
    reject_cap: float = DEFAULT_REJECT_CAP,
) -> tuple[list[TopUpRecord], RejectReport]:
    schema = dict(schema or DEFAULT_TOPUP_SCHEMA)
    required = ("buyer", "retailer", "timestamp", "amount")
    records: list[TopUpRecord] = []
    rejects: list[tuple[int, str]] = []
    total = 0
    with open_text(path) as fh:
        numbered = _numbered_rows(fh, delimiter)
        if not numbered:
            return [], RejectReport(str(path), [], 0)
        header = numbered[0][1]
        pos = _header_positions(header, schema, required, str(path))
        has_tower = "retailer_tower" in pos
        for line_no, row in numbered[1:]:
            total += 1
            reason = None
            if max(pos.values()) >= len(row):
                rejects.append((line_no, "wrong field count"))
                continue
            buyer = row[pos["buyer"]].strip()
            retailer = row[pos["retailer"]].strip()
            tower = row[pos["retailer_tower"]].strip() or None if has_tower else None
            if not buyer:
                reason = "missing buyer"
            elif not retailer:
                reason = "missing retailer"
            if reason is None:
                try:
                    ts = parse_timestamp(row[pos["timestamp"]].strip())
                except ValueError:
                    reason = "bad timestamp"
            if reason is None and window is not None and not (window[0] <= ts < window[1]):
                reason = "timestamp outside window"
            if reason is None:
                try:
                    amount = float(row[pos["amount"]].strip())
                except ValueError:
                    reason = "bad amount"
                else:
                    if amount <= 0:
                        reason = "non-positive amount"
            if reason is None and tower is not None and known_towers is not None and tower not in known_towers:
                log.warning("%s line %d: unknown tower %r", path, line_no, tower)
                reason = f"unknown tower {tower!r}"
            if reason is not None:
                rejects.append((line_no, reason))
                continue
            records.append(TopUpRecord(buyer, retailer, tower, ts, amount))
    report = RejectReport(str(path), rejects, total)
    _check_cap(report, reject_cap)
    return records, report


def parse_tower_file(
    path: str,
    delimiter: str = ",",
    reject_cap: float = DEFAULT_REJECT_CAP,
) -> tuple[dict[str, Tower], RejectReport]:
    """CSV of id,lon,lat.  Duplicate ids are fatal; bad coordinates reject."""
    towers: dict[str, Tower] = {}
    rejects: list[tuple[int, str]] = []
    total = 0
    with open_text(path) as fh:
        numbered = _numbered_rows(fh, delimiter)
        if not numbered:
            return {}, RejectReport(str(path), [], 0)
        header = numbered[0][1]
        pos = _header_positions(header, {"id": "id", "lon": "lon", "lat": "lat"}, ("id", "lon", "lat"), str(path))
        for line_no, row in numbered[1:]:
            total += 1
            if max(pos.values()) >= len(row):
                rejects.append((line_no, "wrong field count"))
                continue
            tid = row[pos["id"]].strip()
            if not tid:
                rejects.append((line_no, "missing id"))
                continue
            if tid in towers:
                raise IngestError(f"{path}: duplicate tower id {tid!r} at line {line_no}")
            try:
                lon = float(row[pos["lon"]])
                lat = float(row[pos["lat"]])
            except ValueError:
                rejects.append((line_no, "bad coordinate"))
                continue
            if not -180.0 <= lon <= 180.0:
                rejects.append((line_no, "lon out of range"))
                continue
            if not -90.0 <= lat <= 90.0:
                rejects.append((line_no, "lat out of range"))
                continue
            towers[tid] = Tower(tid, lon, lat)
    report = RejectReport(str(path), rejects, total)
    _check_cap(report, reject_cap)
    return towers, report


def parse_labels_file(path: str, delimiter: str = ",") -> dict[str, str]:
    """CSV of subscriber,label."""
    labels: dict[str, str] = {}
    with open_text(path) as fh:
        numbered = _numbered_rows(fh, delimiter)
        if not numbered:
            return {}
        header = numbered[0][1]
        pos = _header_positions(header, {"subscriber": "subscriber", "label": "label"}, ("subscriber", "label"), str(path))
        for _, row in numbered[1:]:
            labels[row[pos["subscriber"]].strip()] = row[pos["label"]].strip()
    return labels


def load_dataset(
    cdr_path: str,
    topup_path: str | None,
    towers_path: str,
    labels_path: str | None = None,
    cdr_schema: dict[str, str] | None = None,
    topup_schema: dict[str, str] | None = None,
    delimiter: str = ",",
    window: tuple[int, int] | None = None,
    reject_cap: float = DEFAULT_REJECT_CAP,
) -> tuple[Dataset, dict[str, RejectReport]]:
    """Parse all inputs and assemble a validated Dataset.

    Events referencing unknown towers are rejected during parsing.  When no
    window is given it is derived as [min ts, max ts + 1).
    """
    towers, tower_report = parse_tower_file(towers_path, delimiter, reject_cap)
    known = set(towers)
    cdrs, cdr_report = parse_cdr_file(
        cdr_path, cdr_schema, delimiter, known_towers=known, window=window, reject_cap=reject_cap
    )
    reports = {"towers": tower_report, "cdr": cdr_report}
    topups: list[TopUpRecord] = []
    if topup_path is not None:
        topups, topup_report = parse_topup_file(
            topup_path, topup_schema, delimiter, known_towers=known, window=window, reject_cap=reject_cap
        )
        reports["topup"] = topup_report
    if window is None:
        stamps = [r.timestamp for r in cdrs] + [r.timestamp for r in topups]
        window = (min(stamps), max(stamps) + 1) if stamps else (0, 1)
    labels = parse_labels_file(labels_path, delimiter) if labels_path else None
    ds = Dataset(cdrs=tuple(cdrs), topups=tuple(topups), towers=towers, window=window, labels=labels)
    return ds, reports


def apply_activity_filter(ds: Dataset, pre_cut: int, tail_window: tuple[int, int]) -> Dataset:
    """Keep subscribers with an event before pre_cut and one inside tail_window.

    A subscriber's events are the ones it originates (CDR caller or top-up
    buyer); being called does not count as activity.  All events of retained
    subscribers are kept.
    """
    start, end = ds.window
    if not (start <= pre_cut <= end):
        raise ValueError(f"pre_cut {pre_cut} outside dataset window {ds.window}")
    if not (start <= tail_window[0] <= tail_window[1] <= end):
        raise ValueError(f"tail window {tail_window} outside dataset window {ds.window}")
    before: set[str] = set()
    inside: set[str] = set()

    def note(actor: str, ts: int) -> None:
        if ts < pre_cut:
            before.add(actor)
        if tail_window[0] <= ts < tail_window[1]:
            inside.add(actor)

    for rec in ds.cdrs:
        note(rec.caller, rec.timestamp)
    for rec in ds.topups:
        note(rec.buyer, rec.timestamp)
    keep = before & inside
    cdrs = tuple(r for r in ds.cdrs if r.caller in keep)
    topups = tuple(r for r in ds.topups if r.buyer in keep)
    labels = None
    if ds.labels is not None:
        labels = {s: v for s, v in ds.labels.items() if s in keep}
    return Dataset(cdrs=cdrs, topups=topups, towers=ds.towers, window=ds.window, labels=labels)


def _format_number(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_cdr_csv(records, path: str, delimiter: str = ",", header_comment: str | None = None) -> None:
    attr_fields: list[str] = sorted({k for rec in records for k, _ in rec.attrs})
    with open_text(path, "wt") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(list(CDR_FIELDS) + attr_fields)
        for rec in records:
            bag = dict(rec.attrs)
            writer.writerow(
                [
                    rec.caller,
                    rec.callee or "",
                    rec.tower,
                    format_timestamp(rec.timestamp),
                    rec.kind,
                    _format_number(rec.magnitude),
                ]
                + [bag.get(f, "") for f in attr_fields]
            )


def write_topup_csv(records, path: str, delimiter: str = ",", header_comment: str | None = None) -> None:
    with open_text(path, "wt") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(list(TOPUP_FIELDS))
        for rec in records:
            writer.writerow(
                [
                    rec.buyer,
                    rec.retailer,
                    rec.retailer_tower or "",
                    format_timestamp(rec.timestamp),
                    _format_number(rec.amount),
                ]
            )


def write_towers_csv(towers: dict[str, Tower], path: str, delimiter: str = ",", header_comment: str | None = None) -> None:
    with open_text(path, "wt") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["id", "lon", "lat"])
        for tid in sorted(towers):
            t = towers[tid]
            writer.writerow([t.id, repr(float(t.lon)), repr(float(t.lat))])


def write_labels_csv(labels: dict[str, str], path: str, delimiter: str = ",", header_comment: str | None = None) -> None:
    with open_text(path, "wt") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["subscriber", "label"])
        for sub in sorted(labels):
            writer.writerow([sub, labels[sub]])
