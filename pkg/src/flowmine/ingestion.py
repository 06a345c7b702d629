"""On-disk formats: packet CSV input and snapshot datasets.

Packet CSV (tshark-style export)::

    frame_number,timestamp,src_ip,src_port,dst_ip,dst_port,tcp_flags
    1,1518000000.25,172.31.64.2,49152,172.31.0.2,80,0x0002

Snapshots are written either dense (one CSV row of 676 frequencies per
snapshot) or sparse (one JSON object per line holding only nonzero cells).
All readers are generators; memory use does not grow with file length.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional

import numpy as np

from .errors import FlowmineError, FormatMismatch, MalformedRow, NonMonotoneIndex, TruncatedFile
from .packet_model import N_CLASSES, N_RELATIONS, PacketRecord, parse_flags
from .snapshot_engine import Snapshot

log = logging.getLogger(__name__)

PACKET_COLUMNS = ("frame_number", "timestamp", "src_ip", "src_port", "dst_ip", "dst_port", "tcp_flags")
SNAPSHOT_META = ("packet_index", "timestamp", "label")
CELL_COLUMNS = tuple(f"c{i}_{j}" for i in range(N_CLASSES) for j in range(N_CLASSES))
DENSE_HEADER = SNAPSHOT_META + CELL_COLUMNS

FORMATS = ("dense", "sparse")


@dataclass
class ReadStats:
    rows: int = 0
    skipped: int = 0


def _parse_packet_row(row: list[str], rownum: int) -> PacketRecord:
    if len(row) != len(PACKET_COLUMNS):
        raise MalformedRow(rownum, f"expected {len(PACKET_COLUMNS)} fields, got {len(row)}")
    frame, ts, sip, sport, dip, dport, flags = row
    try:
        index = int(frame)
        timestamp = float(ts)
        src_port = int(sport)
        dst_port = int(dport)
    except ValueError as exc:
        raise MalformedRow(rownum, str(exc)) from None
    try:
        bits = parse_flags(flags.strip())
    except FlowmineError as exc:
        raise MalformedRow(rownum, str(exc)) from None
    try:
        return PacketRecord(index, timestamp, sip, src_port, dip, dst_port, int(bits))
    except ValueError as exc:
        raise MalformedRow(rownum, str(exc)) from None


def read_packets(source: IO[str], on_error: str = "raise",
                 stats: Optional[ReadStats] = None) -> Iterator[PacketRecord]:
    """Yield packets from a packet CSV stream in file order.

    ``on_error="skip"`` drops malformed or out-of-order rows (counted in
    ``stats.skipped`` and logged); the default raises on the first one.
    Row numbers in errors count the header as row 1.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', not {on_error!r}")
    stats = stats if stats is not None else ReadStats()
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        return
    if tuple(h.strip() for h in header) != PACKET_COLUMNS:
        raise FormatMismatch(f"packet CSV header must be {','.join(PACKET_COLUMNS)}")
    last = None
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pkt = _parse_packet_row(row, rownum)
            if last is not None and pkt.index <= last:
                raise NonMonotoneIndex(rownum, f"frame_number {pkt.index} after {last}")
        except MalformedRow as exc:
            if on_error == "raise":
                raise
            stats.skipped += 1
            log.warning("skipping %s", exc)
            continue
        last = pkt.index
        stats.rows += 1
        yield pkt


def write_packets(sink: IO[str], packets: Iterable[PacketRecord]) -> int:
    sink.write(",".join(PACKET_COLUMNS) + "\n")
    n = 0
    for p in packets:
        sink.write(f"{p.index},{p.timestamp!r},{p.src_ip},{p.src_port},"
                   f"{p.dst_ip},{p.dst_port},0x{p.flags:04x}\n")
        n += 1
    return n


def _fmt(x: float) -> str:
    return "%.17g" % x


class SnapshotWriter:
    """Incremental snapshot writer; the dense header is written on construction."""

    def __init__(self, sink: IO[str], fmt: str = "dense"):
        if fmt not in FORMATS:
            raise ValueError(f"unknown snapshot format {fmt!r}")
        self.sink = sink
        self.fmt = fmt
        self.count = 0
        if fmt == "dense":
            sink.write(",".join(DENSE_HEADER) + "\n")

    def write(self, snap: Snapshot) -> None:
        if "," in snap.label or "\n" in snap.label or '"' in snap.label:
            raise FormatMismatch(f"label {snap.label!r} cannot be written unquoted")
        flat = snap.flat()
        nz = np.flatnonzero(flat)
        if self.fmt == "dense":
            cells = ["0"] * N_RELATIONS
            for k in nz:
                cells[k] = _fmt(flat[k])
            self.sink.write(f"{snap.packet_index},{_fmt(snap.timestamp)},{snap.label},"
                            + ",".join(cells) + "\n")
        else:
            obj = {
                "packet_index": snap.packet_index,
                "timestamp": snap.timestamp,
                "label": snap.label,
                "cells": {f"{k // N_CLASSES},{k % N_CLASSES}": float(flat[k]) for k in nz},
            }
            self.sink.write(json.dumps(obj, separators=(",", ":")) + "\n")
        self.count += 1


def write_snapshots(sink: IO[str], snapshots: Iterable[Snapshot], fmt: str = "dense") -> int:
    w = SnapshotWriter(sink, fmt)
    for s in snapshots:
        w.write(s)
    return w.count


def _lines(source: IO[str]) -> Iterator[tuple[int, str, bool]]:
    """Yield (line number, text without newline, had newline)."""
    for n, line in enumerate(source, start=1):
        if line.endswith("\n"):
            yield n, line[:-1].rstrip("\r"), True
        else:
            yield n, line, False


def _read_dense(lines, header: str) -> Iterator[Snapshot]:
    if tuple(header.split(",")) != DENSE_HEADER:
        raise FormatMismatch("dense snapshot header does not match the 679-column layout")
    for n, text, complete in lines:
        if not text:
            continue
        fields = text.split(",")
        if len(fields) != len(DENSE_HEADER):
            if not complete and len(fields) < len(DENSE_HEADER):
                raise TruncatedFile(f"line {n}: file ends mid-row")
            raise FormatMismatch(f"line {n}: expected {len(DENSE_HEADER)} fields, got {len(fields)}")
        try:
            values = np.array(fields[3:], dtype=np.float64)
            yield Snapshot(values, int(fields[0]), float(fields[1]), fields[2])
        except ValueError as exc:
            if not complete:
                raise TruncatedFile(f"line {n}: file ends mid-row") from None
            raise FormatMismatch(f"line {n}: {exc}") from None


def _read_sparse(lines) -> Iterator[Snapshot]:
    for n, text, complete in lines:
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            if not complete:
                raise TruncatedFile(f"line {n}: file ends mid-record") from None
            raise FormatMismatch(f"line {n}: not valid JSON") from None
        try:
            matrix = np.zeros((N_CLASSES, N_CLASSES))
            for key, value in obj["cells"].items():
                i, j = key.split(",")
                matrix[int(i), int(j)] = value
            yield Snapshot(matrix, int(obj["packet_index"]), float(obj["timestamp"]), str(obj["label"]))
        except (KeyError, ValueError, IndexError, AttributeError, TypeError) as exc:
            raise FormatMismatch(f"line {n}: bad snapshot record ({exc!r})") from None


def read_snapshots(source: IO[str]) -> Iterator[Snapshot]:
    """Read a dense or sparse snapshot file; the format is detected from the first line."""
    lines = _lines(source)
    for n, text, complete in lines:
        if not text.strip():
            continue
        if text.lstrip().startswith("{"):
            yield from _read_sparse(_chain_first((n, text, complete), lines))
        elif text.startswith("packet_index,"):
            if not complete:
                raise TruncatedFile("file ends inside the header")
            yield from _read_dense(lines, text)
        else:
            raise FormatMismatch("not a snapshot file (expected dense CSV header or NDJSON)")
        return


def _chain_first(first, rest):
    yield first
    yield from rest


def sniff(path) -> str:
    """Return 'packets', 'dense' or 'sparse' according to a file's first line."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.lstrip().startswith("{"):
        return "sparse"
    if first.startswith("packet_index,"):
        return "dense"
    if first.startswith("frame_number,"):
        return "packets"
    raise FormatMismatch(f"{path}: unrecognised file type")


def snapshots_to_arrays(snapshots: Iterable[Snapshot]) -> tuple[np.ndarray, list[str], list[int]]:
    """Stack snapshots into an (n, 676) array plus labels and packet indices."""
    rows, labels, idx = [], [], []
    for s in snapshots:
        rows.append(s.flat())
        labels.append(s.label)
        idx.append(s.packet_index)
    X = np.vstack(rows) if rows else np.zeros((0, N_RELATIONS))
    return X, labels, idx
