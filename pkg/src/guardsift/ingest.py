"""Parsers for guard-side and client-side cell logs.

Guard log format, one cell per line:

    channel_id,circuit_id,timestamp_ns,direction[,cell_type]

A header line is optional. Marker lines of the form ``#AUTH,<channel_id>``
flag channels whose initiator authenticated as a relay; such channels carry
relay-to-relay traffic. Client logs use the same cell format with a
mandatory ``cell_type`` column, plus a sibling visit log:

    first_party_domain,request_ts,target_domain,circuit_id[,leg_a,leg_b]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

from .errors import ParseError
from .trace import CellRecord, Channel, Circuit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfluxMeta:
    linked: bool
    leg_ids: tuple[int, int]

    def __post_init__(self):
        if self.linked and self.leg_ids[0] == self.leg_ids[1]:
            raise ValueError("linked legs must have distinct circuit ids")


@dataclass(frozen=True)
class PageVisitRecord:
    """One circuit-request event logged at a controlled client."""

    first_party_domain: str
    request_ts: int
    target_domain: str
    circuit_id: int
    conflux_meta: ConfluxMeta | None = None

    def __post_init__(self):
        if self.request_ts < 0:
            raise ValueError("request_ts must be non-negative")


@dataclass
class ParsedLog:
    """Channels recovered from one log file, with parse bookkeeping."""

    channels: list[Channel]
    line_count: int = 0
    cell_count: int = 0
    duplicate_count: int = 0
    auth_channel_count: int = 0

    def channel_map(self) -> dict[int, Channel]:
        return {ch.channel_id: ch for ch in self.channels}


def _iter_lines(source: str | Path | IO[str] | Iterable[str]) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
    else:
        yield from source


def _is_header(fields: list[str]) -> bool:
    try:
        int(fields[0])
        return False
    except ValueError:
        return True


def _parse_cell_fields(
    fields: list[str], line_no: int, require_type: bool
) -> CellRecord:
    if len(fields) < 4:
        raise ParseError(line_no, f"expected at least 4 fields, got {len(fields)}")
    if require_type and len(fields) < 5:
        raise ParseError(line_no, "cell_type column is mandatory in client logs")
    try:
        channel_id = int(fields[0])
        circuit_id = int(fields[1])
        timestamp = int(fields[2])
        direction = int(fields[3])
        cell_type = int(fields[4]) if len(fields) > 4 and fields[4] != "" else None
    except ValueError as exc:
        raise ParseError(line_no, f"non-integer field: {exc}") from None
    try:
        return CellRecord(channel_id, circuit_id, timestamp, direction, cell_type)
    except ValueError as exc:
        raise ParseError(line_no, str(exc)) from None


def _parse_cells(
    source, source_tag: str, require_type: bool
) -> ParsedLog:
    channels: dict[int, Channel] = {}
    auth_ids: set[int] = set()
    seen: set[tuple] = set()
    result = ParsedLog(channels=[])
    saw_data = False
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#AUTH"):
            fields = line.split(",")
            if len(fields) != 2:
                raise ParseError(line_no, "malformed #AUTH marker")
            try:
                auth_ids.add(int(fields[1]))
            except ValueError:
                raise ParseError(line_no, "non-integer channel id in #AUTH marker") from None
            continue
        if line.startswith("#"):
            continue
        fields = line.split(",")
        if not saw_data and _is_header(fields):
            continue
        saw_data = True
        result.line_count += 1
        record = _parse_cell_fields(fields, line_no, require_type)
        key = (
            record.channel_id,
            record.circuit_id,
            record.timestamp,
            record.direction,
            record.cell_type,
        )
        if key in seen:
            result.duplicate_count += 1
            continue
        seen.add(key)
        channel = channels.get(record.channel_id)
        if channel is None:
            channel = Channel(record.channel_id, source_tag=source_tag)
            channels[record.channel_id] = channel
        channel.add_cell(record)
        result.cell_count += 1
    for channel_id in auth_ids:
        channel = channels.get(channel_id)
        if channel is None:
            # marker for a channel with no logged cells; keep it visible
            channel = Channel(channel_id, source_tag=source_tag)
            channels[channel_id] = channel
        channel.relay_authenticated = True
    result.channels = list(channels.values())
    result.auth_channel_count = len(auth_ids)
    if result.duplicate_count:
        log.warning("deduplicated %d repeated cell records", result.duplicate_count)
    return result


def parse_guard_log(source, source_tag: str = "") -> ParsedLog:
    """Parse a guard cell log into channels grouped by (channel, circuit)."""
    return _parse_cells(source, source_tag, require_type=False)


def filter_relay_channels(channels: Iterable[Channel]) -> tuple[list[Channel], int]:
    """Drop authenticated (relay-to-relay) channels; returns (kept, dropped)."""
    kept = []
    dropped = 0
    for channel in channels:
        if channel.relay_authenticated:
            dropped += 1
        else:
            kept.append(channel)
    return kept, dropped


def parse_visit_log(source) -> list[PageVisitRecord]:
    """Parse the client-side visit log."""
    visits = []
    saw_data = False
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if not saw_data and len(fields) > 1 and not fields[1].lstrip("-").isdigit():
            continue
        saw_data = True
        if len(fields) not in (4, 6):
            raise ParseError(line_no, f"expected 4 or 6 fields, got {len(fields)}")
        try:
            request_ts = int(fields[1])
            circuit_id = int(fields[3])
            meta = None
            if len(fields) == 6:
                meta = ConfluxMeta(linked=True, leg_ids=(int(fields[4]), int(fields[5])))
        except ValueError as exc:
            raise ParseError(line_no, f"non-integer field: {exc}") from None
        visits.append(
            PageVisitRecord(
                first_party_domain=fields[0],
                request_ts=request_ts,
                target_domain=fields[2],
                circuit_id=circuit_id,
                conflux_meta=meta,
            )
        )
    return visits


@dataclass
class ClientLog:
    visits: list[PageVisitRecord]
    channels: list[Channel]
    stats: ParsedLog | None = None

    def circuit_map(self) -> dict[int, Circuit]:
        out: dict[int, Circuit] = {}
        for channel in self.channels:
            out.update(channel.circuits)
        return out


def parse_client_log(cell_source, visit_source, source_tag: str = "client") -> ClientLog:
    """Parse client cell and visit logs; circuits join to visits by circuit id."""
    parsed = _parse_cells(cell_source, source_tag, require_type=True)
    visits = parse_visit_log(visit_source)
    return ClientLog(visits=visits, channels=parsed.channels, stats=parsed)
