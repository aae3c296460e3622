"""Linked-leg analysis: primary-leg ground truth and guard-side detection.

Typed client-side cells reveal which leg each endpoint favored when a page
load started; the guard, seeing only directions and timing on its own leg,
has to infer the same thing from traffic shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyTraceError, IndeterminateError, NotLinkedError
from .trace import INCOMING, OUTGOING, Cell, Circuit, ConfluxSet, Trace


class CellTypeCode(IntEnum):
    """Relay cell commands the analysis relies on."""

    RELAY_BEGIN = 1
    RELAY_DATA = 2
    RELAY_CONNECTED = 4
    RELAY_SENDME = 5
    CFX_LINK = 19
    CFX_LINKED = 20
    CFX_LINKED_ACK = 21
    CFX_SWITCH = 22


@dataclass(frozen=True)
class PrimaryLegVerdict:
    """Which leg each endpoint used first; ``unused`` if neither saw data."""

    client_primary: int | None
    exit_primary: int | None
    unused: bool = False

    def __post_init__(self):
        if self.unused and (self.client_primary is not None or self.exit_primary is not None):
            raise ValueError("an unused set carries no leg references")


def strip_conflux_handshake(leg: Circuit) -> Circuit:
    """Drop everything up to and including the first link-ack cell."""
    for i, cell in enumerate(leg.cells):
        if cell.cell_type == CellTypeCode.CFX_LINKED_ACK:
            return Circuit(leg.circuit_id, leg.cells[i + 1 :])
    raise NotLinkedError(f"leg {leg.circuit_id} has no link-ack cell")


def identify_primary_legs(conflux_set: ConfluxSet) -> PrimaryLegVerdict:
    """Recover both endpoints' initial primary leg from typed cells.

    Both legs must already be stripped of the link handshake. The client
    primary is the leg opening with RELAY_BEGIN. The exit primary follows
    from ordering: the client cannot send RELAY_DATA before RELAY_CONNECTED
    arrives, so an outgoing data cell right after the begins means the
    connected answer came in on the other leg.
    """
    leg_a, leg_b = conflux_set.leg_a, conflux_set.leg_b
    if not leg_a.cells or not leg_b.cells:
        raise IndeterminateError("a leg is empty after handshake strip")
    if leg_a.cells[0].cell_type == CellTypeCode.RELAY_BEGIN:
        client, secondary = leg_a, leg_b
    elif leg_b.cells[0].cell_type == CellTypeCode.RELAY_BEGIN:
        client, secondary = leg_b, leg_a
    else:
        return PrimaryLegVerdict(None, None, unused=True)

    target = next(
        (c for c in client.cells if c.cell_type != CellTypeCode.RELAY_BEGIN), None
    )
    if (
        target is not None
        and target.direction == OUTGOING
        and target.cell_type == CellTypeCode.RELAY_DATA
    ):
        exit_primary = secondary.circuit_id
    else:
        # an incoming connected/switch answer (or nothing after the begins)
        # means the exit answered on the same leg the client favored
        exit_primary = client.circuit_id
    return PrimaryLegVerdict(client.circuit_id, exit_primary)


def detect_first_segment(guard_leg: Trace | Sequence[Cell]) -> bool:
    """Guard-side first-segment test on a head-trimmed leg.

    Holds when (1) the first cell after the link handshake is outgoing,
    (2) an incoming cell appears within the first 10 cells, and (3) an
    outgoing cell appears within the 10 cells right after that first
    incoming one. Missing evidence counts against.
    """
    cells = guard_leg.cells if isinstance(guard_leg, Trace) else tuple(guard_leg)
    if not cells or cells[0][1] != OUTGOING:
        return False
    first_in = next((i for i, (_, d) in enumerate(cells[:10]) if d == INCOMING), None)
    if first_in is None:
        return False
    window = cells[first_in + 1 : first_in + 11]
    return any(d == OUTGOING for _, d in window)


def fs_ground_truth(verdict: PrimaryLegVerdict, guard_leg_id: int) -> bool:
    """True iff the guard's leg was the initial primary for both endpoints."""
    if verdict.unused:
        raise IndeterminateError("unused set has no first-segment truth")
    return verdict.client_primary == guard_leg_id == verdict.exit_primary


def leg_coverage(guard_leg: Trace, full_client_trace: Trace) -> float:
    """Fraction of the full page-load cells visible on the guard's leg."""
    if not full_client_trace.cells:
        raise EmptyTraceError("full client trace is empty")
    return min(1.0, max(0.0, len(guard_leg.cells) / len(full_client_trace.cells)))


def merge_legs(conflux_set: ConfluxSet) -> Trace:
    """Timestamp-sorted union of both legs; ties put leg_a's cell first.

    Legs must share a clock for the merge to mean anything.
    """
    tagged = [
        (c.timestamp, 0, c.direction) for c in conflux_set.leg_a.cells
    ] + [(c.timestamp, 1, c.direction) for c in conflux_set.leg_b.cells]
    tagged.sort(key=lambda t: (t[0], t[1]))
    return Trace(cells=tuple((ts, d) for ts, _, d in tagged), phase="post")


@dataclass(frozen=True)
class SetAnalysis:
    set_id: str
    client_primary: int | None
    exit_primary: int | None
    fs_detected: bool
    fs_truth: bool | None
    coverage: float


def analyze_set(
    set_id: str,
    conflux_set: ConfluxSet,
    guard_leg: Trace,
    guard_leg_id: int,
) -> SetAnalysis:
    """Full per-set report row: verdicts, detection, and coverage."""
    stripped = ConfluxSet(
        strip_conflux_handshake(conflux_set.leg_a),
        strip_conflux_handshake(conflux_set.leg_b),
        ground_truth=conflux_set.ground_truth,
    )
    verdict = identify_primary_legs(stripped)
    truth = None if verdict.unused else fs_ground_truth(verdict, guard_leg_id)
    detected = detect_first_segment(guard_leg)
    coverage = leg_coverage(guard_leg, merge_legs(stripped))
    return SetAnalysis(
        set_id=set_id,
        client_primary=verdict.client_primary,
        exit_primary=verdict.exit_primary,
        fs_detected=detected,
        fs_truth=truth,
        coverage=coverage,
    )


def write_analysis_csv(rows: Iterable[SetAnalysis], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["set_id", "client_primary", "exit_primary", "fs_detected", "fs_truth", "coverage"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.set_id,
                    "" if row.client_primary is None else row.client_primary,
                    "" if row.exit_primary is None else row.exit_primary,
                    int(row.fs_detected),
                    "" if row.fs_truth is None else int(row.fs_truth),
                    f"{row.coverage:.6f}",
                ]
            )
