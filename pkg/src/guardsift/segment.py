"""Time-based trace segmentation for an adversary without circuit IDs.

An on-path observer can split traffic per channel (one channel per client
connection) but cannot tell concurrent circuits apart. Monitored traces are
cut out of the channel by the recorded page-load window; unlabeled traffic
is segmented by a greedy pass over circuit lifespans.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptySegmentError
from .sanitize import SanitizeConfig, prune_close_tail
from .trace import OUTGOING, PRE, Cell, Channel, Trace

__all__ = [
    "SegmentWindow",
    "plan_windows",
    "extract_monitored_window",
    "segment_nonmonitored",
]


@dataclass(frozen=True)
class SegmentWindow:
    channel_id: int
    t_start: int
    t_end: int
    consumed_circuit_ids: frozenset[int]

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError("window start must not exceed its end")
        if not self.consumed_circuit_ids:
            raise ValueError("a window must consume at least one circuit")


def plan_windows(channel: Channel) -> list[SegmentWindow]:
    """Greedy window plan over a channel's circuits.

    Circuits are walked in start order. Each unconsumed circuit opens a
    window equal to its own lifespan; every still-unconsumed circuit that
    overlaps the window (touching endpoints count) is consumed by it. Each
    circuit is consumed exactly once.
    """
    circuits = sorted(channel.circuits.values(), key=lambda c: c.start_ts)
    consumed: set[int] = set()
    windows: list[SegmentWindow] = []
    for circuit in circuits:
        if circuit.circuit_id in consumed:
            continue
        t_start, t_end = circuit.start_ts, circuit.end_ts
        overlapping = frozenset(
            other.circuit_id
            for other in circuits
            if other.circuit_id not in consumed
            and other.start_ts <= t_end
            and other.end_ts >= t_start
        )
        consumed.update(overlapping)
        windows.append(SegmentWindow(channel.channel_id, t_start, t_end, overlapping))
    return windows


def _finish_segment(
    cells: list[Cell], config: SanitizeConfig, label: str | None, tag: str | None
) -> Trace | None:
    """Align to the first outgoing cell, normalize, and tail-trim."""
    start = next((i for i, (_, d) in enumerate(cells) if d == OUTGOING), None)
    if start is None:
        return None
    cells = cells[start:]
    base = cells[0][0]
    cells = [(ts - base, d) for ts, d in cells]
    # the channel view has no handshake to strip, so only the tail stages run
    cells = cells[:-2]
    if not cells:
        return None
    cells, _ = prune_close_tail(
        cells, config.tail_gap_ns, config.max_tail_cells, config.max_tail_duration_ns
    )
    if config.duration_cap_ns is not None:
        cells = [c for c in cells if c[0] <= config.duration_cap_ns]
    cells = cells[: config.max_len]
    if not cells:
        return None
    return Trace(
        cells=tuple(cells), phase=PRE, label=label, client_tag=tag, tail_trimmed=True
    )


def extract_monitored_window(
    channel: Channel,
    visit_start: int,
    visit_end: int,
    config: SanitizeConfig | None = None,
    label: str | None = None,
) -> Trace:
    """Merge every channel cell inside a recorded page-load window.

    Overlapping circuits are flattened into one time-sorted trace. Leading
    incoming cells are dropped: the client-initiated request starts with an
    outgoing cell.
    """
    if visit_start >= visit_end:
        raise ValueError("visit_start must be before visit_end")
    config = config or SanitizeConfig()
    cells = [
        (rec.timestamp, rec.direction)
        for rec in channel.all_cells()
        if visit_start <= rec.timestamp <= visit_end
    ]
    cells.sort(key=lambda c: c[0])
    trace = _finish_segment(cells, config, label, channel.source_tag or None)
    if trace is None:
        raise EmptySegmentError(
            f"channel {channel.channel_id}: window [{visit_start}, {visit_end}]"
            " has no usable outgoing-aligned cells"
        )
    return trace


def segment_nonmonitored(
    channel: Channel, config: SanitizeConfig | None = None
) -> list[Trace]:
    """Greedy temporal clustering of a channel into page-like traces.

    One trace per planned window, holding every channel cell inside the
    window. Cells of a consumed circuit outside its window are dropped,
    never reused by later windows. Windows whose cells cannot be aligned
    to an outgoing cell (or that trim away entirely) yield no trace.
    """
    config = config or SanitizeConfig()
    by_id = channel.circuits
    traces: list[Trace] = []
    for window in plan_windows(channel):
        cells = [
            (rec.timestamp, rec.direction)
            for circuit_id in sorted(window.consumed_circuit_ids)
            for rec in by_id[circuit_id].cells
            if window.t_start <= rec.timestamp <= window.t_end
        ]
        cells.sort(key=lambda c: c[0])
        trace = _finish_segment(cells, config, None, channel.source_tag or None)
        if trace is not None:
            traces.append(trace)
    return traces
