"""Circuit sanitization: spam removal, handshake checks, trimming.

The pipeline turns raw guard-side channels into clean page-aligned traces.
Stages run in a fixed order and only ever remove or truncate cells:

    spam channels -> (monitored: main-circuit selection) -> handshake
    validation -> (post phase: link-gap heuristic) -> small-circuit filter
    -> head trimming -> tail trimming

Every stage reports how many circuits it removed or touched.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    EmptyAfterTrimError,
    NoMainCircuitError,
    NoMonitoredDataError,
)
from .ingest import PageVisitRecord
from .trace import INCOMING, OUTGOING, PRE, Cell, Channel, Circuit, Trace

log = logging.getLogger(__name__)

HANDSHAKE_PRE = (OUTGOING, INCOMING, OUTGOING)
HANDSHAKE_POST = (OUTGOING, INCOMING, OUTGOING, INCOMING, OUTGOING)

CONFLUX = "conflux"
NON_CONFLUX = "non_conflux"
INVALID = "invalid"


@dataclass
class SanitizeConfig:
    """Pipeline thresholds; defaults are the standard operating values."""

    spam_circuit_threshold: int = 10_000
    min_cells: int = 200
    gap_ratio_threshold: float = 3.0
    gap_floor_ns: int = 1_000_000  # 1 ms floor keeps the ratio finite
    head_trim_pre: int = 2
    head_trim_post: int = 5
    tail_gap_ns: int = 5_000_000_000
    max_tail_cells: int = 100
    max_tail_duration_ns: int = 1_000_000_000
    duration_cap_ns: int | None = None  # None: derive from the monitored set
    duration_cap_percentile: float = 99.0
    max_len: int = 5000
    visit_span_ns: int = 60_000_000_000  # rows this close join one page visit

    def __post_init__(self):
        if self.spam_circuit_threshold < 1:
            raise ConfigError("spam_circuit_threshold must be >= 1")
        if self.min_cells < 1:
            raise ConfigError("min_cells must be >= 1")
        if self.gap_ratio_threshold <= 1:
            raise ConfigError("gap_ratio_threshold must exceed 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if not 0 < self.duration_cap_percentile <= 100:
            raise ConfigError("duration_cap_percentile must be in (0, 100]")

    @classmethod
    def from_json(cls, path: str | Path) -> "SanitizeConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


@dataclass
class SanitizationReport:
    """Per-stage removal counters. Dropped counters plus retained equal
    the number of input circuits."""

    input_circuits: int = 0
    spam_channels: int = 0
    spam_circuits_dropped: int = 0
    visit_extra_dropped: int = 0
    handshake_dropped: int = 0
    conflux_heuristic_dropped: int = 0
    small_dropped: int = 0
    trim_dropped: int = 0
    tail_gap_pruned: int = 0
    duration_capped: int = 0
    length_truncated: int = 0
    retained: int = 0
    duration_cap_ns: int | None = None

    def dropped_total(self) -> int:
        return (
            self.spam_circuits_dropped
            + self.visit_extra_dropped
            + self.handshake_dropped
            + self.conflux_heuristic_dropped
            + self.small_dropped
            + self.trim_dropped
        )

    def consistent(self) -> bool:
        return self.retained + self.dropped_total() == self.input_circuits

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def detect_spam_channels(
    channels: Iterable[Channel], threshold: int = 10_000
) -> set[int]:
    """Channel ids whose lifetime circuit count strictly exceeds ``threshold``."""
    if threshold < 1:
        raise ConfigError("spam threshold must be >= 1")
    return {ch.channel_id for ch in channels if ch.circuit_count > threshold}


def validate_handshake_pre(circuit: Circuit) -> bool:
    """True iff the circuit opens with the [+1, -1, +1] pattern."""
    if len(circuit.cells) < 3:
        return False
    return tuple(c.direction for c in circuit.cells[:3]) == HANDSHAKE_PRE


def validate_handshake_post(
    circuit: Circuit,
    gap_ratio_threshold: float = 3.0,
    gap_floor_ns: int = 1_000_000,
) -> str:
    """Classify a post-phase circuit via its five-cell opening pattern.

    Linked legs answer each relay handshake cell promptly, so the gaps
    after the 2nd and 4th cells are of comparable size. A plain circuit
    shows the [+1,-1,+1,-1,+1] shape too, but it was typically built in
    advance and sat idle before use, making one gap much larger.
    """
    if gap_ratio_threshold <= 1:
        raise ConfigError("gap_ratio_threshold must exceed 1")
    if len(circuit.cells) < 5:
        return INVALID
    head = circuit.cells[:5]
    if tuple(c.direction for c in head) != HANDSHAKE_POST:
        return INVALID
    g1 = head[2].timestamp - head[1].timestamp
    g2 = head[4].timestamp - head[3].timestamp
    ratio = max(g1, g2) / max(min(g1, g2), gap_floor_ns)
    return CONFLUX if ratio <= gap_ratio_threshold else NON_CONFLUX


def filter_small_circuits(
    circuits: Iterable[Circuit], min_cells: int = 200
) -> list[Circuit]:
    """Keep circuits carrying at least ``min_cells`` cells."""
    if min_cells < 1:
        raise ConfigError("min_cells must be >= 1")
    return [c for c in circuits if len(c.cells) >= min_cells]


def select_main_circuit(
    page_domain: str,
    candidates: Sequence[tuple[PageVisitRecord, Circuit]],
) -> Circuit:
    """Pick the circuit that actually carried the page load.

    Candidates whose first-party domain no longer matches the page were
    created after a redirect; candidates requesting an .onion name are
    alternative-service legs. Both are ignored. Among the survivors the
    highest cell count wins; ties go to the earliest start.
    """
    survivors = []
    for record, circuit in candidates:
        if record.first_party_domain != page_domain:
            continue
        if record.target_domain.endswith(".onion"):
            continue
        survivors.append(circuit)
    if not survivors:
        raise NoMainCircuitError(f"no usable circuit for {page_domain}")
    return min(survivors, key=lambda c: (-len(c.cells), c.start_ts))


def trim_head(circuit: Circuit, phase: str, strip: int | None = None) -> Trace:
    """Strip the handshake cells and re-zero time at the first data cell.

    Circuits are often built well before they carry data, so the raw gap
    between handshake and payload is idle time, not page behavior.
    """
    if strip is None:
        strip = 2 if phase == PRE else 5
    cells = circuit.cells[strip:]
    if not cells:
        raise EmptyAfterTrimError(
            f"circuit {circuit.circuit_id}: no cells left after head trim"
        )
    base = cells[0].timestamp
    return Trace(
        cells=tuple((c.timestamp - base, c.direction) for c in cells),
        phase=phase,
    )


def _last_gap_index(cells: Sequence[Cell], gap_ns: int) -> int | None:
    """Index i of the last pair with cells[i+1].ts - cells[i].ts >= gap_ns."""
    for i in range(len(cells) - 2, -1, -1):
        if cells[i + 1][0] - cells[i][0] >= gap_ns:
            return i
    return None


def prune_close_tail(
    cells: Sequence[Cell],
    gap_ns: int,
    max_tail_cells: int,
    max_tail_duration_ns: int,
) -> tuple[list[Cell], bool]:
    """Drop a trailing burst that looks like browser-shutdown traffic.

    The tail after the last qualifying idle gap is removed only when it
    starts with an outgoing cell (the client initiates closing) and is
    either short in cells or short in duration.
    """
    cells = list(cells)
    idx = _last_gap_index(cells, gap_ns)
    if idx is None:
        return cells, False
    tail = cells[idx + 1 :]
    if tail[0][1] != OUTGOING:
        return cells, False
    tail_duration = tail[-1][0] - tail[0][0]
    if len(tail) < max_tail_cells or tail_duration < max_tail_duration_ns:
        return cells[: idx + 1], True
    return cells, False


def trim_tail(trace: Trace, config: SanitizeConfig) -> Trace:
    """Apply the four tail stages: teardown cells, shutdown tail, duration
    cap, and length cap.

    The first two stages run once per trace; ``tail_trimmed`` records that
    they already ran so re-application cannot remove more cells. The cap
    stages are plain projections and always apply.
    """
    cells = list(trace.cells)
    pruned = False
    if not trace.tail_trimmed:
        cells = cells[:-2]
        if cells:
            cells, pruned = prune_close_tail(
                cells,
                config.tail_gap_ns,
                config.max_tail_cells,
                config.max_tail_duration_ns,
            )
    if config.duration_cap_ns is not None:
        cells = [c for c in cells if c[0] <= config.duration_cap_ns]
    cells = cells[: config.max_len]
    if not cells:
        raise EmptyAfterTrimError(f"trace {trace.trace_id}: empty after tail trim")
    if len(cells) == len(trace.cells) and not pruned and trace.tail_trimmed:
        return trace
    return trace.with_cells(cells, tail_trimmed=True)


def compute_duration_cap(
    traces: Sequence[Trace], percentile: float = 99.0
) -> int:
    """Nearest-rank percentile of trace durations, in nanoseconds."""
    if not traces:
        raise NoMonitoredDataError("duration cap needs at least one monitored trace")
    durations = sorted(t.duration_ns for t in traces)
    rank = math.ceil(percentile / 100.0 * len(durations))
    cap = durations[max(rank, 1) - 1]
    if not 42_000_000_000 <= cap <= 47_000_000_000:
        log.debug("duration cap %.1f s falls outside the usual 42-47 s band", cap / 1e9)
    return cap


# --- pipeline composition ---------------------------------------------------


@dataclass
class VisitGroup:
    """Circuit-request rows that belong to one page load."""

    page_domain: str
    rows: list[PageVisitRecord] = field(default_factory=list)

    @property
    def start_ts(self) -> int:
        return self.rows[0].request_ts


def _row_circuit_ids(row: PageVisitRecord) -> tuple[int, ...]:
    """Circuit ids a visit row may refer to: its own plus any linked legs."""
    if row.conflux_meta is None:
        return (row.circuit_id,)
    ids = (row.circuit_id,) + row.conflux_meta.leg_ids
    return tuple(dict.fromkeys(ids))


def group_visits(
    visits: Sequence[PageVisitRecord],
    circuit_to_channel: Mapping[int, int],
    visit_span_ns: int,
) -> list[VisitGroup]:
    """Group visit rows into page loads.

    Rows are bucketed per channel and joined while they fall within
    ``visit_span_ns`` of the group's first request. The first row of a
    group names the page: the client navigates to the scheduled page
    before redirects or alternative services fire.
    """
    per_channel: dict[int, list[PageVisitRecord]] = {}
    for row in visits:
        channel = next(
            (
                circuit_to_channel[cid]
                for cid in _row_circuit_ids(row)
                if cid in circuit_to_channel
            ),
            None,
        )
        if channel is None:
            continue
        per_channel.setdefault(channel, []).append(row)
    groups: list[VisitGroup] = []
    for channel in sorted(per_channel):
        rows = sorted(per_channel[channel], key=lambda r: r.request_ts)
        current: VisitGroup | None = None
        for row in rows:
            if current is None or row.request_ts - current.start_ts > visit_span_ns:
                current = VisitGroup(page_domain=row.first_party_domain, rows=[row])
                groups.append(current)
            else:
                current.rows.append(row)
    return groups


OUTCOME_SPAM = "spam"
OUTCOME_UNSELECTED = "unselected"
OUTCOME_HANDSHAKE = "handshake"
OUTCOME_NON_CONFLUX = "non_conflux"
OUTCOME_SMALL = "small"
OUTCOME_TRIM = "trim"
OUTCOME_RETAINED = "retained"


@dataclass
class SanitizedDataset:
    traces: list[Trace]
    report: SanitizationReport
    outcomes: dict[int, str] = field(default_factory=dict)  # circuit_id -> stage
    labels: dict[int, str] = field(default_factory=dict)  # retained monitored circuits


def _trim_cohort(
    entries: list[tuple[Trace, str | None, str | None, int]],
    config: SanitizeConfig,
    report: SanitizationReport,
    outcomes: dict[int, str],
) -> list[Trace]:
    """Run tail trimming over head-trimmed traces.

    The duration cap comes from the monitored traces after the gap-based
    stages, so those stages run first for everyone.
    """
    staged: list[tuple[Trace, str | None, str | None, int]] = []
    for trace, label, tag, circuit_id in entries:
        cells = list(trace.cells)[:-2]
        if not cells:
            report.trim_dropped += 1
            outcomes[circuit_id] = OUTCOME_TRIM
            continue
        cells, pruned = prune_close_tail(
            cells, config.tail_gap_ns, config.max_tail_cells, config.max_tail_duration_ns
        )
        if pruned:
            report.tail_gap_pruned += 1
        staged.append((trace.with_cells(cells, tail_trimmed=True), label, tag, circuit_id))

    cap = config.duration_cap_ns
    if cap is None:
        monitored = [t for t, label, _, _ in staged if label is not None]
        if monitored:
            cap = compute_duration_cap(monitored, config.duration_cap_percentile)
        else:
            log.warning("no monitored traces and no explicit cap; skipping duration cap")
    report.duration_cap_ns = cap

    out: list[Trace] = []
    for trace, label, tag, circuit_id in staged:
        cells = list(trace.cells)
        if cap is not None:
            kept = [c for c in cells if c[0] <= cap]
            if len(kept) < len(cells):
                report.duration_capped += 1
            cells = kept
        if len(cells) > config.max_len:
            report.length_truncated += 1
            cells = cells[: config.max_len]
        if not cells:
            report.trim_dropped += 1
            outcomes[circuit_id] = OUTCOME_TRIM
            continue
        out.append(trace.with_cells(cells, label=label, client_tag=tag))
        outcomes[circuit_id] = OUTCOME_RETAINED
        report.retained += 1
    return out


def sanitize(
    channels: Sequence[Channel],
    config: SanitizeConfig,
    phase: str,
    visits: Sequence[PageVisitRecord] | None = None,
) -> SanitizedDataset:
    """Run the full pipeline over ingested channels.

    When ``visits`` is given, channels referenced by visit rows are treated
    as controlled-client traffic: one main circuit per page load survives
    and carries the page label. All other channels yield unlabeled traces.
    """
    report = SanitizationReport()
    report.input_circuits = sum(ch.circuit_count for ch in channels)
    outcomes: dict[int, str] = {}

    spam_ids = detect_spam_channels(channels, config.spam_circuit_threshold)
    report.spam_channels = len(spam_ids)
    live = []
    for channel in channels:
        if channel.channel_id in spam_ids:
            report.spam_circuits_dropped += channel.circuit_count
            for circuit_id in channel.circuits:
                outcomes[circuit_id] = OUTCOME_SPAM
        else:
            live.append(channel)

    # (label, client_tag, circuit) entries that continue down the pipeline
    pending: list[tuple[str | None, str | None, Circuit]] = []
    if visits:
        circuit_to_channel: dict[int, int] = {}
        for channel in live:
            for circuit_id in channel.circuits:
                circuit_to_channel[circuit_id] = channel.channel_id
        groups = group_visits(visits, circuit_to_channel, config.visit_span_ns)
        channel_by_id = {ch.channel_id: ch for ch in live}
        monitored_channel_ids = set()
        claimed: dict[int, tuple[str, str]] = {}
        for group in groups:
            candidates = []
            for row in group.rows:
                for circuit_id in _row_circuit_ids(row):
                    channel_id = circuit_to_channel.get(circuit_id)
                    if channel_id is None:
                        continue
                    monitored_channel_ids.add(channel_id)
                    circuit = channel_by_id[channel_id].circuits.get(circuit_id)
                    if circuit is not None:
                        candidates.append((row, circuit))
            if not candidates:
                continue
            try:
                main = select_main_circuit(group.page_domain, candidates)
            except NoMainCircuitError:
                continue
            tag = channel_by_id[circuit_to_channel[main.circuit_id]].source_tag
            claimed[main.circuit_id] = (group.page_domain, tag)
        for channel in live:
            if channel.channel_id in monitored_channel_ids:
                for circuit_id, circuit in channel.circuits.items():
                    if circuit_id in claimed:
                        label, tag = claimed[circuit_id]
                        pending.append((label, tag, circuit))
                    else:
                        report.visit_extra_dropped += 1
                        outcomes[circuit_id] = OUTCOME_UNSELECTED
            else:
                for circuit in channel.circuits.values():
                    pending.append((None, None, circuit))
    else:
        for channel in live:
            for circuit in channel.circuits.values():
                pending.append((None, None, circuit))

    trimmed_entries: list[tuple[Trace, str | None, str | None, int]] = []
    for label, tag, circuit in pending:
        if phase == PRE:
            if not validate_handshake_pre(circuit):
                report.handshake_dropped += 1
                outcomes[circuit.circuit_id] = OUTCOME_HANDSHAKE
                continue
        else:
            verdict = validate_handshake_post(
                circuit, config.gap_ratio_threshold, config.gap_floor_ns
            )
            if verdict == INVALID:
                report.handshake_dropped += 1
                outcomes[circuit.circuit_id] = OUTCOME_HANDSHAKE
                continue
            if verdict == NON_CONFLUX:
                report.conflux_heuristic_dropped += 1
                outcomes[circuit.circuit_id] = OUTCOME_NON_CONFLUX
                continue
        if len(circuit.cells) < config.min_cells:
            report.small_dropped += 1
            outcomes[circuit.circuit_id] = OUTCOME_SMALL
            continue
        strip = config.head_trim_pre if phase == PRE else config.head_trim_post
        try:
            trace = trim_head(circuit, phase, strip)
        except EmptyAfterTrimError:
            report.trim_dropped += 1
            outcomes[circuit.circuit_id] = OUTCOME_TRIM
            continue
        trimmed_entries.append((trace, label, tag, circuit.circuit_id))

    traces = _trim_cohort(trimmed_entries, config, report, outcomes)
    labels = {}
    if visits:
        labels = {
            circuit_id: claimed[circuit_id][0]
            for circuit_id in claimed
            if outcomes.get(circuit_id) == OUTCOME_RETAINED
        }
    if not report.consistent():
        raise AssertionError("sanitization counters do not add up")
    return SanitizedDataset(traces=traces, report=report, outcomes=outcomes, labels=labels)
