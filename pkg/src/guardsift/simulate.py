"""Synthetic guard and client traffic with a ground-truth sidecar.

The generator stands in for live relay data: it emits the guard cell log,
the typed client log, the visit log, and a ``truth.json`` sidecar that
records, per circuit, what the sanitization pipeline should decide about
it. Channels are generated independently from per-channel seeds, so the
output is byte-identical for a given seed regardless of worker count.

Traffic model, deliberately minimal: page loads are bursts of a few
outgoing request cells answered by a stream of incoming cells, with flow
control acknowledged every ``sendme_interval`` cells. Linked two-leg
connections schedule each cell on the leg whose currently estimated RTT
is lowest among legs with congestion-window space.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .conflux import CellTypeCode
from .errors import ConfigError
from .trace import (
    INCOMING,
    OUTGOING,
    POST,
    PRE,
    CellRecord,
    Circuit,
    ConfluxSet,
    SetGroundTruth,
    Trace,
)

MS = 1_000_000
SEC = 1_000_000_000

# synthetic codes for link-level cells; relay commands use CellTypeCode
CELL_CREATE = 200
CELL_CREATED = 201
CELL_DESTROY = 202

#: one generated cell event: (timestamp_ns, direction, cell_type)
CellEv = tuple[int, int, int]

KIND_MONITORED = "monitored"
KIND_NONMON = "nonmon"
KIND_SPAM = "spam"
KIND_RELAY = "relay"

STAGE_SPAM = "spam"
STAGE_UNSELECTED = "unselected"
STAGE_HANDSHAKE = "handshake"
STAGE_NON_CONFLUX = "non_conflux"
STAGE_SMALL = "small"
STAGE_RETAINED = "retained"
STAGE_RELAY = "relay"

_CIRCUIT_BLOCK_BITS = 17  # per-channel circuit-id block; caps circuits per channel


@dataclass
class ScenarioConfig:
    """Knobs for one generated dataset. Defaults give a small mixed load."""

    seed: int = 0
    phase: str = PRE
    client_tag: str = "sim"
    n_pages: int = 5
    n_visits_per_page: int = 10
    page_cell_range: tuple[int, int] = (300, 1500)
    visits_per_channel: int = 40
    retry_prob: float = 0.15
    altsvc_prob: float = 0.15
    redirect_prob: float = 0.1
    n_nonmon_channels: int = 20
    nonmon_circuits_range: tuple[int, int] = (1, 6)
    nonmon_cell_range: tuple[int, int] = (220, 900)
    nonmon_small_fraction: float = 0.5
    invalid_handshake_fraction: float = 0.0
    conflux_nonmon_fraction: float = 0.4
    spam_channel_fraction: float = 0.0
    spam_circuit_range: tuple[int, int] = (10_001, 10_200)
    relay_auth_channels: int = 0
    prebuilt_idle_range_s: tuple[float, float] = (6.0, 180.0)
    monitored_idle_range_s: tuple[float, float] = (6.0, 25.0)
    close_tail_fraction: float = 0.5
    close_tail_qualify_fraction: float = 0.75
    leg_rtt_ms: tuple[float, float] = (60.0, 60.0)
    competitor_rtt_delta_ms: float = 0.0
    rtt_noise_ms: float = 25.0
    sendme_interval: int = 100
    initial_cwnd: int = 1000
    exit_switch_prob: float = 0.0
    reorder_prob: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.phase not in (PRE, POST):
            raise ConfigError(f"phase must be 'pre' or 'post', got {self.phase!r}")
        for name in (
            "retry_prob", "altsvc_prob", "redirect_prob", "nonmon_small_fraction",
            "invalid_handshake_fraction", "conflux_nonmon_fraction",
            "spam_channel_fraction", "close_tail_fraction",
            "close_tail_qualify_fraction", "exit_switch_prob",
            "reorder_prob", "drop_prob",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.sendme_interval < 1:
            raise ConfigError("sendme_interval must be >= 1")
        if self.initial_cwnd < self.sendme_interval:
            raise ConfigError("initial_cwnd must be at least one sendme interval")
        if self.n_pages < 1 or self.n_visits_per_page < 0:
            raise ConfigError("page and visit counts must be positive")
        if self.visits_per_channel < 1:
            raise ConfigError("visits_per_channel must be >= 1")
        for name in (
            "page_cell_range", "nonmon_cell_range", "nonmon_circuits_range",
            "spam_circuit_range", "prebuilt_idle_range_s", "monitored_idle_range_s",
            "leg_rtt_ms",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is inverted")
            setattr(self, name, (lo, hi))
        if self.spam_circuit_range[1] >= 2**_CIRCUIT_BLOCK_BITS:
            raise ConfigError("spam_circuit_range exceeds the per-channel id block")

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for key, value in data.items():
            if isinstance(value, list):
                data[key] = tuple(value)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad scenario config: {exc}") from None

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def _ui(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _uf(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi))


# --- page models --------------------------------------------------------------


@dataclass(frozen=True)
class PageModel:
    """Burst skeleton of one monitored page."""

    label: str
    bursts: tuple[tuple[int, int, float], ...]  # (outgoing, incoming, think_ms)

    @property
    def total_cells(self) -> int:
        return sum(o + i for o, i, _ in self.bursts)


def page_model(seed: int, page_idx: int, cell_range: tuple[int, int]) -> PageModel:
    """Deterministic per-page burst structure; the page's fingerprint."""
    rng = _rng(seed, 0xA6E, page_idx)
    total = _ui(rng, *cell_range)
    bursts = []
    remaining = total
    while remaining > 0:
        out = min(_ui(rng, 1, 6), remaining)
        remaining -= out
        inc = min(_ui(rng, 24, 140), remaining)
        remaining -= inc
        bursts.append((out, inc, _uf(rng, 40.0, 900.0)))
    return PageModel(label=f"site{page_idx:03d}.example", bursts=tuple(bursts))


def _burst_skeleton(rng: np.random.Generator, total: int) -> tuple[tuple[int, int, float], ...]:
    """Ad-hoc burst structure for unlabeled traffic."""
    bursts = []
    remaining = total
    while remaining > 0:
        out = min(_ui(rng, 1, 6), remaining)
        remaining -= out
        inc = min(_ui(rng, 10, 120), remaining)
        remaining -= inc
        bursts.append((out, inc, _uf(rng, 30.0, 1200.0)))
    return tuple(bursts)


# --- lowest-RTT scheduling ------------------------------------------------------


@dataclass
class LegState:
    """Sender-side view of one leg."""

    rtt_ms: float
    cwnd: int
    cells_since_sendme: int = 0

    @property
    def blocked(self) -> bool:
        return self.cwnd <= 0


class LowRttScheduler:
    """Per-cell leg choice: lowest estimated RTT with window space.

    Every ``sendme_interval`` cells sent on a leg, an acknowledgment
    returns one true RTT later; it replenishes the window and feeds a new
    RTT sample into an exponential moving average (alpha = 0.5). Ties in
    the estimate go to the first leg. When every leg is blocked, sending
    stalls until the earliest pending acknowledgment.
    """

    def __init__(
        self,
        true_rtts_ms: Sequence[float],
        legs: Sequence[LegState],
        sendme_interval: int = 100,
        rtt_sampler: Callable[[int, int], float] | None = None,
    ):
        self.true_rtts = tuple(float(r) for r in true_rtts_ms)
        self.legs = list(legs)
        self.interval = sendme_interval
        self.sampler = rtt_sampler or (lambda leg, k: self.true_rtts[leg])
        self._sample_counts = [0] * len(self.legs)
        self._pending: list[tuple[int, int]] = []  # (ack_ts, leg)
        self._last_leg: int | None = None
        self._cell_index = 0
        self.switches: list[int] = []

    def _process_acks(self, now: int) -> None:
        due = sorted(item for item in self._pending if item[0] <= now)
        if not due:
            return
        self._pending = [item for item in self._pending if item[0] > now]
        for _, leg in due:
            state = self.legs[leg]
            state.cwnd += self.interval
            k = self._sample_counts[leg]
            self._sample_counts[leg] += 1
            state.rtt_ms = 0.5 * state.rtt_ms + 0.5 * self.sampler(leg, k)

    def _choose(self) -> int | None:
        best = None
        for i, state in enumerate(self.legs):
            if state.blocked:
                continue
            if best is None or state.rtt_ms < self.legs[best].rtt_ms:
                best = i
        return best

    def send_one(self, t_ns: int) -> tuple[int, int, bool]:
        """Send one cell at (or after) ``t_ns``.

        Returns (actual_time, leg, sendme_due) where ``sendme_due`` marks
        the cell whose receipt triggers the receiver's acknowledgment.
        """
        self._process_acks(t_ns)
        leg = self._choose()
        while leg is None:
            if not self._pending:
                raise RuntimeError("every leg is blocked and no acknowledgment pending")
            t_ns = min(ts for ts, _ in self._pending)
            self._process_acks(t_ns)
            leg = self._choose()
        state = self.legs[leg]
        state.cwnd -= 1
        state.cells_since_sendme += 1
        sendme_due = False
        if state.cells_since_sendme >= self.interval:
            state.cells_since_sendme = 0
            self._pending.append((t_ns + int(self.true_rtts[leg] * MS), leg))
            sendme_due = True
        if self._last_leg is not None and leg != self._last_leg:
            self.switches.append(self._cell_index)
        self._last_leg = leg
        self._cell_index += 1
        return t_ns, leg, sendme_due


@dataclass
class ScheduleResult:
    assignments: list[int]
    switch_events: list[int]
    times: list[int]


def schedule_lowrtt(
    n_cells: int,
    legs: tuple[LegState, LegState],
    rng: np.random.Generator | None = None,
    *,
    true_rtts_ms: tuple[float, float] | None = None,
    sendme_interval: int = 100,
    rtt_noise_ms: float = 0.0,
    cell_spacing_ns: int = 500_000,
    start_ns: int = 0,
) -> ScheduleResult:
    """Assign ``n_cells`` cells to legs under lowest-RTT scheduling.

    ``legs`` carry the initial estimates and windows and are updated in
    place. Without an rng, RTT re-estimates equal the true RTTs.
    """
    true = true_rtts_ms or (legs[0].rtt_ms, legs[1].rtt_ms)
    sampler = None
    if rng is not None and rtt_noise_ms > 0:
        sampler = lambda leg, k: true[leg] + float(rng.normal(0.0, rtt_noise_ms))
    sched = LowRttScheduler(true, legs, sendme_interval, sampler)
    assignments: list[int] = []
    times: list[int] = []
    t = start_ns
    for _ in range(n_cells):
        t, leg, _ = sched.send_one(t)
        assignments.append(leg)
        times.append(t)
        t += cell_spacing_ns
    return ScheduleResult(assignments, sched.switches, times)


# --- single-leg circuits --------------------------------------------------------


@dataclass(frozen=True)
class TailPlan:
    qualifies: bool
    incoming_led: bool
    n_cells: int
    duration_ns: int
    gap_ns: int


def _plan_tail(rng: np.random.Generator, config: ScenarioConfig) -> TailPlan | None:
    """Decide whether and how a circuit ends in browser-shutdown traffic."""
    if rng.random() >= config.close_tail_fraction:
        return None
    gap = int(_uf(rng, 5.5, 9.5) * SEC)
    if rng.random() < config.close_tail_qualify_fraction:
        variant = _ui(rng, 0, 2)
        if variant == 0:  # short and quick
            n, duration = _ui(rng, 3, 40), int(_uf(rng, 0.05, 0.8) * SEC)
        elif variant == 1:  # many cells but quick
            n, duration = _ui(rng, 100, 150), int(_uf(rng, 0.4, 0.9) * SEC)
        else:  # few cells but slow
            n, duration = _ui(rng, 3, 60), int(_uf(rng, 1.5, 3.0) * SEC)
        return TailPlan(True, False, n, duration, gap)
    if rng.random() < 0.5:  # wrong lead direction
        n, duration = _ui(rng, 3, 40), int(_uf(rng, 0.05, 0.8) * SEC)
        return TailPlan(False, True, n, duration, gap)
    # too long in both cells and duration
    n, duration = _ui(rng, 110, 180), int(_uf(rng, 1.3, 2.8) * SEC)
    return TailPlan(False, False, n, duration, gap)


def _emit_tail(rng: np.random.Generator, t: int, plan: TailPlan) -> tuple[list[CellEv], int]:
    cells: list[CellEv] = []
    t += plan.gap_ns
    start = t
    step = max(plan.duration_ns // max(plan.n_cells - 1, 1), 1)
    for i in range(plan.n_cells):
        if i == 0:
            direction = INCOMING if plan.incoming_led else OUTGOING
        else:
            direction = OUTGOING if rng.random() < 0.6 else INCOMING
        cells.append((t, direction, int(CellTypeCode.RELAY_DATA)))
        t += step
    if plan.n_cells > 1:
        # pin the span so sub-second variants stay sub-second
        cells[-1] = (start + plan.duration_ns, cells[-1][1], cells[-1][2])
        t = cells[-1][0]
    return cells, t


def _emit_bursts(
    rng: np.random.Generator,
    t: int,
    bursts: Sequence[tuple[int, int, float]],
    rtt_ms: float,
    sendme_interval: int,
) -> tuple[list[CellEv], int]:
    """Single-leg page payload: request bursts, responses, flow control."""
    cells: list[CellEv] = []
    received = 0
    for out, inc, think_ms in bursts:
        for _ in range(out):
            cells.append((t, OUTGOING, int(CellTypeCode.RELAY_DATA)))
            t += _ui(rng, 200_000, 1_200_000)
        t += int(rtt_ms * MS) + int(think_ms * MS)
        for _ in range(inc):
            cells.append((t, INCOMING, int(CellTypeCode.RELAY_DATA)))
            received += 1
            if received % sendme_interval == 0:
                cells.append((t + 300_000, OUTGOING, int(CellTypeCode.RELAY_SENDME)))
            t += _ui(rng, 300_000, 1_000_000)
    return cells, t


SHAPE_PRE = "pre"  # create/created then payload
SHAPE_POST_PLAIN = "post_plain"  # create/created, idle, begin/connected, payload
SHAPE_POST_LEG = "post_leg"  # create/created/link/linked/link-ack, idle, payload


@dataclass(frozen=True)
class PlainCircuitSpec:
    """Everything needed to emit one single-leg circuit."""

    t0: int
    bursts: tuple[tuple[int, int, float], ...]
    prebuilt_idle_ns: int
    invalid_kind: int  # 0 valid, 1 swapped opening, 2 incoming where outgoing is due
    tail: TailPlan | None
    shape: str = SHAPE_PRE


@dataclass
class EmittedCircuit:
    cells: list[CellEv]
    valid: bool
    payload_start: int
    payload_end: int


def _emit_plain_circuit(
    rng: np.random.Generator,
    spec: PlainCircuitSpec,
    rtt_ms: float,
    sendme_interval: int,
) -> EmittedCircuit:
    """Emit a full circuit: opening, payload, optional tail, teardown.

    The ``valid`` flag states whether the guard-visible opening pattern is
    protocol-conformant for the circuit's shape.
    """
    t = spec.t0
    rtt_ns = int(rtt_ms * MS)
    cells: list[CellEv] = []
    d1, d2 = (INCOMING, OUTGOING) if spec.invalid_kind == 1 else (OUTGOING, INCOMING)
    cells.append((t, d1, CELL_CREATE))
    t += rtt_ns
    cells.append((t, d2, CELL_CREATED))
    if spec.shape == SHAPE_POST_LEG:
        # linked legs are built and linked in one go; idle comes after
        t += _ui(rng, 1_000_000, 2_200_000)
        cells.append((t, OUTGOING, int(CellTypeCode.CFX_LINK)))
        t += rtt_ns
        cells.append((t, INCOMING, int(CellTypeCode.CFX_LINKED)))
        t += _ui(rng, 1_000_000, 2_200_000)
        ack_dir = INCOMING if spec.invalid_kind == 2 else OUTGOING
        cells.append((t, ack_dir, int(CellTypeCode.CFX_LINKED_ACK)))
        t += spec.prebuilt_idle_ns or _ui(rng, 500_000, 3_000_000)
    elif spec.shape == SHAPE_POST_PLAIN:
        # a plain circuit shows the same five-cell shape, but it sat idle
        # between construction and first use
        t += spec.prebuilt_idle_ns or _ui(rng, 500_000, 3_000_000)
        cells.append((t, OUTGOING, int(CellTypeCode.RELAY_BEGIN)))
        t += rtt_ns
        cells.append((t, INCOMING, int(CellTypeCode.RELAY_CONNECTED)))
        t += _ui(rng, 800_000, 2_200_000)
        if spec.invalid_kind == 2:
            cells.append((t, INCOMING, int(CellTypeCode.RELAY_DATA)))
            t += _ui(rng, 300_000, 1_000_000)
    else:
        t += spec.prebuilt_idle_ns or _ui(rng, 500_000, 3_000_000)
        if spec.invalid_kind == 2:
            cells.append((t, INCOMING, int(CellTypeCode.RELAY_DATA)))
            t += _ui(rng, 300_000, 1_000_000)
    payload_start = t
    payload, t = _emit_bursts(rng, t, spec.bursts, rtt_ms, sendme_interval)
    cells.extend(payload)
    payload_end = max(c[0] for c in payload) if payload else t
    if spec.tail is not None:
        tail_cells, t = _emit_tail(rng, t, spec.tail)
        cells.extend(tail_cells)
    t += _ui(rng, 100_000_000, 1_500_000_000)
    cells.append((t, OUTGOING, CELL_DESTROY))
    cells.append((t + _ui(rng, 1_000_000, 20_000_000), INCOMING, CELL_DESTROY))
    cells.sort(key=lambda c: c[0])
    return EmittedCircuit(cells, spec.invalid_kind == 0, payload_start, payload_end)


# --- linked two-leg visits -------------------------------------------------------


@dataclass(frozen=True)
class ConfluxVisitPlan:
    """Pre-drawn randomness for one linked visit.

    Every draw happens here, in a fixed order independent of scheduling
    outcomes, so the same plan replays under different RTT deltas with
    identical noise. Index 0 is the leg through the observed guard.
    """

    page: PageModel
    t0: int
    rtt_base_ms: tuple[float, float]
    idle_ns: int
    n_begins: int
    client_init_noise: tuple[float, float]
    exit_init_noise: tuple[float, float]
    client_noise: tuple[tuple[float, ...], tuple[float, ...]]
    exit_noise: tuple[tuple[float, ...], tuple[float, ...]]
    exit_switch_flags: tuple[bool, ...]
    out_spacing: tuple[int, ...]
    in_spacing: tuple[int, ...]
    turnaround_ns: tuple[int, ...]


def plan_conflux_visit(
    rng: np.random.Generator, config: ScenarioConfig, page: PageModel, t0: int
) -> ConfluxVisitPlan:
    total_out = sum(o for o, _, _ in page.bursts) + 3
    total_in = sum(i for _, i, _ in page.bursts)
    n_samples = (total_out + total_in) // config.sendme_interval + 4
    wander = _uf(rng, -8.0, 8.0)
    rtts = (
        max(config.leg_rtt_ms[0] + wander, 2.0),
        max(config.leg_rtt_ms[1] + wander + _uf(rng, -4.0, 4.0), 2.0),
    )
    noise = config.rtt_noise_ms

    def draw_pair(count):
        return (
            tuple(float(x) for x in rng.normal(0.0, noise, count)),
            tuple(float(x) for x in rng.normal(0.0, noise, count)),
        )

    client_noise = draw_pair(n_samples)
    exit_noise = draw_pair(n_samples)
    init_c = (float(rng.normal(0.0, noise)), float(rng.normal(0.0, noise)))
    init_x = (float(rng.normal(0.0, noise)), float(rng.normal(0.0, noise)))
    switch_flags = tuple(bool(rng.random() < config.exit_switch_prob) for _ in range(n_samples))
    out_spacing = tuple(int(x) for x in rng.integers(200_000, 1_200_000, total_out))
    in_spacing = tuple(int(x) for x in rng.integers(300_000, 1_000_000, total_in))
    turnarounds = tuple(int(x) for x in rng.integers(1_000_000, 2_200_000, 8))
    return ConfluxVisitPlan(
        page=page,
        t0=t0,
        rtt_base_ms=rtts,
        idle_ns=int(_uf(rng, *config.monitored_idle_range_s) * SEC),
        n_begins=_ui(rng, 1, 3),
        client_init_noise=init_c,
        exit_init_noise=init_x,
        client_noise=client_noise,
        exit_noise=exit_noise,
        exit_switch_flags=switch_flags,
        out_spacing=out_spacing,
        in_spacing=in_spacing,
        turnaround_ns=turnarounds,
    )


@dataclass
class ConfluxVisitSim:
    """Simulated linked visit: per-leg typed cells plus scheduler truth."""

    leg_cells: tuple[list[CellEv], list[CellEv]]
    client_primary: int  # leg index
    exit_primary: int
    fs: bool
    guard_cells: int  # data-phase cells on leg 0
    full_cells: int  # data-phase cells on both legs
    switches: int


def _array_sampler(arrays: tuple[tuple[float, ...], tuple[float, ...]], rtts, flags=None):
    def sample(leg: int, k: int) -> float:
        value = rtts[leg] + arrays[leg][k % len(arrays[leg])]
        if flags is not None and flags[k % len(flags)] and leg == 0:
            value += 200.0  # transient penalty: forces an occasional switch
        return value

    return sample


def simulate_conflux_visit(
    plan: ConfluxVisitPlan, config: ScenarioConfig, delta_ms: float | None = None
) -> ConfluxVisitSim:
    """Replay a visit plan under a given competitor RTT handicap."""
    if delta_ms is None:
        delta_ms = config.competitor_rtt_delta_ms
    rtts = (plan.rtt_base_ms[0], plan.rtt_base_ms[1] + delta_ms)
    legs: tuple[list[CellEv], list[CellEv]] = ([], [])

    # both legs are built and linked together, then sit until use
    link_done = plan.t0
    for leg in (0, 1):
        t = plan.t0 + plan.turnaround_ns[leg]
        rtt_ns = int(rtts[leg] * MS)
        legs[leg].append((t, OUTGOING, CELL_CREATE))
        t += rtt_ns
        legs[leg].append((t, INCOMING, CELL_CREATED))
        t += plan.turnaround_ns[2 + leg]
        legs[leg].append((t, OUTGOING, int(CellTypeCode.CFX_LINK)))
        t += rtt_ns
        legs[leg].append((t, INCOMING, int(CellTypeCode.CFX_LINKED)))
        t += plan.turnaround_ns[4 + leg]
        legs[leg].append((t, OUTGOING, int(CellTypeCode.CFX_LINKED_ACK)))
        link_done = max(link_done, t)

    client = LowRttScheduler(
        rtts,
        [
            LegState(rtts[0] + plan.client_init_noise[0], config.initial_cwnd),
            LegState(rtts[1] + plan.client_init_noise[1], config.initial_cwnd),
        ],
        config.sendme_interval,
        _array_sampler(plan.client_noise, rtts),
    )
    exit_side = LowRttScheduler(
        rtts,
        [
            LegState(rtts[0] + plan.exit_init_noise[0], config.initial_cwnd),
            LegState(rtts[1] + plan.exit_init_noise[1], config.initial_cwnd),
        ],
        config.sendme_interval,
        _array_sampler(plan.exit_noise, rtts, plan.exit_switch_flags),
    )

    t = link_done + plan.idle_ns
    oidx = iidx = 0
    client_primary = exit_primary = None
    for _ in range(plan.n_begins):
        t, leg, sm = client.send_one(t)
        legs[leg].append((t, OUTGOING, int(CellTypeCode.RELAY_BEGIN)))
        if client_primary is None:
            client_primary = leg
        if sm:
            legs[leg].append((t + int(rtts[leg] * MS), INCOMING, int(CellTypeCode.RELAY_SENDME)))
        t += plan.out_spacing[oidx]
        oidx += 1
    t_conn = t + int(rtts[client_primary] * MS)
    t_conn, xleg, _ = exit_side.send_one(t_conn)
    legs[xleg].append((t_conn, INCOMING, int(CellTypeCode.RELAY_CONNECTED)))
    exit_primary = xleg
    t = t_conn + plan.turnaround_ns[6]

    for out, inc, think_ms in plan.page.bursts:
        for _ in range(out):
            t, leg, sm = client.send_one(t)
            legs[leg].append((t, OUTGOING, int(CellTypeCode.RELAY_DATA)))
            if sm:
                legs[leg].append((t + int(rtts[leg] * MS), INCOMING, int(CellTypeCode.RELAY_SENDME)))
            t += plan.out_spacing[oidx % len(plan.out_spacing)]
            oidx += 1
        t += int(rtts[exit_primary] * MS) + int(think_ms * MS)
        for _ in range(inc):
            t, leg, sm = exit_side.send_one(t)
            legs[leg].append((t, INCOMING, int(CellTypeCode.RELAY_DATA)))
            if sm:
                legs[leg].append((t + 300_000, OUTGOING, int(CellTypeCode.RELAY_SENDME)))
            t += plan.in_spacing[iidx % len(plan.in_spacing)]
            iidx += 1

    guard_cells = len(legs[0]) - 5
    full_cells = guard_cells + len(legs[1]) - 5
    for leg in (0, 1):
        end = max(c[0] for c in legs[leg]) + plan.turnaround_ns[7]
        legs[leg].append((end, OUTGOING, CELL_DESTROY))
        legs[leg].append((end + 2_000_000, INCOMING, CELL_DESTROY))
        legs[leg].sort(key=lambda c: c[0])
    return ConfluxVisitSim(
        leg_cells=legs,
        client_primary=client_primary,
        exit_primary=exit_primary,
        fs=(client_primary == 0 and exit_primary == 0),
        guard_cells=guard_cells,
        full_cells=full_cells,
        switches=len(client.switches) + len(exit_side.switches),
    )


# --- channel generation ------------------------------------------------------


@dataclass(frozen=True)
class ChannelPlan:
    index: int
    kind: str
    visits: tuple[tuple[int, int], ...] = ()  # (page_idx, visit_serial)


@dataclass
class ChannelOutput:
    channel_id: int
    kind: str
    relay_auth: bool = False
    guard_rows: list = None  # (ts, circuit_id, direction)
    client_rows: list = None  # (ts, circuit_id, direction, cell_type)
    visit_rows: list = None  # (first_party, request_ts, target, circuit_id, leg_a, leg_b)
    circuits: list = None  # truth dicts
    visit_truth: list = None
    set_truth: list = None

    def __post_init__(self):
        for name in ("guard_rows", "client_rows", "visit_rows", "circuits",
                     "visit_truth", "set_truth"):
            if getattr(self, name) is None:
                setattr(self, name, [])


def _make_plans(config: ScenarioConfig) -> list[ChannelPlan]:
    plans: list[ChannelPlan] = []
    index = 0
    for _ in range(config.relay_auth_channels):
        plans.append(ChannelPlan(index, KIND_RELAY))
        index += 1
    # round-robin page schedule, split over channels
    schedule = [
        (page, rnd)
        for rnd in range(config.n_visits_per_page)
        for page in range(config.n_pages)
    ]
    for start in range(0, len(schedule), config.visits_per_channel):
        plans.append(
            ChannelPlan(index, KIND_MONITORED, tuple(schedule[start : start + config.visits_per_channel]))
        )
        index += 1
    rng = _rng(config.seed, 0x91A)
    n_spam = int(round(config.spam_channel_fraction * config.n_nonmon_channels))
    spam_slots: set[int] = set()
    if n_spam:
        spam_slots = set(
            int(x) for x in rng.choice(config.n_nonmon_channels, size=n_spam, replace=False)
        )
    for k in range(config.n_nonmon_channels):
        plans.append(ChannelPlan(index, KIND_SPAM if k in spam_slots else KIND_NONMON))
        index += 1
    return plans


def _id_pool(rng: np.random.Generator, channel_index: int, count: int) -> list[int]:
    """Distinct circuit ids in this channel's private block of the id space."""
    block = channel_index << _CIRCUIT_BLOCK_BITS
    offsets = rng.choice(2**_CIRCUIT_BLOCK_BITS, size=count, replace=False)
    return [block + int(o) for o in offsets]


def _apply_noise(rng: np.random.Generator, cells: list, config: ScenarioConfig) -> list:
    """Perturb the guard's view of one circuit: drops and adjacent swaps."""
    if config.drop_prob > 0:
        cells = [c for c in cells if rng.random() >= config.drop_prob]
    if config.reorder_prob > 0 and len(cells) > 1:
        cells = list(cells)
        for i in range(len(cells) - 1):
            if rng.random() < config.reorder_prob:
                (t1, d1), (t2, d2) = cells[i][:2], cells[i + 1][:2]
                cells[i], cells[i + 1] = (t1, d2), (t2, d1)
    return cells


def _expected_stage(kind: str, valid: bool, conflux_leg: bool, cell_count: int, phase: str) -> str:
    if kind == KIND_RELAY:
        return STAGE_RELAY
    if kind == KIND_SPAM:
        return STAGE_SPAM
    if kind in ("partial", "altsvc", "redirect"):
        return STAGE_UNSELECTED
    if not valid:
        return STAGE_HANDSHAKE
    if phase == POST and not conflux_leg:
        return STAGE_NON_CONFLUX
    if cell_count < 200:
        return STAGE_SMALL
    return STAGE_RETAINED


def _record_circuit(
    out: ChannelOutput,
    rng: np.random.Generator,
    config: ScenarioConfig,
    circuit_id: int,
    kind: str,
    emitted: EmittedCircuit,
    conflux_leg: bool,
    label: str | None,
    tail: TailPlan | None,
    stage_kind: str | None = None,
) -> None:
    guard_cells = _apply_noise(rng, [(ts, d) for ts, d, _ in emitted.cells], config)
    out.guard_rows.extend((ts, circuit_id, d) for ts, d in guard_cells)
    out.circuits.append(
        {
            "circuit_id": circuit_id,
            "channel_id": out.channel_id,
            "kind": kind,
            "label": label,
            "handshake_valid": emitted.valid,
            "conflux_leg": conflux_leg,
            "cell_count": len(emitted.cells),
            "tail_present": tail is not None,
            "tail_qualifies": bool(tail.qualifies) if tail else False,
            "tail_cells": tail.n_cells if tail else 0,
            "payload_start": emitted.payload_start,
            "payload_end": emitted.payload_end,
            "expected_stage": _expected_stage(
                stage_kind or kind, emitted.valid, conflux_leg, len(emitted.cells), config.phase
            ),
        }
    )


def _fill_relay(out: ChannelOutput, rng: np.random.Generator, config: ScenarioConfig, t0: int) -> None:
    out.relay_auth = True
    n = _ui(rng, 3, 8)
    ids = _id_pool(rng, out.channel_id, n)
    t = t0
    for circuit_id in ids:
        t += int(_uf(rng, 0.5, 20.0) * SEC)
        spec = PlainCircuitSpec(
            t0=t,
            bursts=_burst_skeleton(rng, _ui(rng, 50, 300)),
            prebuilt_idle_ns=0,
            invalid_kind=0,
            tail=None,
            shape=SHAPE_PRE,
        )
        emitted = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
        _record_circuit(out, rng, config, circuit_id, KIND_RELAY, emitted, False, None, None)


def _fill_spam(out: ChannelOutput, rng: np.random.Generator, config: ScenarioConfig, t0: int) -> None:
    n = _ui(rng, *config.spam_circuit_range)
    ids = _id_pool(rng, out.channel_id, n)
    t = t0
    rtt_ns = int(config.leg_rtt_ms[0] * MS)
    for circuit_id in ids:
        t += _ui(rng, 1_000_000, 80_000_000)
        m = _ui(rng, 2, 6)
        cells = [(t, OUTGOING), (t + rtt_ns, INCOMING)]
        ct = t + rtt_ns
        for _ in range(m - 2):
            ct += _ui(rng, 1_000_000, 30_000_000)
            cells.append((ct, OUTGOING if rng.random() < 0.5 else INCOMING))
        valid = m >= 3 and cells[2][1] == OUTGOING
        guard_cells = _apply_noise(rng, cells, config)
        out.guard_rows.extend((ts, circuit_id, d) for ts, d in guard_cells)
        out.circuits.append(
            {
                "circuit_id": circuit_id,
                "channel_id": out.channel_id,
                "kind": KIND_SPAM,
                "label": None,
                "handshake_valid": valid,
                "conflux_leg": False,
                "cell_count": m,
                "tail_present": False,
                "tail_qualifies": False,
                "tail_cells": 0,
                "payload_start": t,
                "payload_end": ct,
                "expected_stage": STAGE_SPAM,
            }
        )


def _fill_nonmon(out: ChannelOutput, rng: np.random.Generator, config: ScenarioConfig, t0: int) -> None:
    n = _ui(rng, *config.nonmon_circuits_range)
    ids = _id_pool(rng, out.channel_id, n)
    t = t0
    for circuit_id in ids:
        t += int(_uf(rng, 0.2, 40.0) * SEC)
        small = rng.random() < config.nonmon_small_fraction
        invalid = 0
        if rng.random() < config.invalid_handshake_fraction:
            invalid = _ui(rng, 1, 2)
        if config.phase == POST:
            conflux_leg = rng.random() < config.conflux_nonmon_fraction
            shape = SHAPE_POST_LEG if conflux_leg else SHAPE_POST_PLAIN
        else:
            conflux_leg = False
            shape = SHAPE_PRE
        total = _ui(rng, 8, 180) if small else _ui(rng, *config.nonmon_cell_range)
        tail = None if small else _plan_tail(rng, config)
        spec = PlainCircuitSpec(
            t0=t,
            bursts=_burst_skeleton(rng, total),
            prebuilt_idle_ns=int(_uf(rng, *config.prebuilt_idle_range_s) * SEC),
            invalid_kind=invalid,
            tail=tail,
            shape=shape,
        )
        emitted = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
        _record_circuit(out, rng, config, circuit_id, KIND_NONMON, emitted, conflux_leg, None, tail)


def _split_bursts(
    bursts: tuple[tuple[int, int, float], ...], frac: float
) -> tuple[tuple, tuple] | None:
    """Prefix/rest split where the rest strictly outweighs the prefix."""
    total = sum(o + i for o, i, _ in bursts)
    target = frac * total
    acc = 0
    k = 0
    for k, (o, i, _) in enumerate(bursts):
        if acc >= target:
            break
        acc += o + i
    k = max(1, min(k, len(bursts) - 1))
    while k > 1 and sum(o + i for o, i, _ in bursts[:k]) >= total / 2:
        k -= 1
    prefix, rest = bursts[:k], bursts[k:]
    if sum(o + i for o, i, _ in prefix) >= sum(o + i for o, i, _ in rest):
        return None
    return prefix, rest


def _fill_monitored_pre(
    out: ChannelOutput, rng: np.random.Generator, config: ScenarioConfig, t0: int, plan: ChannelPlan
) -> None:
    ids = iter(_id_pool(rng, out.channel_id, 4 * len(plan.visits) + 4))
    t = t0
    for page_idx, serial in plan.visits:
        page = page_model(config.seed, page_idx, config.page_cell_range)
        t += int(_uf(rng, 70.0, 130.0) * SEC)
        visit_id = f"v{out.channel_id:04d}-{serial:03d}-{page_idx:03d}"
        circuit_ids: list[int] = []
        rows: list[tuple] = []

        split = None
        if rng.random() < config.retry_prob and page.total_cells >= 500:
            split = _split_bursts(page.bursts, _uf(rng, 0.10, 0.30))
        main_bursts = page.bursts
        main_request = t

        if split is not None:
            prefix, main_bursts = split
            retry_id = next(ids)
            idle = int(_uf(rng, *config.monitored_idle_range_s) * SEC)
            creation = max(t - idle, 0)
            spec = PlainCircuitSpec(creation, prefix, t - creation, 0, None, SHAPE_PRE)
            emitted = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
            _record_circuit(out, rng, config, retry_id, "partial", emitted, False, page.label, None)
            rows.append((page.label, t, page.label, retry_id, None, None))
            circuit_ids.append(retry_id)
            main_request = t + int(_uf(rng, 3.0, 10.0) * SEC)

        main_id = next(ids)
        idle = int(_uf(rng, *config.monitored_idle_range_s) * SEC)
        creation = max(main_request - idle, 0)
        tail = _plan_tail(rng, config)
        spec = PlainCircuitSpec(
            creation, main_bursts, main_request - creation, 0, tail, SHAPE_PRE
        )
        main = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
        _record_circuit(out, rng, config, main_id, "main", main, False, page.label, tail)
        rows.append((page.label, main_request, page.label, main_id, None, None))
        circuit_ids.append(main_id)

        if rng.random() < config.altsvc_prob:
            alt_id = next(ids)
            alt_request = main_request + int(_uf(rng, 1.0, 8.0) * SEC)
            spec = PlainCircuitSpec(
                alt_request, _burst_skeleton(rng, _ui(rng, 40, 220)), 0, 0, None, SHAPE_PRE
            )
            emitted = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
            _record_circuit(out, rng, config, alt_id, "altsvc", emitted, False, page.label, None)
            rows.append((page.label, alt_request, f"alt-{page_idx:03d}.onion", alt_id, None, None))
            circuit_ids.append(alt_id)

        if rng.random() < config.redirect_prob:
            red_id = next(ids)
            red_request = main_request + int(_uf(rng, 2.0, 9.0) * SEC)
            spec = PlainCircuitSpec(
                red_request, _burst_skeleton(rng, _ui(rng, 80, 400)), 0, 0, None, SHAPE_PRE
            )
            emitted = _emit_plain_circuit(rng, spec, config.leg_rtt_ms[0], config.sendme_interval)
            _record_circuit(out, rng, config, red_id, "redirect", emitted, False, page.label, None)
            rows.append(
                (f"moved-{page.label}", red_request, f"moved-{page.label}", red_id, None, None)
            )
            circuit_ids.append(red_id)

        out.visit_rows.extend(rows)
        out.visit_truth.append(
            {
                "visit_id": visit_id,
                "label": page.label,
                "channel_id": out.channel_id,
                "main_circuit_id": main_id,
                "circuit_ids": circuit_ids,
                "window": [main.payload_start, main.payload_end],
                "client_tag": config.client_tag,
            }
        )


def _fill_monitored_post(
    out: ChannelOutput, rng: np.random.Generator, config: ScenarioConfig, t0: int, plan: ChannelPlan
) -> None:
    ids = iter(_id_pool(rng, out.channel_id, 2 * len(plan.visits) + 2))
    t = t0
    for page_idx, serial in plan.visits:
        page = page_model(config.seed, page_idx, config.page_cell_range)
        t += int(_uf(rng, 100.0, 160.0) * SEC)
        vplan = plan_conflux_visit(rng, config, page, t)
        sim = simulate_conflux_visit(vplan, config)
        guard_id, other_id = next(ids), next(ids)
        leg_ids = (guard_id, other_id)
        visit_id = f"v{out.channel_id:04d}-{serial:03d}-{page_idx:03d}"

        guard_cells = _apply_noise(rng, [(ts, d) for ts, d, _ in sim.leg_cells[0]], config)
        out.guard_rows.extend((ts, guard_id, d) for ts, d in guard_cells)
        for leg, circuit_id in enumerate(leg_ids):
            out.client_rows.extend(
                (ts, circuit_id, d, ct) for ts, d, ct in sim.leg_cells[leg]
            )

        begin_ts = next(
            ts for ts, d, ct in sorted(sim.leg_cells[sim.client_primary])
            if ct == int(CellTypeCode.RELAY_BEGIN)
        )
        out.visit_rows.append(
            (page.label, begin_ts, page.label, leg_ids[sim.client_primary], guard_id, other_id)
        )

        guard_count = len(sim.leg_cells[0])
        out.circuits.append(
            {
                "circuit_id": guard_id,
                "channel_id": out.channel_id,
                "kind": "leg",
                "label": page.label,
                "handshake_valid": True,
                "conflux_leg": True,
                "cell_count": guard_count,
                "tail_present": False,
                "tail_qualifies": False,
                "tail_cells": 0,
                "payload_start": begin_ts,
                "payload_end": max(ts for ts, _, _ in sim.leg_cells[0]),
                "expected_stage": _expected_stage("leg", True, True, guard_count, POST),
            }
        )
        out.visit_truth.append(
            {
                "visit_id": visit_id,
                "label": page.label,
                "channel_id": out.channel_id,
                "main_circuit_id": guard_id,
                "circuit_ids": [guard_id],
                "window": [begin_ts, max(ts for ts, _, _ in sim.leg_cells[0])],
                "client_tag": config.client_tag,
            }
        )
        out.set_truth.append(
            {
                "set_id": visit_id,
                "label": page.label,
                "channel_id": out.channel_id,
                "leg_guard": guard_id,
                "leg_other": other_id,
                "client_primary": leg_ids[sim.client_primary],
                "exit_primary": leg_ids[sim.exit_primary],
                "fs": sim.fs,
                "guard_cells": sim.guard_cells,
                "full_cells": sim.full_cells,
                "coverage": sim.guard_cells / sim.full_cells,
            }
        )


def _build_channel(args: tuple[ScenarioConfig, ChannelPlan]) -> ChannelOutput:
    config, plan = args
    rng = _rng(config.seed, 0xC4A, plan.index)
    out = ChannelOutput(plan.index, plan.kind)
    t0 = int(_uf(rng, 0.0, 600.0) * SEC)
    if plan.kind == KIND_RELAY:
        _fill_relay(out, rng, config, t0)
    elif plan.kind == KIND_SPAM:
        _fill_spam(out, rng, config, t0)
    elif plan.kind == KIND_NONMON:
        _fill_nonmon(out, rng, config, t0)
    elif config.phase == POST:
        _fill_monitored_post(out, rng, config, t0, plan)
    else:
        _fill_monitored_pre(out, rng, config, t0, plan)
    return out


# --- dataset assembly ---------------------------------------------------------


@dataclass
class GeneratedDataset:
    out_dir: Path
    guard_csv: Path
    client_csv: Path
    visits_csv: Path
    truth_json: Path


def generate_dataset(
    config: ScenarioConfig, out_dir: str | Path, jobs: int = 1
) -> GeneratedDataset:
    """Write guard.csv, client.csv, visits.csv, and truth.json."""
    from .parallel import parallel_map

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    plans = _make_plans(config)
    outputs = parallel_map(_build_channel, [(config, plan) for plan in plans], jobs)

    guard_rows: list[tuple[int, int, int, int]] = []
    client_rows: list[tuple[int, int, int, int, int]] = []
    visit_rows: list[tuple] = []
    channels_truth = []
    circuits_truth = []
    visits_truth = []
    sets_truth = []
    auth_ids = []
    for out in outputs:
        guard_rows.extend((ts, out.channel_id, cid, d) for ts, cid, d in out.guard_rows)
        client_rows.extend(
            (ts, out.channel_id, cid, d, ct) for ts, cid, d, ct in out.client_rows
        )
        visit_rows.extend(out.visit_rows)
        circuits_truth.extend(out.circuits)
        visits_truth.extend(out.visit_truth)
        sets_truth.extend(out.set_truth)
        if out.relay_auth:
            auth_ids.append(out.channel_id)
        channels_truth.append(
            {
                "channel_id": out.channel_id,
                "kind": out.kind,
                "spam": out.kind == KIND_SPAM,
                "relay_auth": out.relay_auth,
                "client_tag": config.client_tag if out.kind == KIND_MONITORED else None,
            }
        )

    guard_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    client_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    visit_rows.sort(key=lambda r: (r[1], r[3]))

    guard_csv = out_path / "guard.csv"
    lines = ["channel_id,circuit_id,timestamp_ns,direction"]
    lines.extend(f"#AUTH,{cid}" for cid in sorted(auth_ids))
    lines.extend(f"{ch},{cid},{ts},{d}" for ts, ch, cid, d in guard_rows)
    guard_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")

    client_csv = out_path / "client.csv"
    lines = ["channel_id,circuit_id,timestamp_ns,direction,cell_type"]
    lines.extend(f"{ch},{cid},{ts},{d},{ct}" for ts, ch, cid, d, ct in client_rows)
    client_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")

    visits_csv = out_path / "visits.csv"
    lines = ["first_party_domain,request_ts,target_domain,circuit_id"]
    for fp, ts, target, cid, leg_a, leg_b in visit_rows:
        if leg_a is None:
            lines.append(f"{fp},{ts},{target},{cid}")
        else:
            lines.append(f"{fp},{ts},{target},{cid},{leg_a},{leg_b}")
    visits_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")

    truth_json = out_path / "truth.json"
    truth = {
        "scenario": asdict(config),
        "channels": channels_truth,
        "circuits": circuits_truth,
        "visits": visits_truth,
        "sets": sets_truth,
        "summary": {
            "n_channels": len(channels_truth),
            "n_circuits": len(circuits_truth),
            "n_visits": len(visits_truth),
            "n_sets": len(sets_truth),
            "spam_channels": sorted(
                c["channel_id"] for c in channels_truth if c["spam"]
            ),
            "stage_counts": {
                stage: sum(1 for c in circuits_truth if c["expected_stage"] == stage)
                for stage in sorted({c["expected_stage"] for c in circuits_truth})
            },
        },
    }
    truth_json.write_text(
        json.dumps(truth, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    return GeneratedDataset(out_path, guard_csv, client_csv, visits_csv, truth_json)


# --- in-memory helpers ---------------------------------------------------------


@dataclass
class SimulatedSet:
    """One linked set with typed legs, the guard's view, and scheduler truth."""

    conflux_set: ConfluxSet
    guard_leg_id: int
    guard_trace: Trace
    fs: bool
    coverage: float


def simulate_conflux_sets(config: ScenarioConfig, n_sets: int):
    """Yield linked sets one at a time (cell volumes can be large)."""
    for k in range(n_sets):
        rng = _rng(config.seed, 0x5E7, k)
        page = page_model(config.seed, k % config.n_pages, config.page_cell_range)
        plan = plan_conflux_visit(rng, config, page, t0=0)
        sim = simulate_conflux_visit(plan, config)
        id_a, id_b = 2 * k + 1, 2 * k + 2
        leg_ids = (id_a, id_b)
        leg_a = Circuit(id_a, [CellRecord(k, id_a, ts, d, ct) for ts, d, ct in sim.leg_cells[0]])
        leg_b = Circuit(id_b, [CellRecord(k, id_b, ts, d, ct) for ts, d, ct in sim.leg_cells[1]])
        truth = SetGroundTruth(
            client_primary=leg_ids[sim.client_primary],
            exit_primary=leg_ids[sim.exit_primary],
        )
        guard = sim.leg_cells[0][5:]
        base = guard[0][0]
        guard_trace = Trace(tuple((ts - base, d) for ts, d, _ in guard), phase=POST)
        yield SimulatedSet(
            conflux_set=ConfluxSet(leg_a, leg_b, truth),
            guard_leg_id=id_a,
            guard_trace=guard_trace,
            fs=sim.fs,
            coverage=sim.guard_cells / sim.full_cells,
        )


def run_rtt_advantage_sweep(
    config: ScenarioConfig, deltas_ms: Sequence[float], n_visits: int | None = None
) -> list[dict]:
    """Coverage and first-segment statistics as the competitor leg slows.

    Visit plans are drawn once and replayed under every delta, so each
    visit sees identical noise across the sweep.
    """
    if any(d < 0 for d in deltas_ms):
        raise ConfigError("deltas must be non-negative")
    if n_visits is None:
        n_visits = config.n_pages * config.n_visits_per_page
    plans = []
    for v in range(n_visits):
        rng = _rng(config.seed, 0x5EE, v)
        page = page_model(config.seed, v % config.n_pages, config.page_cell_range)
        plans.append(plan_conflux_visit(rng, config, page, t0=0))
    rows = []
    for delta in deltas_ms:
        coverages = []
        fs_count = 0
        switch_total = 0
        for plan in plans:
            sim = simulate_conflux_visit(plan, config, delta)
            coverages.append(sim.guard_cells / sim.full_cells)
            fs_count += sim.fs
            switch_total += sim.switches
        cov = np.array(coverages)
        rows.append(
            {
                "delta_ms": float(delta),
                "n_visits": n_visits,
                "median_coverage": float(np.median(cov)),
                "mean_coverage": float(cov.mean()),
                "frac_coverage_ge_80": float((cov >= 0.8).mean()),
                "fs_fraction": fs_count / n_visits,
                "mean_switches": switch_total / n_visits,
            }
        )
    return rows
