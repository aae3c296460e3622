"""Evaluation-time trace perturbations: jitter and truncation."""

from __future__ import annotations

import numpy as np

from .trace import Trace

MS = 1_000_000


def inject_jitter(
    trace: Trace,
    jitter_ms: float,
    rng: np.random.Generator,
    max_duration_ns: int = 45_000_000_000,
) -> Trace:
    """Add uniform [0, J] ms delay to every inter-arrival gap.

    The first cell stays at its timestamp; later cells shift by the
    accumulated jitter, so the trace only ever stretches. Cells pushed
    past ``max_duration_ns`` are dropped. J = 0 returns the trace as is.
    """
    if jitter_ms < 0:
        raise ValueError("jitter must be non-negative")
    if jitter_ms == 0 or len(trace.cells) < 2:
        return trace
    cells = [trace.cells[0]]
    shift = 0
    for (prev_ts, _), (ts, direction) in zip(trace.cells, trace.cells[1:]):
        shift += int(round(rng.uniform(0.0, jitter_ms) * MS))
        cells.append((ts + shift, direction))
    kept = [c for c in cells if c[0] - cells[0][0] <= max_duration_ns]
    return trace.with_cells(kept)


def truncate_percent(trace: Trace, percent: float) -> Trace:
    """Keep the first ``percent`` of cells (floor, at least one cell)."""
    if not 1 <= percent <= 100:
        raise ValueError("percent must be in [1, 100]")
    if not trace.cells:
        return trace
    keep = max(1, int(len(trace.cells) * percent // 100))
    if keep >= len(trace.cells):
        return trace
    return trace.with_cells(trace.cells[:keep])


def truncate_length(trace: Trace, max_len: int = 5000) -> Trace:
    """Keep the first ``max_len`` cells."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if len(trace.cells) <= max_len:
        return trace
    return trace.with_cells(trace.cells[:max_len])
