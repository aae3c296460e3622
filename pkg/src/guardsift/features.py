"""Classifier-ready representations of traces.

Three views: the raw direction sequence, the signed-timing sequence, and
a 2 x N per-direction count matrix over fixed time slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trace import OUTGOING, Trace

SEC = 1_000_000_000


def direction_sequence(trace: Trace, length: int = 5000) -> np.ndarray:
    """Directions in order, zero-padded or truncated to ``length``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    out = np.zeros(length, dtype=np.int8)
    for i, (_, d) in enumerate(trace.cells[:length]):
        out[i] = d
    return out


def directional_timing(trace: Trace, length: int = 5000) -> np.ndarray:
    """Per-cell timestamp in seconds, signed by direction, zero-padded."""
    if length < 1:
        raise ValueError("length must be >= 1")
    out = np.zeros(length, dtype=np.float64)
    for i, (ts, d) in enumerate(trace.cells[:length]):
        out[i] = (ts / SEC) * d
    return out


@dataclass(frozen=True)
class TAM:
    """Per-direction cell counts over fixed time slots.

    Row 0 counts outgoing cells, row 1 incoming. A cell at time t lands in
    slot floor(t / slot_duration), clamped so t == t_max falls in the last
    slot; cells past t_max are dropped.
    """

    matrix: np.ndarray
    t_max_s: float
    n_slots: int

    @property
    def slot_duration_s(self) -> float:
        return self.t_max_s / self.n_slots

    def total(self) -> int:
        return int(self.matrix.sum())


def build_tam(trace: Trace, t_max_s: float, n_slots: int) -> TAM:
    """Count cells into a 2 x ``n_slots`` matrix covering [0, t_max]."""
    if t_max_s <= 0:
        raise ValueError("t_max must be positive")
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    t_max_ns = int(round(t_max_s * SEC))
    matrix = np.zeros((2, n_slots), dtype=np.int64)
    for ts, d in trace.cells:
        if ts > t_max_ns:
            continue
        # integer slot index: exact, and pairwise-coarsening safe
        slot = min(ts * n_slots // t_max_ns, n_slots - 1)
        matrix[0 if d == OUTGOING else 1, slot] += 1
    return TAM(matrix=matrix, t_max_s=t_max_s, n_slots=n_slots)


def coarsen_tam(tam: TAM, factor: int = 2) -> TAM:
    """Merge adjacent slot groups; totals are preserved."""
    if tam.n_slots % factor != 0:
        raise ValueError("n_slots must be divisible by the coarsening factor")
    merged = tam.matrix.reshape(2, tam.n_slots // factor, factor).sum(axis=2)
    return TAM(matrix=merged, t_max_s=tam.t_max_s, n_slots=tam.n_slots // factor)


def default_t_max(traces: Sequence[Trace]) -> float:
    """Longest trace duration in seconds; the usual matrix horizon."""
    if not traces:
        raise ValueError("no traces")
    return max(t.duration_ns for t in traces) / SEC


def slot_sweep(
    traces: Sequence[Trace], t_max_s: float, slot_durations_s: Sequence[float]
) -> list[tuple[float, int, list[TAM]]]:
    """Build matrices at several slot granularities.

    For each requested duration, the slot count is round(t_max / duration).
    """
    results = []
    for duration in slot_durations_s:
        if duration <= 0:
            raise ValueError("slot durations must be positive")
        n_slots = max(1, round(t_max_s / duration))
        results.append((duration, n_slots, [build_tam(t, t_max_s, n_slots) for t in traces]))
    return results


def write_features(path: str | Path, array: np.ndarray, meta: dict | None = None) -> None:
    """Row-major binary dump plus a JSON header sidecar."""
    path = Path(path)
    array = np.ascontiguousarray(array)
    array.tofile(path)
    header = {"shape": list(array.shape), "dtype": str(array.dtype)}
    header.update(meta or {})
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(header, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_features(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    array = np.fromfile(path, dtype=np.dtype(header["dtype"])).reshape(header["shape"])
    return array, header


def write_features_csv(path: str | Path, array: np.ndarray) -> None:
    """Plain-text alternative for inspection."""
    arr = np.asarray(array)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    fmt = "%d" if np.issubdtype(arr.dtype, np.integer) else "%.9g"
    np.savetxt(path, arr, fmt=fmt, delimiter=",")
