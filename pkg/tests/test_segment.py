import numpy as np
import pytest

from conftest import MS, SEC, channel_of
from guardsift.errors import EmptySegmentError
from guardsift.segment import extract_monitored_window, plan_windows, segment_nonmonitored
from guardsift.trace import CellRecord, Channel, Circuit


def spanning_circuit(circuit_id, start_s, end_s, channel_id=1, n=40, lead=1):
    """Circuit with n cells spread over [start_s, end_s]."""
    step = max(int((end_s - start_s) * SEC) // max(n - 1, 1), 1)
    cells = []
    t = int(start_s * SEC)
    for i in range(n):
        d = lead if i == 0 else (1 if i % 3 == 0 else -1)
        cells.append(CellRecord(channel_id, circuit_id, t, d))
        t += step
    cells[-1] = CellRecord(channel_id, circuit_id, int(end_s * SEC), cells[-1].direction)
    return Circuit(circuit_id, cells)


class TestMonitoredWindow:
    def test_merges_overlapping_circuits(self):
        ch = channel_of(
            spanning_circuit(1, 0, 10), spanning_circuit(2, 5, 9), channel_id=3
        )
        trace = extract_monitored_window(ch, 0, 10 * SEC, label="p")
        # both circuits contribute, time-sorted, teardown pair removed
        assert len(trace.cells) == 80 - 2
        assert all(b >= a for (a, _), (b, _) in zip(trace.cells, trace.cells[1:]))
        assert trace.label == "p"

    def test_leading_incoming_dropped(self):
        cells = [CellRecord(1, 1, i * MS, -1) for i in range(3)]
        cells += [CellRecord(1, 1, (3 + i) * MS, 1) for i in range(10)]
        ch = channel_of(Circuit(1, cells))
        trace = extract_monitored_window(ch, 0, SEC)
        assert trace.cells[0] == (0, 1)
        assert len(trace.cells) == 8

    def test_empty_window_raises(self):
        ch = channel_of(spanning_circuit(1, 100, 200))
        with pytest.raises(EmptySegmentError):
            extract_monitored_window(ch, 0, SEC)

    def test_no_outgoing_raises(self):
        cells = [CellRecord(1, 1, i * MS, -1) for i in range(10)]
        ch = channel_of(Circuit(1, cells))
        with pytest.raises(EmptySegmentError):
            extract_monitored_window(ch, 0, SEC)

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            extract_monitored_window(channel_of(spanning_circuit(1, 0, 1)), 5, 5)


class TestGreedySegmentation:
    def test_single_circuit_single_trace(self):
        ch = channel_of(spanning_circuit(1, 0, 10))
        traces = segment_nonmonitored(ch)
        assert len(traces) == 1

    def test_overlap_consumed_into_one_window(self):
        ch = channel_of(
            spanning_circuit(1, 0, 10, n=20), spanning_circuit(2, 5, 20, n=20)
        )
        windows = plan_windows(ch)
        assert len(windows) == 1
        assert windows[0].consumed_circuit_ids == {1, 2}
        traces = segment_nonmonitored(ch)
        assert len(traces) == 1
        # circuit 2 cells beyond the window are dropped, not reused
        in_window = sum(1 for c in ch.circuits[2].cells if c.timestamp <= 10 * SEC)
        assert len(traces[0].cells) == 20 + in_window - 2

    def test_disjoint_circuits_two_windows(self):
        ch = channel_of(
            spanning_circuit(1, 0, 10, n=20), spanning_circuit(3, 30, 40, n=20)
        )
        assert len(plan_windows(ch)) == 2
        assert len(segment_nonmonitored(ch)) == 2

    def test_touching_endpoints_count_as_overlap(self):
        ch = channel_of(
            spanning_circuit(1, 0, 10, n=4), spanning_circuit(2, 10, 15, n=4)
        )
        windows = plan_windows(ch)
        assert len(windows) == 1
        assert windows[0].consumed_circuit_ids == {1, 2}

    def test_consumption_is_a_partition(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            circuits = []
            for cid in range(int(rng.integers(1, 8))):
                start = float(rng.uniform(0, 60))
                circuits.append(
                    spanning_circuit(cid, start, start + float(rng.uniform(1, 30)), n=int(rng.integers(4, 30)))
                )
            ch = channel_of(*circuits)
            windows = plan_windows(ch)
            consumed = [cid for w in windows for cid in w.consumed_circuit_ids]
            assert sorted(consumed) == sorted(ch.circuits)

    def test_every_trace_starts_outgoing(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            circuits = []
            for cid in range(int(rng.integers(1, 6))):
                start = float(rng.uniform(0, 40))
                lead = 1 if rng.random() < 0.5 else -1
                circuits.append(
                    spanning_circuit(cid, start, start + float(rng.uniform(1, 20)), n=int(rng.integers(4, 25)), lead=lead)
                )
            for trace in segment_nonmonitored(channel_of(*circuits)):
                assert trace.cells[0][1] == 1

    def test_empty_channel(self):
        assert segment_nonmonitored(Channel(1)) == []

    def test_single_circuit_matches_sanitizer_modulo_handshake(self):
        # one circuit, built by hand: handshake, long idle, 300-cell load
        # spread over ~8 s, a qualifying shutdown tail, then teardown
        from guardsift.sanitize import SanitizeConfig, trim_head, trim_tail

        cells = [CellRecord(1, 9, 0, 1), CellRecord(1, 9, 60 * MS, -1)]
        t = 30 * SEC
        for i in range(300):
            cells.append(CellRecord(1, 9, t, 1 if i % 5 == 0 else -1))
            t += 27 * MS
        t += 6 * SEC
        for i in range(20):
            cells.append(CellRecord(1, 9, t, 1 if i == 0 else -1))
            t += 10 * MS
        cells.append(CellRecord(1, 9, t + 500 * MS, 1))
        cells.append(CellRecord(1, 9, t + 510 * MS, -1))
        circuit = Circuit(9, cells)
        channel = channel_of(circuit)

        seg_traces = segment_nonmonitored(channel)
        assert len(seg_traces) == 1
        sanitized = trim_tail(trim_head(circuit, "pre"), SanitizeConfig())
        # the segmentation view keeps the two handshake cells; after them
        # the two paths carry identical inter-arrival structure
        seg_tail = seg_traces[0].cells[2:]
        base = seg_tail[0][0]
        assert tuple((ts - base, d) for ts, d in seg_tail) == sanitized.cells
