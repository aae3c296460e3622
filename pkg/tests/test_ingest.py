import io

import pytest

from guardsift.errors import ParseError
from guardsift.ingest import (
    filter_relay_channels,
    parse_client_log,
    parse_guard_log,
    parse_visit_log,
)


def test_grouping_by_channel_and_circuit():
    log = io.StringIO("5,9,100,1\n5,12,200,-1\n")
    parsed = parse_guard_log(log, "tag")
    assert len(parsed.channels) == 1
    channel = parsed.channels[0]
    assert channel.channel_id == 5
    assert sorted(channel.circuits) == [9, 12]
    assert channel.source_tag == "tag"
    assert parsed.cell_count == 2


def test_header_line_is_skipped():
    log = io.StringIO("channel_id,circuit_id,timestamp_ns,direction\n1,2,0,1\n")
    parsed = parse_guard_log(log)
    assert parsed.cell_count == 1
    assert parsed.line_count == 1


def test_direction_zero_is_parse_error():
    with pytest.raises(ParseError) as err:
        parse_guard_log(io.StringIO("1,2,100,0\n"))
    assert "line 1" in str(err.value)


def test_empty_file_gives_empty_channel_set():
    parsed = parse_guard_log(io.StringIO(""))
    assert parsed.channels == []


def test_duplicates_are_counted_not_fatal():
    log = io.StringIO("1,2,100,1\n1,2,100,1\n1,2,101,-1\n")
    parsed = parse_guard_log(log)
    assert parsed.duplicate_count == 1
    assert parsed.cell_count == 2
    # cell count = data lines minus deduplicated records
    assert parsed.cell_count == parsed.line_count - parsed.duplicate_count
    # partition: every parsed cell belongs to exactly one (channel, circuit)
    assert sum(len(c.cells) for ch in parsed.channels for c in ch.circuits.values()) == 2


def test_auth_marker_flags_channel():
    log = io.StringIO("#AUTH,7\n7,1,0,1\n8,1,0,1\n")
    parsed = parse_guard_log(log)
    flags = {ch.channel_id: ch.relay_authenticated for ch in parsed.channels}
    assert flags == {7: True, 8: False}
    kept, dropped = filter_relay_channels(parsed.channels)
    assert dropped == 1
    assert [ch.channel_id for ch in kept] == [8]


def test_filter_relay_identity_and_empty():
    parsed = parse_guard_log(io.StringIO("1,1,0,1\n2,1,0,1\n"))
    kept, dropped = filter_relay_channels(parsed.channels)
    assert dropped == 0 and len(kept) == 2
    for ch in parsed.channels:
        ch.relay_authenticated = True
    kept, dropped = filter_relay_channels(parsed.channels)
    assert kept == [] and dropped == 2


def test_client_log_requires_cell_type():
    with pytest.raises(ParseError):
        parse_client_log(io.StringIO("1,3,0,1\n"), io.StringIO(""))


def test_client_log_joins_visits_and_cells():
    cells = io.StringIO(
        "".join(f"1,3,{ts},1,2\n" for ts in range(0, 600, 100))
    )
    visits = io.StringIO("example.com,50,example.com,3\n")
    log = parse_client_log(cells, visits)
    assert len(log.visits) == 1
    assert log.visits[0].circuit_id == 3
    circuit = log.circuit_map()[3]
    assert len(circuit.cells) == 6


def test_conflux_visit_meta_populated():
    visits = parse_visit_log(io.StringIO("example.com,10,example.com,3,3,4\n"))
    meta = visits[0].conflux_meta
    assert meta is not None and meta.linked
    assert meta.leg_ids == (3, 4)


def test_link_ack_cell_type_parsed():
    cells = io.StringIO("1,3,0,1,21\n")
    log = parse_client_log(cells, io.StringIO(""))
    assert log.circuit_map()[3].cells[0].cell_type == 21
