import pytest
from hypothesis import given, strategies as st

from mcastsim.dataplane import (DATA_PRIORITY, HEADER_LEN, MAX_PAYLOAD, MGMT_ADDRESS, FlowEntry,
                                FlowTable, Output, OutputQueue, Packet, SwitchState, ToController,
                                address_host, group_address, host_address, management_entry,
                                match_packet)
from mcastsim.sim_core import MS, US
from mcastsim.topology import MBPS

G = group_address(1)


def pkt(n=MAX_PAYLOAD, tag=1, seq=0, dst=G):
    return Packet(dst, bytes(n), route_tag=tag, global_seq=seq)


def test_packet_size_and_limits():
    assert pkt().size == 1500
    assert pkt(100).size == 100 + HEADER_LEN
    for n in (0, MAX_PAYLOAD + 1):
        with pytest.raises(ValueError):
            pkt(n)


def test_addresses():
    assert address_host(host_address(7)) == 7
    assert address_host(G) is None
    assert G != MGMT_ADDRESS


def test_full_packet_serializes_in_2_4_ms_at_5_mbps():
    q = OutputQueue(0, 1, 5 * MBPS, 50 * US, 64)
    assert q.enqueue(pkt(), 0) == 2400 * US + 50 * US


def test_drop_tail_at_queue_limit():
    q = OutputQueue(0, 1, 5 * MBPS, 0, 64)
    accepted = [q.enqueue(pkt(seq=i), 0) for i in range(70)]
    assert sum(a is not None for a in accepted) == 64
    assert accepted[64:] == [None] * 6 and q.dropped == 6
    # after one transmission completes there is room for exactly one more
    assert q.enqueue(pkt(), 2400 * US) is not None
    assert q.enqueue(pkt(), 2400 * US) is None


@given(st.lists(st.tuples(st.integers(0, 5 * MS), st.integers(1, MAX_PAYLOAD)), max_size=80))
def test_fifo_work_conserving_and_conserved(arrivals):
    q = OutputQueue(0, 1, 5 * MBPS, 0, 16)
    q.departures = []
    out = []
    for t, n in sorted(arrivals):
        a = q.enqueue(pkt(n), t)
        if a is not None:
            out.append(a)
    assert out == sorted(out)
    assert q.enqueued + q.dropped == len(arrivals) == len(out) + q.dropped
    # no idle gap while there is backlog: each start is its arrival or the previous end
    ends = [0] + [e for _, e in q.departures]
    starts = [s for s, _ in q.departures]
    times = sorted(t for t, _ in arrivals)
    for (s, _), prev_end in zip(q.departures, ends):
        assert s >= prev_end
    assert all(s == prev or s in times for s, prev in zip(starts, ends))


def test_flow_table_priority_and_wildcard():
    table = FlowTable([management_entry()])
    data = FlowEntry(G, 1, (Output(5),))
    table.apply_update([data])
    assert match_packet(table, pkt(tag=1)) == (Output(5),)
    assert match_packet(table, pkt(tag=2)) is None
    mgmt = Packet(MGMT_ADDRESS, b"x", route_tag=123)
    assert match_packet(table, mgmt) == (ToController(),)
    assert table.entries[0].priority > DATA_PRIORITY


def test_flow_table_update_replaces_and_removes():
    table = FlowTable()
    table.apply_update([FlowEntry(G, 1, (Output(1),))])
    table.apply_update([FlowEntry(G, 1, (Output(2),))])
    assert len(table) == 1 and table.get((G, 1)).actions == (Output(2),)
    # removal happens before addition within one update
    table.apply_update([FlowEntry(G, 1, (Output(3),))], remove=[(G, 1)])
    assert table.get((G, 1)).actions == (Output(3),)
    table.apply_update(remove=[(G, 1), (G, 9)])
    assert len(table) == 0
    with pytest.raises(ValueError):
        FlowEntry(G, 1, ())


def _switch(limit=64):
    ports = {p: OutputQueue(0, p, 5 * MBPS, 0, limit) for p in (1, 2)}
    sw = SwitchState(0, "sw", ports)
    sw.apply_table_update([FlowEntry(G, 1, (Output(1), Output(2)))])
    return sw


def test_fan_out_copies_are_independent():
    sw = _switch(limit=2)
    sent = []
    transmit = lambda q, p, t: sent.append(q.dst)  # noqa: E731
    # fill port 1 only
    sw.ports[1].enqueue(pkt(), 0)
    sw.ports[1].enqueue(pkt(), 0)
    assert sw.forward(pkt(), 0, transmit, None) == 1
    assert sent == [2]
    c = sw.counters
    assert (c.copies, c.forwarded, c.dropped) == (2, 1, 1)


def test_table_miss_and_punt():
    sw = _switch()
    punted = []
    assert sw.forward(pkt(tag=7), 0, None, None) == 0
    assert sw.counters.missed == 1
    sw.forward(Packet(MGMT_ADDRESS, b"hi"), 0, None, lambda s, p: punted.append(p))
    assert len(punted) == 1 and sw.counters.to_controller == 1


def test_failed_queue_drops_everything():
    q = OutputQueue(0, 1, 5 * MBPS, 0, 64)
    for _ in range(3):
        q.enqueue(pkt(), 0)
    assert q.fail(MS) == 3 and q.generation == 1
    assert q.enqueue(pkt(), 2 * MS) is None and q.dropped == 4
