import pytest

from mcastsim.dataplane import HEADER_LEN, MAX_PAYLOAD, Packet, group_address
from mcastsim.endhost import (BLOCKED, DONE, BlockSource, HostError, Reassembly, ReceiverState,
                              SenderState)
from mcastsim.sim_core import MS, SEC
from mcastsim.topology import MBPS

SOURCE = BlockSource(bytes(range(256)) * 255 + bytes(range(241)))


def drain(state, until, step=10_000):
    """Send everything the state allows up to ``until``; returns tags in send order."""
    tags = []
    t = 0
    while t <= until:
        r = state.split_next(t)
        if r is DONE:
            break
        if r is BLOCKED:
            nxt = state.next_send_time(t)
            if nxt is None:
                break
            t = max(nxt, t + 1) if nxt <= until else until + 1
            continue
        tags.append(r[0])
    return tags


def test_block_source_wraps():
    assert SOURCE.read(BlockSource.PERIOD + 5, 10) == SOURCE.read(5, 10)
    assert len(SOURCE.read(BlockSource.PERIOD - 3, MAX_PAYLOAD)) == MAX_PAYLOAD
    with pytest.raises(ValueError):
        BlockSource(b"short")


def test_equal_shares_send_equal_counts():
    st = SenderState(1, 1, [(1, 5 * MBPS), (2, 5 * MBPS), (3, 5 * MBPS)], None, SOURCE)
    tags = drain(st, SEC)
    counts = [tags.count(t) for t in (1, 2, 3)]
    assert max(counts) - min(counts) <= 1
    # each tree paced at its share over wire bytes
    assert abs(counts[0] * 1500 * 8 - 5 * MBPS) <= 2 * 1500 * 8


def test_drr_splits_by_share():
    st = SenderState(1, 1, [(1, 10 * MBPS), (2, 5 * MBPS)], None, SOURCE)
    tags = drain(st, 2 * SEC)
    ratio = tags.count(1) / tags.count(2)
    assert 1.95 <= ratio <= 2.05


def test_unpaced_sends_twice_the_share():
    paced = drain(SenderState(1, 1, [(1, 5 * MBPS)], None, SOURCE), SEC)
    unpaced = drain(SenderState(1, 1, [(1, 5 * MBPS)], None, SOURCE, pacing="unpaced"), SEC)
    assert abs(len(unpaced) - 2 * len(paced)) <= 2


def test_block_ends_with_a_short_packet():
    block = 3 * MAX_PAYLOAD + 10
    st = SenderState(1, 1, [(1, 5 * MBPS)], block, SOURCE)
    sizes = []
    t = 0
    while True:
        r = st.split_next(t)
        if r is DONE:
            break
        if r is BLOCKED:
            t = st.next_send_time(t)
            continue
        sizes.append(len(r[1].payload))
    assert sizes == [MAX_PAYLOAD] * 3 + [10]
    assert st.remaining_bytes == 0 and st.next_send_time(t) is None


def test_sequence_numbers():
    st = SenderState(4, 9, [(1, 5 * MBPS), (2, 5 * MBPS)], None, SOURCE)
    pkts = []
    t = 0
    while len(pkts) < 20:
        r = st.split_next(t)
        if r is BLOCKED:
            t = st.next_send_time(t)
        else:
            pkts.append(r[1])
    assert [p.global_seq for p in pkts] == list(range(20))
    for tag in (1, 2):
        subs = [p.subflow_seq for p in pkts if p.route_tag == tag]
        assert subs == list(range(len(subs)))
    assert all(p.session_id == 4 and p.dst_addr == group_address(9) for p in pkts)


def test_pause_and_resume_keep_counters():
    st = SenderState(1, 1, [(1, 5 * MBPS), (2, 5 * MBPS)], None, SOURCE)
    drain(st, 100 * MS)
    before = st.bytes_by_tag()
    st.apply_update([], 100 * MS)
    assert st.paused and st.split_next(100 * MS) is BLOCKED
    assert st.next_send_time(100 * MS) is None
    st.apply_update([(2, 5 * MBPS)], 200 * MS)
    r = st.split_next(200 * MS)
    assert r[0] == 2 and r[1].subflow_seq == before[2] // MAX_PAYLOAD
    assert st.bytes_by_tag()[1] == before[1]


def _p(seq, n=10, tag=1, sid=1):
    return Packet(group_address(1), bytes([seq % 256]) * n, route_tag=tag, session_id=sid,
                  global_seq=seq)


def test_reassembly_orders_and_counts_duplicates():
    r = Reassembly()
    assert [p.global_seq for p in r.push(_p(0))] == [0]
    assert r.push(_p(2)) == []
    out = r.push(_p(1))
    assert [p.global_seq for p in out] == [1, 2]
    r.push(_p(1))
    r.push(_p(5))
    r.push(_p(5))
    assert r.duplicates == 2


def test_reassembly_skip_gap_flushes_everything():
    r = Reassembly()
    for s in (2, 3, 6):
        r.push(_p(s))
    out = r.skip_gap()
    assert [p.global_seq for p in out] == [2, 3, 6]
    assert r.skipped_packets == 2 + 2 and r.next_seq == 7 and not r.waiting


def test_reassembly_limit_evicts_highest():
    r = Reassembly(limit=3)
    for s in (5, 1, 9, 7):
        r.push(_p(s))
    assert sorted(r.buffer) == [1, 5, 7] and r.evicted == 1


def test_receiver_state_ignores_unjoined_groups_and_tracks_trees():
    rs = ReceiverState(3)
    assert rs.receive(_p(0), 0) == 0 and rs.strays == 1
    rs.join(1)
    assert rs.receive(_p(0, tag=1), 0) == 10
    assert rs.receive(_p(1, tag=2), 0) == 10
    assert rs.tree_bytes == {1: 10, 2: 10}
    assert rs.roll_window() == {1: 10, 2: 10}
    assert rs.roll_window() == {1: 0, 2: 0}
    rs.leave(1)
    assert rs.receive(_p(2), 0) == 0 and rs.strays == 2


def test_payload_bytes_exclude_headers():
    rs = ReceiverState(3)
    rs.join(1)
    rs.receive(_p(0, n=MAX_PAYLOAD), 0)
    assert rs.delivered_bytes == MAX_PAYLOAD == 1500 - HEADER_LEN


def test_bad_sender_arguments():
    with pytest.raises(ValueError):
        SenderState(1, 1, [(1, MBPS)], None, SOURCE, pacing="bursty")
    with pytest.raises(ValueError):
        SenderState(1, 1, [(1, MBPS)], None, SOURCE, payload_size=MAX_PAYLOAD + 1)


def test_host_cannot_end_an_unfinished_session():
    from mcastsim.network import Network
    from mcastsim.sim_core import Simulator
    from mcastsim.topology import paper_topology
    topo = paper_topology()
    net = Network(topo, Simulator(1))
    sender = net.add_sender(topo.node("s"))
    with pytest.raises(HostError):
        sender.end_session()
