import pytest

from mcastsim.controller import Controller, InstallError, SessionRecord, SessionState
from mcastsim.dataplane import group_address, host_address
from mcastsim.mgmt_protocol import (GroupJoin, GroupJoinReply, GroupLeave, NetworkUpdate,
                                    SessionEnd, SessionInit, SessionInitReply, StatsReport, Status)
from mcastsim.network import Network
from mcastsim.sim_core import SEC, Simulator
from mcastsim.topology import MBPS, paper_topology
from mcastsim.tree_routing import compute_tree_set

TOPO = paper_topology()
S, R1, R2, R3 = (TOPO.node(x) for x in ("s", "r1", "r2", "r3"))
SW0, SW11 = TOPO.node("sw0"), TOPO.node("sw11")


class Harness:
    def __init__(self, **kw):
        self.net = Network(TOPO, Simulator(1))
        self.now = 0
        self.sent = []
        self.ctl = Controller(TOPO, self.net.switches, send=self.sent.append,
                              clock=lambda: self.now, **kw)

    def join(self, *hosts, gid=1):
        return [self.ctl.handle_group_join(GroupJoin(host_address(h), gid, h)) for h in hosts]

    def init(self, gid=1, requester=S):
        return self.ctl.handle_session_init(SessionInit(host_address(requester), gid, S, 0))

    def data_entries(self, sw):
        return {k: e for k, e in self.net.switches[sw].table.snapshot().items()
                if k[0] == group_address(1)}


def test_join_is_idempotent_and_rejects_switches():
    h = Harness()
    assert [r.status for r in h.join(R1, R1)] == [Status.OK, Status.OK]
    assert h.ctl.members(1) == {R1}
    bad = h.ctl.handle_group_join(GroupJoin(host_address(R1), 1, SW0))
    assert bad == GroupJoinReply(host_address(R1), 1, Status.REJECTED)


def test_session_without_receivers_is_rejected():
    h = Harness()
    reply = h.init()
    assert reply.status == Status.REJECTED and reply.trees == ()


def test_session_init_installs_three_trees():
    h = Harness()
    h.join(R1, R2, R3)
    reply = h.init()
    assert reply.status == Status.OK and reply.session_id == 1
    assert reply.trees == ((1, 5 * MBPS), (2, 5 * MBPS), (3, 5 * MBPS))
    # the first switch replicates every tree towards exactly one core switch
    assert sorted(k[1] for k in h.data_entries(SW0)) == [1, 2, 3]
    assert h.ctl.table_consistency() == []


def test_install_happens_before_reply():
    h = Harness()
    h.join(R1, R2, R3)
    sid = h.init().session_id
    events = [e for e in h.ctl.events if e[2] == sid]
    kinds = [e[1] for e in events]
    assert kinds[-1] == "reply" and set(kinds[:-1]) == {"install"}


def test_one_session_per_group_and_retransmission():
    h = Harness()
    h.join(R1, R2, R3)
    first = h.init()
    assert h.init() == first
    other = h.init(requester=R1)
    assert other.status == Status.REJECTED
    assert h.ctl.handle_session_init(
        SessionInit(host_address(S), 2, S, 0)).status == Status.REJECTED


def test_session_ids_are_monotonic():
    h = Harness()
    h.join(R1, gid=1)
    h.join(R2, gid=2)
    a = h.init(gid=1).session_id
    b = h.init(gid=2).session_id
    assert (a, b) == (1, 2)


def test_membership_change_updates_trees():
    h = Harness()
    h.join(R1)
    sid = h.init().session_id
    h.sent.clear()
    h.join(R2)
    assert [type(m) for m in h.sent] == [NetworkUpdate]
    assert h.sent[0].session_id == sid
    assert h.ctl.table_consistency() == []
    # a repeated join changes nothing and sends nothing
    h.sent.clear()
    h.join(R2)
    assert h.sent == []


def test_everyone_leaving_pauses_the_session():
    h = Harness()
    h.join(R1, R2)
    sid = h.init().session_id
    for r in (R1, R2):
        h.ctl.handle_group_leave(GroupLeave(host_address(r), 1, r))
    s = h.ctl.sessions[sid]
    assert s.state is SessionState.PAUSED and s.installed_entries == []
    assert h.sent[-1] == NetworkUpdate(host_address(S), sid, ())
    assert all(not h.data_entries(sw) for sw in h.net.switches)
    h.join(R3)
    assert s.state is SessionState.ACTIVE and len(s.trees) == 3


def test_session_end_removes_entries():
    h = Harness()
    h.join(R1, R2, R3)
    sid = h.init().session_id
    h.ctl.receive(SessionEnd(host_address(S), sid))
    assert h.ctl.sessions[sid].state is SessionState.ENDED
    assert all(not h.data_entries(sw) for sw in h.net.switches)
    assert h.ctl.table_consistency() == []


def test_deferred_teardown():
    pending = []
    h = Harness(teardown_delay=SEC // 2, defer=lambda d, fn: pending.append((d, fn)))
    h.join(R1)
    sid = h.init().session_id
    h.ctl.receive(SessionEnd(host_address(S), sid))
    assert h.data_entries(SW0) and pending[0][0] == SEC // 2
    pending[0][1]()
    assert not h.data_entries(SW0)


def test_link_failure_keeps_surviving_tags():
    h = Harness()
    h.join(R1, R2, R3)
    sid = h.init().session_id
    h.sent.clear()
    h.ctl.handle_link_failure(SW0, SW11)
    s = h.ctl.sessions[sid]
    assert s.advertised() == ((2, 5 * MBPS), (3, 5 * MBPS))
    assert h.sent == [NetworkUpdate(host_address(S), sid, ((2, 5 * MBPS), (3, 5 * MBPS)))]
    assert (group_address(1), 1) not in h.net.switches[SW0].table
    assert h.ctl.table_consistency() == []


def test_unknown_link_failure_is_ignored(caplog):
    h = Harness()
    h.join(R1)
    h.init()
    h.sent.clear()
    h.ctl.handle_link_failure(S, R1)
    assert h.sent == [] and "unknown link" in caplog.text


def test_failed_install_leaves_tables_untouched():
    h = Harness()
    h.join(R1, R2, R3)
    missing = dict(h.net.switches)
    del missing[TOPO.node("sw23")]
    ctl = Controller(TOPO, missing)
    trees = compute_tree_set(TOPO, S, [R1, R2, R3], 3)
    before = {sw: s.table.snapshot() for sw, s in h.net.switches.items()}
    with pytest.raises(InstallError):
        ctl.install_flow_entries(SessionRecord(1, S, 1, host_address(S)), trees)
    assert {sw: s.table.snapshot() for sw, s in h.net.switches.items()} == before


def test_inconsistency_is_detected():
    h = Harness()
    h.join(R1)
    h.init()
    h.net.switches[SW0].apply_table_update(remove=[(group_address(1), 1)])
    assert h.ctl.table_consistency()


def test_member_expiry():
    h = Harness(member_expiry=5 * SEC)
    h.join(R1, R2)
    h.now = 4 * SEC
    h.ctl.handle_stats_report(StatsReport(host_address(R2), 1, R2, 100, SEC))
    h.now = 6 * SEC
    assert h.ctl.periodic_member_check(h.now) == {R1}
    assert h.ctl.members(1) == {R2}


def test_single_tree_routing():
    h = Harness(routing="single")
    h.join(R1, R2, R3)
    assert h.init().trees == ((1, 5 * MBPS),)


def test_controller_over_the_network():
    sim = Simulator(1)
    net = Network(TOPO, sim)
    for r in (R1, R2, R3):
        net.add_receiver(r).join(1)
    sender = net.add_sender(S)
    sim.run_until(10_000_000)
    sender.start_session(1, 10_000)
    sim.run_until(SEC)
    replies = [m for _, m in net.replies_delivered]
    assert sum(isinstance(m, GroupJoinReply) for m in replies) == 3
    assert any(isinstance(m, SessionInitReply) and m.status == Status.OK for m in replies)
    assert all(net.hosts[r].state.delivered_bytes == 10_000 for r in (R1, R2, R3))
    assert sender.finished_at is not None and sender.error is None
