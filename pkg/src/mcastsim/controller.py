"""Centralized control plane: groups, sessions, routes and flow tables.

The controller processes one management message at a time to completion.
It reaches switches through ``switches`` (the southbound channel) and
hosts through the ``send`` callback, which delivers a message to the
host named by the message's ``requester`` address.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from .dataplane import FlowEntry, MatchKey, Output, SwitchState, group_address
from .mgmt_protocol import (MGMT_ADDRESS, GroupJoin, GroupJoinReply, GroupLeave, ManagementMessage,
                            NetworkUpdate, SessionEnd, SessionInit, SessionInitReply,
                            StatsReport, Status)
from .sim_core import SEC
from .topology import Topology, TopologyError, remove_link
from .tree_routing import (MAX_ROUTE_TAG, TreeSet, UnreachableReceiver, compute_single_tree,
                           compute_tree_set)

log = logging.getLogger(__name__)

DEFAULT_MEMBER_EXPIRY = 5 * SEC
DEFAULT_TEARDOWN_DELAY = SEC // 2


class SessionState(enum.Enum):
    ACTIVE = "active"
    PAUSED = "paused"
    ENDED = "ended"


class InstallError(RuntimeError):
    pass


@dataclass
class GroupRecord:
    group_id: int
    members: set[int] = field(default_factory=set)
    last_seen: dict[int, int] = field(default_factory=dict)


@dataclass
class SessionRecord:
    session_id: int
    sender: int
    group_id: int
    requester: int
    trees: TreeSet = field(default_factory=TreeSet)
    installed_entries: list[tuple[int, FlowEntry]] = field(default_factory=list)
    state: SessionState = SessionState.ACTIVE
    next_tag: int = 1

    def advertised(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.trees.shares())


class Controller:
    def __init__(self, topo: Topology, switches: Mapping[int, SwitchState],
                 send: Callable[[ManagementMessage], None] | None = None,
                 clock: Callable[[], int] = lambda: 0,
                 max_trees: int = 3, routing: str = "multi",
                 member_expiry: int | None = None,
                 teardown_delay: int = 0,
                 defer: Callable[[int, Callable[[], None]], None] | None = None):
        if max_trees < 1:
            raise ValueError("max_trees must be >= 1")
        if routing not in ("multi", "single"):
            raise ValueError(f"unknown routing {routing!r}")
        self.topo = topo
        self.switches = switches
        self.send = send or (lambda msg: None)
        self.clock = clock
        self.max_trees = max_trees
        self.routing = routing
        self.member_expiry = member_expiry
        self.teardown_delay = teardown_delay
        self.defer = defer
        self.groups: dict[int, GroupRecord] = {}
        self.sessions: dict[int, SessionRecord] = {}
        self._next_session = 1
        self.events: list[tuple[int, str, int, int]] = []  # (time, what, session, switch)

    # -- message dispatch -------------------------------------------------

    def receive(self, msg: ManagementMessage) -> None:
        if isinstance(msg, GroupJoin):
            self.send(self.handle_group_join(msg))
        elif isinstance(msg, GroupLeave):
            self.handle_group_leave(msg)
        elif isinstance(msg, SessionInit):
            self.send(self.handle_session_init(msg))
        elif isinstance(msg, SessionEnd):
            self.handle_session_end(msg)
        elif isinstance(msg, StatsReport):
            self.handle_stats_report(msg)
        else:
            log.warning("controller ignores unexpected %s", type(msg).__name__)

    # -- group management -------------------------------------------------

    def handle_group_join(self, msg: GroupJoin) -> GroupJoinReply:
        r = msg.receiver
        if not 0 <= r < len(self.topo) or not self.topo.is_host(r):
            return GroupJoinReply(msg.requester, msg.group_id, Status.REJECTED)
        group = self.groups.setdefault(msg.group_id, GroupRecord(msg.group_id))
        is_new = r not in group.members
        group.members.add(r)
        group.last_seen[r] = self.clock()
        if is_new:
            for s in self._sessions_on(msg.group_id):
                self._recompute(s)
        return GroupJoinReply(msg.requester, msg.group_id, Status.OK)

    def handle_group_leave(self, msg: GroupLeave) -> None:
        group = self.groups.get(msg.group_id)
        if group is None or msg.receiver not in group.members:
            return
        group.members.discard(msg.receiver)
        group.last_seen.pop(msg.receiver, None)
        for s in self._sessions_on(msg.group_id):
            self._recompute(s)

    def handle_stats_report(self, msg: StatsReport) -> None:
        now = self.clock()
        for group in self.groups.values():
            if msg.receiver in group.members:
                group.last_seen[msg.receiver] = now

    def periodic_member_check(self, now: int) -> set[int]:
        if self.member_expiry is None:
            return set()
        expired: set[int] = set()
        for gid in sorted(self.groups):
            group = self.groups[gid]
            for m in sorted(group.members):
                if now - group.last_seen.get(m, now) > self.member_expiry:
                    expired.add(m)
                    self.handle_group_leave(GroupLeave(0, gid, m))
        return expired

    def members(self, group_id: int) -> set[int]:
        group = self.groups.get(group_id)
        return set(group.members) if group else set()

    # -- sessions ---------------------------------------------------------

    def _sessions_on(self, group_id: int) -> list[SessionRecord]:
        return [s for _, s in sorted(self.sessions.items())
                if s.group_id == group_id and s.state is not SessionState.ENDED]

    def _compute(self, sender: int, receivers: set[int]) -> TreeSet:
        if self.routing == "single":
            return TreeSet((compute_single_tree(self.topo, sender, receivers),))
        return compute_tree_set(self.topo, sender, receivers, self.max_trees)

    def _route(self, sender: int, receivers: set[int]) -> TreeSet:
        """Trees for the reachable part of ``receivers``; empty if none is reachable."""
        recv = set(receivers)
        while recv:
            try:
                return self._compute(sender, recv)
            except UnreachableReceiver as exc:
                recv.discard(exc.receiver)
        return TreeSet()

    def handle_session_init(self, msg: SessionInit) -> SessionInitReply:
        for s in self._sessions_on(msg.group_id):
            if (s.requester == msg.requester and s.sender == msg.sender
                    and s.state is SessionState.ACTIVE):
                # a retransmitted request: answer it again
                return SessionInitReply(msg.requester, s.session_id, s.advertised())
        rejected = SessionInitReply(msg.requester, 0, (), Status.REJECTED)
        sender = msg.sender
        if not 0 <= sender < len(self.topo) or not self.topo.is_host(sender):
            return rejected
        if self._sessions_on(msg.group_id):
            # route tags are only unique within one session per group
            return rejected
        receivers = self.members(msg.group_id) - {sender}
        if not receivers:
            return rejected
        try:
            trees = self._compute(sender, receivers)
        except UnreachableReceiver:
            return rejected
        session = SessionRecord(self._next_session, sender, msg.group_id, msg.requester,
                                next_tag=len(trees) + 1)
        try:
            self.install_flow_entries(session, trees)
        except InstallError:
            log.exception("session %d: flow installation failed", session.session_id)
            return rejected
        self._next_session += 1
        session.trees = trees
        self.sessions[session.session_id] = session
        self.events.append((self.clock(), "reply", session.session_id, sender))
        return SessionInitReply(msg.requester, session.session_id, session.advertised())

    def handle_session_end(self, msg: SessionEnd) -> None:
        session = self.sessions.get(msg.session_id)
        if session is None or session.state is SessionState.ENDED:
            return
        session.state = SessionState.ENDED
        session.trees = TreeSet()
        if self.defer is not None and self.teardown_delay > 0:
            # let packets already in flight reach the receivers first
            self.defer(self.teardown_delay, lambda: self._teardown(session))
        else:
            self._teardown(session)

    def _teardown(self, session: SessionRecord) -> None:
        self.install_flow_entries(session, TreeSet())

    def _recompute(self, session: SessionRecord) -> None:
        receivers = self.members(session.group_id) - {session.sender}
        fresh = self._route(session.sender, receivers) if receivers else TreeSet()
        retagged = []
        for t in fresh:
            old = next((o for o in session.trees if o.same_routes(t)), None)
            if old is not None:
                retagged.append(replace(t, route=old.route))
            else:
                if session.next_tag > MAX_ROUTE_TAG:
                    raise InstallError(f"session {session.session_id} ran out of route tags")
                retagged.append(replace(t, route=session.next_tag))
                session.next_tag += 1
        trees = TreeSet(tuple(retagged))
        state = SessionState.ACTIVE if len(trees) else SessionState.PAUSED
        unchanged = (state is session.state and trees.shares() == session.trees.shares()
                     and all(a.same_routes(b) for a, b in zip(trees, session.trees)))
        if unchanged:
            return
        self.install_flow_entries(session, trees)
        session.trees = trees
        session.state = state
        self.send(NetworkUpdate(session.requester, session.session_id, session.advertised()))

    # -- topology dynamics ------------------------------------------------

    def handle_link_failure(self, a: int, b: int) -> None:
        try:
            self.topo = remove_link(self.topo, a, b)
        except TopologyError:
            log.warning("ignoring failure of unknown link %s-%s", a, b)
            return
        for _, s in sorted(self.sessions.items()):
            if s.state is SessionState.ACTIVE and any(t.uses_link(a, b) for t in s.trees):
                self._recompute(s)

    # -- southbound -------------------------------------------------------

    def entries_for(self, session: SessionRecord, trees: TreeSet) -> dict[int, dict[MatchKey, FlowEntry]]:
        addr = group_address(session.group_id)
        wanted: dict[int, dict[MatchKey, FlowEntry]] = {}
        for t in trees:
            for node, kids in t.children().items():
                if self.topo.is_host(node):
                    continue
                entry = FlowEntry(addr, t.route, tuple(Output(k) for k in kids))
                wanted.setdefault(node, {})[entry.key] = entry
        return wanted

    def install_flow_entries(self, session: SessionRecord, trees: TreeSet | None = None) -> None:
        """Make the switches hold exactly the entries for ``trees``.

        Every target switch is checked before any table is touched, so a
        failed installation leaves all tables as they were.
        """
        if trees is None:
            trees = session.trees
        wanted = self.entries_for(session, trees)
        unknown = sorted(sw for sw in wanted if sw not in self.switches)
        if unknown:
            raise InstallError(f"unknown switches {unknown}")
        current: dict[int, dict[MatchKey, FlowEntry]] = {}
        for sw, entry in session.installed_entries:
            current.setdefault(sw, {})[entry.key] = entry
        now = self.clock()
        for sw in sorted(set(wanted) | set(current)):
            new = wanted.get(sw, {})
            old = current.get(sw, {})
            remove = [k for k in old if k not in new]
            add = [e for k, e in new.items() if old.get(k) != e]
            if remove or add:
                self.switches[sw].apply_table_update(add, remove)
                self.events.append((now, "install", session.session_id, sw))
        session.installed_entries = [(sw, wanted[sw][k]) for sw in sorted(wanted)
                                     for k in sorted(wanted[sw], key=lambda k: (k[0], k[1] or 0))]

    def table_consistency(self) -> list[str]:
        """Differences between recorded session entries and the switch tables."""
        expected: dict[int, dict[MatchKey, FlowEntry]] = {}
        problems = []
        for sid, s in sorted(self.sessions.items()):
            if s.state is not SessionState.ACTIVE and s.installed_entries and s.state is not SessionState.ENDED:
                problems.append(f"session {sid} is {s.state.value} but has entries installed")
            for sw, e in s.installed_entries:
                expected.setdefault(sw, {})[e.key] = e
            tags = {t.route for t in s.trees}
            if s.state is SessionState.ACTIVE:
                stray = sorted({e.route_tag for _, e in s.installed_entries} - tags)
                if stray:
                    problems.append(f"session {sid} has entries for unknown tags {stray}")
        for sw_id, sw in sorted(self.switches.items()):
            actual = {k: e for k, e in sw.table.snapshot().items() if k[0] != MGMT_ADDRESS}
            if actual != expected.get(sw_id, {}):
                problems.append(f"switch {sw_id}: table differs from installed entries")
        return problems
