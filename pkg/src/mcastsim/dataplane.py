"""Switch data plane: match-action flow tables and drop-tail output queues.

Output queues are FIFO and serve at exactly the link capacity, so a
packet's transmission-complete time is fixed when it is enqueued. The
queue therefore only keeps those completion times; a packet leaves the
backlog once its transmission has finished.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .mgmt_protocol import MGMT_ADDRESS
from .sim_core import SEC

HEADER_LEN = 42
MTU = 1500
MAX_PAYLOAD = MTU - HEADER_LEN

HOST_BASE = 0x0A00_0000  # 10.0.0.0/16 for hosts
GROUP_BASE = 0xE000_0000  # 224.0.0.0/4 for multicast groups

MGMT_PRIORITY = 0xFFFF
DATA_PRIORITY = 100


def host_address(node: int) -> int:
    return HOST_BASE | node


def address_host(addr: int) -> int | None:
    if addr & 0xFFFF_0000 == HOST_BASE:
        return addr & 0xFFFF
    return None


def group_address(group_id: int) -> int:
    return GROUP_BASE | (group_id & 0x0FFF_FFFF)


class Packet:
    """A datagram. Replicas share one instance; nothing mutates it in flight."""

    __slots__ = ("dst_addr", "src_addr", "route_tag", "session_id", "subflow_seq",
                 "global_seq", "payload")

    def __init__(self, dst_addr: int, payload: bytes, route_tag: int = 0,
                 session_id: int = 0, subflow_seq: int = 0, global_seq: int = 0,
                 src_addr: int = 0):
        if not 1 <= len(payload) <= MAX_PAYLOAD:
            raise ValueError(f"payload length {len(payload)} outside 1..{MAX_PAYLOAD}")
        self.dst_addr = dst_addr
        self.src_addr = src_addr
        self.route_tag = route_tag
        self.session_id = session_id
        self.subflow_seq = subflow_seq
        self.global_seq = global_seq
        self.payload = payload

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def size(self) -> int:
        return HEADER_LEN + len(self.payload)

    def __repr__(self) -> str:
        return (f"Packet(dst={self.dst_addr:#x}, tag={self.route_tag}, "
                f"sess={self.session_id}, sub={self.subflow_seq}, "
                f"seq={self.global_seq}, len={len(self.payload)})")


@dataclass(frozen=True)
class Output:
    port: int  # neighbour node id


@dataclass(frozen=True)
class ToController:
    pass


Action = Union[Output, ToController]
MatchKey = tuple[int, Optional[int]]


@dataclass(frozen=True)
class FlowEntry:
    dst_addr: int
    route_tag: Optional[int]  # None is a wildcard
    actions: tuple[Action, ...]
    priority: int = DATA_PRIORITY

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a flow entry needs at least one action")

    @property
    def key(self) -> MatchKey:
        return (self.dst_addr, self.route_tag)

    def matches(self, pkt: Packet) -> bool:
        return pkt.dst_addr == self.dst_addr and (
            self.route_tag is None or self.route_tag == pkt.route_tag)


def management_entry() -> FlowEntry:
    return FlowEntry(MGMT_ADDRESS, None, (ToController(),), MGMT_PRIORITY)


class FlowTable:
    """Entries kept by descending priority, then insertion order."""

    def __init__(self, entries: Iterable[FlowEntry] = ()):
        self._entries: dict[MatchKey, tuple[int, FlowEntry]] = {}
        self._counter = 0
        self._ordered: list[FlowEntry] | None = None
        for e in entries:
            self._put(e)

    def _put(self, entry: FlowEntry) -> None:
        old = self._entries.get(entry.key)
        order = old[0] if old else self._counter
        self._counter += 1
        self._entries[entry.key] = (order, entry)
        self._ordered = None

    @property
    def entries(self) -> list[FlowEntry]:
        if self._ordered is None:
            items = sorted(self._entries.values(), key=lambda oe: (-oe[1].priority, oe[0]))
            self._ordered = [e for _, e in items]
        return self._ordered

    def get(self, key: MatchKey) -> FlowEntry | None:
        item = self._entries.get(key)
        return item[1] if item else None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def apply_update(self, add: Iterable[FlowEntry] = (), remove: Iterable[MatchKey] = ()) -> None:
        """Removals first, then additions; an added duplicate key replaces the old entry."""
        for key in remove:
            if self._entries.pop(key, None) is not None:
                self._ordered = None
        for entry in add:
            self._put(entry)

    def snapshot(self) -> dict[MatchKey, FlowEntry]:
        return {k: e for k, (_, e) in self._entries.items()}


def match_packet(table: FlowTable, pkt: Packet) -> tuple[Action, ...] | None:
    for entry in table.entries:
        if entry.matches(pkt):
            return entry.actions
    return None


class OutputQueue:
    """One direction of a link: drop-tail FIFO drained at the link capacity."""

    def __init__(self, src: int, dst: int, capacity: int, prop_delay: int, limit: int):
        self.src = src
        self.dst = dst
        self.capacity = capacity
        self.prop_delay = prop_delay
        self.limit = limit
        self.backlog: deque[int] = deque()  # transmission-complete times, FIFO
        self.busy_until = 0
        self.alive = True
        self.generation = 0
        self.enqueued = 0
        self.dropped = 0
        self.bytes_sent = 0
        self.departures: list[tuple[int, int]] | None = None  # (start, end) when recording

    def serialization_time(self, nbytes: int) -> int:
        return -(-nbytes * 8 * SEC // self.capacity)

    def occupancy(self, now: int) -> int:
        backlog = self.backlog
        while backlog and backlog[0] <= now:
            backlog.popleft()
        return len(backlog)

    def enqueue(self, pkt: Packet, now: int) -> int | None:
        """Queue a packet; returns its arrival time at the far end, or None if dropped."""
        if not self.alive:
            self.dropped += 1
            return None
        backlog = self.backlog
        while backlog and backlog[0] <= now:
            backlog.popleft()
        if len(backlog) >= self.limit:
            self.dropped += 1
            return None
        size = HEADER_LEN + len(pkt.payload)
        start = self.busy_until if self.busy_until > now else now
        done = start + -(-size * 8 * SEC // self.capacity)
        self.busy_until = done
        backlog.append(done)
        self.enqueued += 1
        self.bytes_sent += size
        if self.departures is not None:
            self.departures.append((start, done))
        return done + self.prop_delay

    def fail(self, now: int) -> int:
        """Take the direction down; returns how many queued packets were lost."""
        lost = self.occupancy(now)
        self.alive = False
        self.generation += 1
        self.dropped += lost
        self.backlog.clear()
        return lost


@dataclass
class SwitchCounters:
    packets_in: int = 0
    matched: int = 0
    missed: int = 0
    to_controller: int = 0
    copies: int = 0  # replicas requested by Output actions
    forwarded: int = 0  # replicas accepted by an output queue
    dropped: int = 0  # replicas refused by an output queue


@dataclass
class SwitchState:
    id: int
    label: str
    ports: dict[int, OutputQueue]
    table: FlowTable = field(default_factory=lambda: FlowTable([management_entry()]))
    counters: SwitchCounters = field(default_factory=SwitchCounters)

    def apply_table_update(self, add: Iterable[FlowEntry] = (), remove: Iterable[MatchKey] = ()) -> None:
        self.table.apply_update(add, remove)

    def forward(self, pkt: Packet, now: int,
                transmit: Callable[[OutputQueue, Packet, int], None],
                punt: Callable[["SwitchState", Packet], None]) -> int:
        """Resolve actions for ``pkt`` and hand each replica to its output queue.

        ``transmit`` is called with the arrival time of every accepted
        replica. Returns the number of accepted replicas.
        """
        c = self.counters
        c.packets_in += 1
        actions = match_packet(self.table, pkt)
        if actions is None:
            c.missed += 1
            return 0
        c.matched += 1
        sent = 0
        for act in actions:
            if type(act) is Output:
                c.copies += 1
                q = self.ports.get(act.port)
                arrival = q.enqueue(pkt, now) if q is not None else None
                if arrival is None:
                    c.dropped += 1
                    continue
                c.forwarded += 1
                sent += 1
                transmit(q, pkt, arrival)
            else:
                c.to_controller += 1
                punt(self, pkt)
        return sent
