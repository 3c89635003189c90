"""Senders and receivers.

``SenderState`` splits a data block over the session's trees with
deficit round robin (quanta proportional to tree shares) and paces each
tree with its own token bucket. ``ReceiverState`` merges the sub-flows
back into one ordered stream keyed by the session-wide sequence number.

``SenderHost`` and ``ReceiverHost`` wrap those states into simulator
actors that speak the management protocol.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable

from .dataplane import HEADER_LEN, MAX_PAYLOAD, MTU, Packet, group_address, host_address
from .mgmt_protocol import (REQUEST_MAX_ATTEMPTS, REQUEST_RETRY_INTERVAL,
                            GroupJoin, GroupJoinReply, GroupLeave, ManagementMessage,
                            NetworkUpdate, SessionEnd, SessionInit, SessionInitReply,
                            StatsReport, Status)
from .sim_core import MS, SEC, EventKind, Simulator

log = logging.getLogger(__name__)

BUCKET_DEPTH_PACKETS = 2
UNPACED_RATE_FACTOR = 2
REASSEMBLY_LIMIT = 4096
DEFAULT_REORDER_TIMEOUT = 200 * MS
DEFAULT_STATS_INTERVAL = SEC

DONE = "done"
BLOCKED = "blocked"


class HostError(RuntimeError):
    pass


class BlockSource:
    """Deterministic block contents: a seeded pattern repeated end to end."""

    PERIOD = 65_521  # prime, so packet boundaries drift across the pattern

    def __init__(self, pattern: bytes):
        if len(pattern) != self.PERIOD:
            raise ValueError(f"pattern must be {self.PERIOD} bytes")
        self._buf = pattern + pattern[:MAX_PAYLOAD]

    @classmethod
    def from_rng(cls, randbytes: Callable[[int], bytes]) -> "BlockSource":
        return cls(randbytes(cls.PERIOD))

    def read(self, offset: int, n: int) -> bytes:
        o = offset % self.PERIOD
        return self._buf[o:o + n]

    def digest(self, length: int) -> str:
        h = hashlib.sha256()
        off = 0
        while off < length:
            n = min(MAX_PAYLOAD, length - off)
            h.update(self.read(off, n))
            off += n
        return h.hexdigest()


class _Bucket:
    __slots__ = ("rate", "tokens", "depth", "stamp")

    # tokens are bit-nanoseconds so refill stays in integers
    def __init__(self, rate: int, now: int, initial: int):
        self.rate = rate
        self.depth = BUCKET_DEPTH_PACKETS * MTU * 8 * SEC
        self.tokens = initial
        self.stamp = now

    def refill(self, now: int) -> None:
        if now > self.stamp:
            self.tokens = min(self.depth, self.tokens + self.rate * (now - self.stamp))
            self.stamp = now

    def ready_at(self, cost: int, now: int) -> int:
        self.refill(now)
        short = cost - self.tokens
        return now if short <= 0 else now + -(-short // self.rate)


@dataclass
class _Tree:
    tag: int
    share: int
    quantum: int
    bucket: _Bucket
    deficit: int = 0
    next_subflow_seq: int = 0
    bytes_sent: int = 0
    packets_sent: int = 0


class SenderState:
    """Load splitting for one session.

    ``block_len=None`` is an open-ended stream.
    """

    def __init__(self, session_id: int, group_id: int, trees, block_len: int | None,
                 source: BlockSource, now: int = 0, payload_size: int = MAX_PAYLOAD,
                 pacing: str = "paced", start_index: int = 0, src_addr: int = 0):
        if pacing not in ("paced", "unpaced"):
            raise ValueError(f"unknown pacing mode {pacing!r}")
        if not 1 <= payload_size <= MAX_PAYLOAD:
            raise ValueError(f"payload size must be in 1..{MAX_PAYLOAD}")
        self.session_id = session_id
        self.dst_addr = group_address(group_id)
        self.src_addr = src_addr
        self.block_len = block_len
        self.source = source
        self.payload_size = payload_size
        self.rate_factor = 1 if pacing == "paced" else UNPACED_RATE_FACTOR
        self.offset = 0
        self.next_global_seq = 0
        self.trees: list[_Tree] = []
        self.retired: dict[int, _Tree] = {}
        self._ptr = 0
        self._credited = False
        self._start_index = start_index
        self.apply_update(trees, now)

    @property
    def remaining_bytes(self) -> int | None:
        return None if self.block_len is None else self.block_len - self.offset

    @property
    def paused(self) -> bool:
        return not self.trees

    def apply_update(self, trees, now: int) -> None:
        """Replace the tree set; pacing restarts, surviving tags keep their counters."""
        old = {t.tag: t for t in self.trees}
        old.update({tag: t for tag, t in self.retired.items() if tag not in old})
        shares = [(tag, share) for tag, share in trees if share > 0]
        smallest = min((s for _, s in shares), default=1)
        new = []
        for tag, share in shares:
            prev = old.pop(tag, None)
            bucket = _Bucket(share * self.rate_factor, now, MTU * 8 * SEC)
            t = _Tree(tag, share, MTU * share // smallest, bucket)
            if prev is not None:
                t.next_subflow_seq = prev.next_subflow_seq
                t.bytes_sent = prev.bytes_sent
                t.packets_sent = prev.packets_sent
            new.append(t)
        self.retired.update(old)
        self.trees = new
        self._ptr = self._start_index % len(new) if new else 0
        self._credited = False

    def _next_payload_len(self) -> int:
        if self.block_len is None:
            return self.payload_size
        return min(self.payload_size, self.block_len - self.offset)

    def split_next(self, now: int):
        """The next ``(route_tag, Packet)``, or ``DONE`` / ``BLOCKED``."""
        n = self._next_payload_len()
        if n <= 0:
            return DONE
        if not self.trees:
            return BLOCKED
        cost = (HEADER_LEN + n) * 8 * SEC
        size = HEADER_LEN + n
        trees = self.trees
        for _ in range(2 * len(trees)):
            t = trees[self._ptr]
            if not self._credited:
                t.deficit = min(t.deficit + t.quantum, t.quantum + MTU)
                self._credited = True
            if t.deficit >= size:
                b = t.bucket
                b.refill(now)
                if b.tokens >= cost:
                    b.tokens -= cost
                    t.deficit -= size
                    return t.tag, self._emit(t, n)
            self._ptr = (self._ptr + 1) % len(trees)
            self._credited = False
        return BLOCKED

    def _emit(self, t: _Tree, n: int) -> Packet:
        pkt = Packet(self.dst_addr, self.source.read(self.offset, n), t.tag, self.session_id,
                     t.next_subflow_seq, self.next_global_seq, self.src_addr)
        t.next_subflow_seq += 1
        t.bytes_sent += n
        t.packets_sent += 1
        self.next_global_seq += 1
        self.offset += n
        return pkt

    def next_send_time(self, now: int) -> int | None:
        """Earliest time some tree could send, or None when paused or done."""
        n = self._next_payload_len()
        if n <= 0 or not self.trees:
            return None
        cost = (HEADER_LEN + n) * 8 * SEC
        return min(t.bucket.ready_at(cost, now) for t in self.trees)

    def bytes_by_tag(self) -> dict[int, int]:
        out = {tag: t.bytes_sent for tag, t in self.retired.items()}
        out.update({t.tag: t.bytes_sent for t in self.trees})
        return out


class Reassembly:
    """Orders one session's packets by global sequence number."""

    def __init__(self, limit: int = REASSEMBLY_LIMIT):
        self.limit = limit
        self.next_seq = 0
        self.buffer: dict[int, Packet] = {}
        self.duplicates = 0
        self.evicted = 0
        self.skipped_packets = 0

    def push(self, pkt: Packet) -> list[Packet]:
        seq = pkt.global_seq
        if seq < self.next_seq or seq in self.buffer:
            self.duplicates += 1
            return []
        if seq != self.next_seq:
            self.buffer[seq] = pkt
            if len(self.buffer) > self.limit:
                del self.buffer[max(self.buffer)]
                self.evicted += 1
            return []
        out = [pkt]
        self.next_seq += 1
        return out + self._flush()

    def _flush(self) -> list[Packet]:
        out = []
        buf = self.buffer
        while self.next_seq in buf:
            out.append(buf.pop(self.next_seq))
            self.next_seq += 1
        return out

    def skip_gap(self) -> list[Packet]:
        """Give up on every hole below the newest buffered packet and deliver the rest."""
        out = []
        buf = self.buffer
        for seq in sorted(buf):
            self.skipped_packets += seq - self.next_seq
            out.append(buf.pop(seq))
            self.next_seq = seq + 1
        return out

    @property
    def waiting(self) -> bool:
        return bool(self.buffer)


@dataclass
class ReceiverState:
    node: int
    buffer_limit: int = REASSEMBLY_LIMIT
    groups: set[int] = field(default_factory=set)  # joined group addresses
    sessions: dict[int, Reassembly] = field(default_factory=dict)
    delivered_bytes: int = 0
    delivered_packets: int = 0
    strays: int = 0
    tree_bytes: dict[int, int] = field(default_factory=dict)
    window_bytes: dict[int, int] = field(default_factory=dict)  # per tag, since last sample
    report_bytes: int = 0  # since last StatsReport
    last_session: int = 0
    _digest: "hashlib._Hash" = field(default_factory=hashlib.sha256, repr=False)

    def join(self, group_id: int) -> None:
        self.groups.add(group_address(group_id))

    def leave(self, group_id: int) -> None:
        self.groups.discard(group_address(group_id))

    def reassembly(self, session_id: int) -> Reassembly:
        r = self.sessions.get(session_id)
        if r is None:
            r = self.sessions[session_id] = Reassembly(self.buffer_limit)
        return r

    def receive(self, pkt: Packet, now: int) -> int:
        """Accept a data packet; returns the payload bytes delivered in order."""
        if pkt.dst_addr not in self.groups:
            self.strays += 1
            return 0
        self.last_session = pkt.session_id
        return self._deliver(self.reassembly(pkt.session_id).push(pkt))

    def skip_gap(self, session_id: int) -> int:
        return self._deliver(self.reassembly(session_id).skip_gap())

    def _deliver(self, pkts: list[Packet]) -> int:
        total = 0
        for p in pkts:
            n = len(p.payload)
            total += n
            self._digest.update(p.payload)
            tag = p.route_tag
            self.tree_bytes[tag] = self.tree_bytes.get(tag, 0) + n
            self.window_bytes[tag] = self.window_bytes.get(tag, 0) + n
        self.delivered_bytes += total
        self.delivered_packets += len(pkts)
        self.report_bytes += total
        return total

    def stream_digest(self) -> str:
        return self._digest.hexdigest()

    def roll_window(self) -> dict[int, int]:
        out = self.window_bytes
        self.window_bytes = {tag: 0 for tag in out}
        return out

    @property
    def duplicates(self) -> int:
        return sum(r.duplicates for r in self.sessions.values())

    @property
    def skipped_packets(self) -> int:
        return sum(r.skipped_packets for r in self.sessions.values())


class _Requester:
    """Connectionless request/reply: resend until answered, then give up."""

    def __init__(self, sim: Simulator, node: int, transmit: Callable[[ManagementMessage], None]):
        self.sim = sim
        self.node = node
        self.transmit = transmit
        self.pending: dict[type, tuple[ManagementMessage, int]] = {}
        self._gen = 0
        self.error: str | None = None
        self.sent: list[ManagementMessage] = []

    def request(self, msg: ManagementMessage, reply_type: type) -> None:
        self._gen += 1
        self.pending[reply_type] = (msg, self._gen)
        self._attempt(reply_type, self._gen, 1)

    def _attempt(self, reply_type: type, gen: int, attempt: int) -> None:
        item = self.pending.get(reply_type)
        if item is None or item[1] != gen:
            return
        if attempt > REQUEST_MAX_ATTEMPTS:
            del self.pending[reply_type]
            self.error = f"no {reply_type.__name__} after {REQUEST_MAX_ATTEMPTS} attempts"
            log.warning("host %d: %s", self.node, self.error)
            return
        self.fire(item[0])
        self.sim.after(REQUEST_RETRY_INTERVAL, EventKind.TIMER_FIRE, self.node,
                       lambda _: self._attempt(reply_type, gen, attempt + 1))

    def fire(self, msg: ManagementMessage) -> None:
        self.sent.append(msg)
        self.transmit(msg)

    def answered(self, reply_type: type) -> bool:
        return self.pending.pop(reply_type, None) is not None


class SenderHost:
    def __init__(self, sim: Simulator, node: int, uplink: Callable[[Packet], bool],
                 transmit_mgmt: Callable[[ManagementMessage], None], source: BlockSource,
                 pacing: str = "paced", payload_size: int = MAX_PAYLOAD):
        self.sim = sim
        self.node = node
        self.addr = host_address(node)
        self.uplink = uplink
        self.req = _Requester(sim, node, transmit_mgmt)
        self.source = source
        self.pacing = pacing
        self.payload_size = payload_size
        self.state: SenderState | None = None
        self.group_id: int | None = None
        self.block_len: int | None = None
        self.rejected = False
        self.finished_at: int | None = None
        self.uplink_drops = 0
        self._wake_gen = 0
        self._ended = False

    @property
    def error(self) -> str | None:
        if self.rejected:
            return "session initiation rejected by the controller"
        return self.req.error

    def start_session(self, group_id: int, block_len: int | None) -> None:
        self.group_id = group_id
        self.block_len = block_len
        self.req.request(SessionInit(self.addr, group_id, self.node, block_len or 0),
                         SessionInitReply)

    def on_message(self, msg: ManagementMessage) -> None:
        now = self.sim.now()
        if isinstance(msg, SessionInitReply):
            if not self.req.answered(SessionInitReply) or self.state is not None:
                return
            if msg.status != Status.OK:
                self.rejected = True
                return
            self.state = SenderState(
                msg.session_id, self.group_id, msg.trees, self.block_len, self.source, now,
                self.payload_size, self.pacing,
                start_index=self.sim.next_random(len(msg.trees)), src_addr=self.addr)
            self._pump(None)
        elif isinstance(msg, NetworkUpdate):
            self.on_network_update(msg)

    def on_network_update(self, msg: NetworkUpdate) -> None:
        st = self.state
        if st is None or msg.session_id != st.session_id or self._ended:
            return
        current = [(t.tag, t.share) for t in st.trees]
        if list(msg.trees) == current:
            return
        st.apply_update(msg.trees, self.sim.now())
        self._pump(None)

    def _pump(self, _) -> None:
        st = self.state
        now = self.sim.now()
        while True:
            r = st.split_next(now)
            if r is DONE:
                self.end_session()
                return
            if r is BLOCKED:
                break
            if not self.uplink(r[1]):
                self.uplink_drops += 1
        t = st.next_send_time(now)
        self._wake_gen += 1
        if t is not None:
            self.sim.schedule(t, EventKind.HOST_ACTION, self.node, self._wake, self._wake_gen)

    def _wake(self, gen: int) -> None:
        if gen == self._wake_gen:
            self._pump(None)

    def end_session(self) -> None:
        st = self.state
        if st is None or (st.remaining_bytes or 0) > 0 or st.block_len is None:
            raise HostError("session cannot end before the whole block is sent")
        if self._ended:
            return
        self._ended = True
        self.finished_at = self.sim.now()
        self.req.fire(SessionEnd(self.addr, st.session_id))


class ReceiverHost:
    def __init__(self, sim: Simulator, node: int,
                 transmit_mgmt: Callable[[ManagementMessage], None],
                 reorder_timeout: int = DEFAULT_REORDER_TIMEOUT,
                 stats_interval: int | None = DEFAULT_STATS_INTERVAL,
                 on_delivery: Callable[["ReceiverHost"], None] | None = None):
        self.sim = sim
        self.node = node
        self.addr = host_address(node)
        self.req = _Requester(sim, node, transmit_mgmt)
        self.state = ReceiverState(node)
        self.reorder_timeout = reorder_timeout
        self.stats_interval = stats_interval
        self.on_delivery = on_delivery
        self.join_status: dict[int, Status] = {}
        self._gap_gen: dict[int, int] = {}
        self._stats_started = False

    @property
    def error(self) -> str | None:
        return self.req.error

    def join(self, group_id: int) -> None:
        self.req.request(GroupJoin(self.addr, group_id, self.node), GroupJoinReply)

    def leave(self, group_id: int) -> None:
        self.state.leave(group_id)
        self.req.fire(GroupLeave(self.addr, group_id, self.node))

    def on_message(self, msg: ManagementMessage) -> None:
        if isinstance(msg, GroupJoinReply) and self.req.answered(GroupJoinReply):
            self.join_status[msg.group_id] = msg.status
            if msg.status == Status.OK:
                self.state.join(msg.group_id)
                if self.stats_interval and not self._stats_started:
                    self._stats_started = True
                    self.sim.after(self.stats_interval, EventKind.TIMER_FIRE, self.node,
                                   self._stats_tick)

    def on_packet(self, pkt: Packet) -> None:
        now = self.sim.now()
        delivered = self.state.receive(pkt, now)
        sid = pkt.session_id
        r = self.state.sessions.get(sid)
        if r is not None:
            self._watch_gap(sid, r)
        if delivered and self.on_delivery is not None:
            self.on_delivery(self)

    def _watch_gap(self, sid: int, r: Reassembly) -> None:
        if not r.waiting:
            self._gap_gen.pop(sid, None)
            return
        if sid in self._gap_gen:
            return
        gen = self._gap_gen[sid] = r.next_seq
        self.sim.after(self.reorder_timeout, EventKind.TIMER_FIRE, self.node,
                       lambda _: self._gap_expired(sid, gen))

    def _gap_expired(self, sid: int, head: int) -> None:
        if self._gap_gen.get(sid) != head:
            return
        del self._gap_gen[sid]
        r = self.state.sessions[sid]
        delivered = 0
        if r.next_seq == head:
            delivered = self.state.skip_gap(sid)
        self._watch_gap(sid, r)
        if delivered and self.on_delivery is not None:
            self.on_delivery(self)

    def report_stats(self) -> StatsReport:
        msg = StatsReport(self.addr, self.state.last_session, self.node,
                          self.state.report_bytes, self.stats_interval or 0)
        self.state.report_bytes = 0
        self.req.fire(msg)
        return msg

    def _stats_tick(self, _) -> None:
        self.report_stats()
        self.sim.after(self.stats_interval, EventKind.TIMER_FIRE, self.node, self._stats_tick)
