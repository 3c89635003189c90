"""Wires a topology into a running simulation.

Every directed link gets an ``OutputQueue``. Packets addressed to the
management address are punted by the first switch they reach and handed
to the controller after ``control_latency``; controller replies are
injected at the requester's access switch (packet-out) after the same
latency.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .controller import DEFAULT_TEARDOWN_DELAY, Controller
from .dataplane import (MGMT_ADDRESS, OutputQueue, Packet, SwitchState, address_host,
                        host_address)
from .endhost import (DEFAULT_REORDER_TIMEOUT, DEFAULT_STATS_INTERVAL, BlockSource,
                      ReceiverHost, SenderHost)
from .mgmt_protocol import DecodeError, ManagementMessage, decode, encode
from .sim_core import MS, EventKind, Simulator
from .topology import Topology, TopologyError, remove_link

log = logging.getLogger(__name__)

CONTROL_LATENCY = 1 * MS


@dataclass
class NetworkConfig:
    max_trees: int = 3
    routing: str = "multi"
    pacing: str = "paced"
    payload_size: int = 1458
    reorder_timeout: int = DEFAULT_REORDER_TIMEOUT
    stats_interval: int | None = DEFAULT_STATS_INTERVAL
    member_expiry: int | None = None
    member_check_interval: int = 1_000_000_000
    teardown_delay: int = DEFAULT_TEARDOWN_DELAY
    control_latency: int = CONTROL_LATENCY


class Network:
    def __init__(self, topo: Topology, sim: Simulator, config: NetworkConfig | None = None):
        self.topo = topo
        self.sim = sim
        self.config = cfg = config or NetworkConfig()
        self.queues: dict[tuple[int, int], OutputQueue] = {}
        for link in topo.links:
            for u, v in ((link.a, link.b), (link.b, link.a)):
                self.queues[(u, v)] = OutputQueue(u, v, link.capacity, link.prop_delay,
                                                  link.queue_limit)
        self.switches: dict[int, SwitchState] = {
            n: SwitchState(n, topo.label(n), {v: self.queues[(n, v)] for v in topo.neighbors(n)})
            for n in topo.switches()}
        self.controller = Controller(
            topo, self.switches, send=self._packet_out, clock=sim.now,
            max_trees=cfg.max_trees, routing=cfg.routing, member_expiry=cfg.member_expiry,
            teardown_delay=cfg.teardown_delay, defer=self._defer)
        self.hosts: dict[int, SenderHost | ReceiverHost] = {}
        self.lost_in_flight = 0
        self.undeliverable = 0
        self.replies_delivered: list[tuple[int, ManagementMessage]] = []
        if cfg.member_expiry is not None:
            sim.after(cfg.member_check_interval, EventKind.TIMER_FIRE, -1, self._member_tick)

    # -- hosts ------------------------------------------------------------

    def _access_link(self, node: int) -> tuple[int, int]:
        if not self.topo.is_host(node):
            raise TopologyError(f"{self.topo.label(node)} is not a host")
        nbrs = self.topo.neighbors(node)
        if len(nbrs) != 1:
            raise TopologyError(
                f"host {self.topo.label(node)} needs exactly one access link, has {len(nbrs)}")
        return node, nbrs[0]

    def add_sender(self, node: int, source: BlockSource | None = None) -> SenderHost:
        self._access_link(node)
        source = source or BlockSource.from_rng(self.sim.random_bytes)
        host = SenderHost(self.sim, node, lambda p: self.host_send(node, p),
                          lambda m: self.host_send_mgmt(node, m), source,
                          self.config.pacing, self.config.payload_size)
        self.hosts[node] = host
        return host

    def add_receiver(self, node: int, on_delivery=None) -> ReceiverHost:
        self._access_link(node)
        host = ReceiverHost(self.sim, node, lambda m: self.host_send_mgmt(node, m),
                            self.config.reorder_timeout, self.config.stats_interval, on_delivery)
        self.hosts[node] = host
        return host

    def host_send(self, node: int, pkt: Packet) -> bool:
        q = self.queues.get(self._access_link(node))
        arrival = q.enqueue(pkt, self.sim.now()) if q is not None else None
        if arrival is None:
            return False
        self._transmit(q, pkt, arrival)
        return True

    def host_send_mgmt(self, node: int, msg: ManagementMessage) -> bool:
        return self.host_send(node, Packet(MGMT_ADDRESS, encode(msg), src_addr=host_address(node)))

    # -- data plane -------------------------------------------------------

    def _transmit(self, q: OutputQueue, pkt: Packet, arrival: int) -> None:
        self.sim.schedule(arrival, EventKind.PACKET_ARRIVAL, q.dst, self._arrive,
                          (q, q.generation, pkt))

    def _arrive(self, payload) -> None:
        q, gen, pkt = payload
        if gen != q.generation:
            self.lost_in_flight += 1
            return
        node = q.dst
        sw = self.switches.get(node)
        if sw is not None:
            sw.forward(pkt, self.sim.now(), self._transmit, self._punt)
            return
        host = self.hosts.get(node)
        if host is None:
            self.undeliverable += 1
        elif pkt.dst_addr == host.addr:
            try:
                msg = decode(pkt.payload)
            except DecodeError:
                log.warning("host %d dropped a malformed management frame", node)
                return
            self.replies_delivered.append((self.sim.now(), msg))
            host.on_message(msg)
        elif isinstance(host, ReceiverHost):
            host.on_packet(pkt)
        else:
            self.undeliverable += 1

    # -- control channel --------------------------------------------------

    def _punt(self, sw: SwitchState, pkt: Packet) -> None:
        try:
            msg = decode(pkt.payload)
        except DecodeError:
            log.warning("controller dropped a malformed frame from switch %d", sw.id)
            return
        self.sim.after(self.config.control_latency, EventKind.CONTROL, -1,
                       self.controller.receive, msg)

    def _packet_out(self, msg: ManagementMessage) -> None:
        node = address_host(msg.requester)
        if node is None or node not in self.hosts:
            log.warning("no host for reply %r", msg)
            return
        host, sw = self._access_link(node)
        pkt = Packet(host_address(node), encode(msg), src_addr=MGMT_ADDRESS)
        self.sim.after(self.config.control_latency, EventKind.CONTROL, sw,
                       self._inject, (self.queues[(sw, host)], pkt))

    def _inject(self, payload) -> None:
        q, pkt = payload
        arrival = q.enqueue(pkt, self.sim.now())
        if arrival is not None:
            self._transmit(q, pkt, arrival)

    def _defer(self, delay: int, fn) -> None:
        self.sim.after(delay, EventKind.CONTROL, -1, lambda _: fn())

    def _member_tick(self, _) -> None:
        self.controller.periodic_member_check(self.sim.now())
        self.sim.after(self.config.member_check_interval, EventKind.TIMER_FIRE, -1,
                       self._member_tick)

    # -- dynamics ---------------------------------------------------------

    def fail_link(self, a: int, b: int) -> int:
        """Cut a link now; the controller hears about it one control latency later."""
        self.topo = remove_link(self.topo, a, b)
        now = self.sim.now()
        lost = self.queues[(a, b)].fail(now) + self.queues[(b, a)].fail(now)
        self.sim.after(self.config.control_latency, EventKind.CONTROL, -1,
                       lambda _: self.controller.handle_link_failure(a, b))
        return lost

    # -- accounting -------------------------------------------------------

    def switch_drops(self, sw: int) -> int:
        """Packets lost at the switch's output ports, full or failed."""
        return sum(q.dropped for q in self.switches[sw].ports.values())

    def total_drops(self) -> int:
        return sum(q.dropped for q in self.queues.values()) + self.lost_in_flight
