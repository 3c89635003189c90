"""Network graph: hosts, switches and capacitated bidirectional links.

Topology files are line oriented::

    # comment
    node s host
    node sw0 switch
    link s sw0 100 [delay_us] [queue_pkts]

Capacities are given in Mbps. Each link carries traffic in both
directions, each direction with its own capacity and output queue.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import networkx as nx

from .sim_core import US

DEFAULT_PROP_DELAY = 50 * US
DEFAULT_QUEUE_LIMIT = 64
MBPS = 1_000_000


class TopologyError(ValueError):
    pass


class NodeKind(enum.Enum):
    HOST = "host"
    SWITCH = "switch"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    label: str

    @property
    def is_host(self) -> bool:
        return self.kind is NodeKind.HOST


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    capacity: int  # bits per second
    prop_delay: int = DEFAULT_PROP_DELAY  # ns
    queue_limit: int = DEFAULT_QUEUE_LIMIT

    def __post_init__(self):
        if self.a == self.b:
            raise TopologyError(f"self-loop on node {self.a}")
        if self.capacity <= 0:
            raise TopologyError(f"link {self.a}-{self.b}: capacity must be positive")
        if self.queue_limit < 1:
            raise TopologyError(f"link {self.a}-{self.b}: queue limit must be >= 1")
        if self.prop_delay < 0:
            raise TopologyError(f"link {self.a}-{self.b}: negative delay")

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.a, self.b), max(self.a, self.b))

    def other(self, n: int) -> int:
        return self.b if n == self.a else self.a


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    _by_key: dict = field(init=False, repr=False, compare=False)
    _adj: dict = field(init=False, repr=False, compare=False)
    _labels: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels: dict[str, int] = {}
        for i, n in enumerate(self.nodes):
            if n.id != i:
                raise TopologyError(f"node ids must be dense from 0, got {n.id} at {i}")
            if n.label in labels:
                raise TopologyError(f"duplicate label {n.label!r}")
            labels[n.label] = n.id
        by_key: dict[tuple[int, int], Link] = {}
        adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            if link.a not in adj or link.b not in adj:
                raise TopologyError(f"link {link.a}-{link.b} names an unknown node")
            if link.key in by_key:
                raise TopologyError(f"more than one link between {link.a} and {link.b}")
            by_key[link.key] = link
            adj[link.a].append(link.b)
            adj[link.b].append(link.a)
        for v in adj.values():
            v.sort()
        object.__setattr__(self, "_by_key", by_key)
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_labels", labels)

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, label: str) -> int:
        try:
            return self._labels[label]
        except KeyError:
            raise TopologyError(f"unknown node {label!r}") from None

    def label(self, n: int) -> str:
        return self.nodes[n].label

    def is_host(self, n: int) -> bool:
        return self.nodes[n].kind is NodeKind.HOST

    def hosts(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.HOST]

    def switches(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.SWITCH]

    def neighbors(self, n: int) -> list[int]:
        """Neighbours in ascending id order."""
        return self._adj[n]

    def link(self, a: int, b: int) -> Link | None:
        return self._by_key.get((min(a, b), max(a, b)))

    def has_link(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._by_key

    def capacity(self, a: int, b: int) -> int:
        link = self.link(a, b)
        if link is None:
            raise TopologyError(f"no link between {a} and {b}")
        return link.capacity

    def directed_links(self) -> list[tuple[int, int]]:
        out = []
        for link in self.links:
            out.append((link.a, link.b))
            out.append((link.b, link.a))
        return sorted(out)

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        seen = {0}
        todo = deque([0])
        while todo:
            u = todo.popleft()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        return len(seen) == len(self.nodes)

    def to_text(self) -> str:
        """Canonical serialization: nodes by id, links by (min id, max id)."""
        lines = [f"node {n.label} {n.kind.value}" for n in self.nodes]
        for link in sorted(self.links, key=lambda l: l.key):
            a, b = link.key
            lines.append(
                f"link {self.label(a)} {self.label(b)} {_format_mbps(link.capacity)} "
                f"{_format_us(link.prop_delay)} {link.queue_limit}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _format_mbps(bps: int) -> str:
    if bps % MBPS == 0:
        return str(bps // MBPS)
    return repr(bps / MBPS)


def _format_us(ns: int) -> str:
    if ns % US == 0:
        return str(ns // US)
    return repr(ns / US)


def _parse_number(tok: str, what: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise TopologyError(f"line {lineno}: {what} {tok!r} is not a number") from None


def parse_topology(source: str) -> Topology:
    nodes: list[Node] = []
    labels: dict[str, int] = {}
    links: list[Link] = []
    seen_pairs: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "node":
            if len(fields) != 3:
                raise TopologyError(f"line {lineno}: expected 'node <label> <host|switch>'")
            label, kind = fields[1], fields[2]
            if label in labels:
                raise TopologyError(f"line {lineno}: duplicate label {label!r}")
            try:
                nk = NodeKind(kind)
            except ValueError:
                raise TopologyError(f"line {lineno}: unknown node kind {kind!r}") from None
            labels[label] = len(nodes)
            nodes.append(Node(len(nodes), nk, label))
        elif fields[0] == "link":
            if not 4 <= len(fields) <= 6:
                raise TopologyError(
                    f"line {lineno}: expected 'link <a> <b> <capacity_mbps> [delay_us] [queue_pkts]'")
            ends = []
            for lab in fields[1:3]:
                if lab not in labels:
                    raise TopologyError(f"line {lineno}: unknown node {lab!r}")
                ends.append(labels[lab])
            a, b = ends
            if a == b:
                raise TopologyError(f"line {lineno}: link from {fields[1]!r} to itself")
            cap = _parse_number(fields[3], "capacity", lineno)
            if cap <= 0:
                raise TopologyError(f"line {lineno}: capacity must be positive")
            delay = DEFAULT_PROP_DELAY
            if len(fields) >= 5:
                d = _parse_number(fields[4], "delay", lineno)
                if d < 0:
                    raise TopologyError(f"line {lineno}: delay must be non-negative")
                delay = int(round(d * US))
            qlim = DEFAULT_QUEUE_LIMIT
            if len(fields) == 6:
                try:
                    qlim = int(fields[5])
                except ValueError:
                    raise TopologyError(f"line {lineno}: queue limit {fields[5]!r} is not an integer") from None
                if qlim < 1:
                    raise TopologyError(f"line {lineno}: queue limit must be >= 1")
            pair = (min(a, b), max(a, b))
            if pair in seen_pairs:
                raise TopologyError(f"line {lineno}: duplicate link {fields[1]}-{fields[2]}")
            seen_pairs.add(pair)
            links.append(Link(a, b, int(round(cap * MBPS)), delay, qlim))
        else:
            raise TopologyError(f"line {lineno}: unknown directive {fields[0]!r}")
    return Topology(tuple(nodes), tuple(links))


def build(nodes: Iterable[tuple[str, str]], links: Iterable[tuple]) -> Topology:
    """Build from ``(label, kind)`` pairs and ``(a, b, mbps, ...)`` tuples."""
    lines = [f"node {lab} {kind}" for lab, kind in nodes]
    lines += ["link " + " ".join(str(x) for x in l) for l in links]
    return parse_topology("\n".join(lines))


PAPER_TOPOLOGY_TEXT = """\
# One sender, three receivers. Edge links 100 Mbps, core links 5 Mbps.
node s host
node r1 host
node r2 host
node r3 host
node sw0 switch
node sw11 switch
node sw12 switch
node sw13 switch
node sw21 switch
node sw22 switch
node sw23 switch
link s sw0 100
link sw0 sw11 5
link sw0 sw12 5
link sw0 sw13 5
link sw11 sw21 5
link sw11 sw22 5
link sw11 sw23 5
link sw12 sw21 5
link sw12 sw22 5
link sw12 sw23 5
link sw13 sw21 5
link sw13 sw22 5
link sw13 sw23 5
link sw21 r1 100
link sw22 r2 100
link sw23 r3 100
"""


def paper_topology() -> Topology:
    return parse_topology(PAPER_TOPOLOGY_TEXT)


def max_flow(topo: Topology, src: int, dst: int) -> int:
    """Maximum src->dst flow in bps; every direction of a link has full capacity."""
    if src == dst:
        raise ValueError("src and dst must differ")
    for n in (src, dst):
        if not 0 <= n < len(topo):
            raise TopologyError(f"unknown node {n}")
    g = nx.DiGraph()
    g.add_nodes_from(range(len(topo)))
    for link in topo.links:
        g.add_edge(link.a, link.b, capacity=link.capacity)
        g.add_edge(link.b, link.a, capacity=link.capacity)
    value, _ = nx.maximum_flow(g, src, dst)
    return int(value)


def remove_link(topo: Topology, a: int, b: int) -> Topology:
    if not topo.has_link(a, b):
        raise TopologyError(f"no link between {a} and {b}")
    key = (min(a, b), max(a, b))
    return Topology(topo.nodes, tuple(l for l in topo.links if l.key != key))
