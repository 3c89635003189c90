"""Single-tree and multi-tree route computation for a multicast session.

All shares are integer bits per second. Trees are rooted at the sender
and use directed links ``(parent, child)``; a link's two directions are
budgeted independently. Hosts other than the sender never forward, so
they appear in trees only as leaves.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import linprog

from .topology import MBPS, Topology

MAX_ROUTE_TAG = 0xFFF
SHARE_QUANTUM = MBPS
ORACLE_NODE_LIMIT = 11


class UnreachableReceiver(Exception):
    def __init__(self, receiver: int):
        super().__init__(f"receiver {receiver} is unreachable from the sender")
        self.receiver = receiver


@dataclass(frozen=True)
class MulticastTree:
    route: int
    root: int
    parent_of: Mapping[int, int]
    share: int

    def edges(self) -> list[tuple[int, int]]:
        return sorted((p, c) for c, p in self.parent_of.items())

    def members(self) -> set[int]:
        return {self.root, *self.parent_of}

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for c, p in sorted(self.parent_of.items()):
            out.setdefault(p, []).append(c)
        return out

    def uses_link(self, a: int, b: int) -> bool:
        return self.parent_of.get(b) == a or self.parent_of.get(a) == b

    def same_routes(self, other: "MulticastTree") -> bool:
        return self.root == other.root and dict(self.parent_of) == dict(other.parent_of)


@dataclass(frozen=True)
class TreeSet:
    trees: tuple[MulticastTree, ...] = field(default_factory=tuple)

    @property
    def total_share(self) -> int:
        return sum(t.share for t in self.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    def link_load(self) -> dict[tuple[int, int], int]:
        load: dict[tuple[int, int], int] = {}
        for t in self.trees:
            for e in t.edges():
                load[e] = load.get(e, 0) + t.share
        return load

    def shares(self) -> list[tuple[int, int]]:
        return [(t.route, t.share) for t in self.trees]


def _check_request(topo: Topology, sender: int, receivers: Iterable[int]) -> list[int]:
    recv = sorted(set(receivers))
    if not recv:
        raise ValueError("at least one receiver is required")
    if sender in recv:
        raise ValueError("sender cannot also be a receiver")
    for n in [sender, *recv]:
        if not 0 <= n < len(topo):
            raise ValueError(f"unknown node {n}")
    return recv


def _bfs_tree(topo: Topology, sender: int, receivers: list[int],
              usable=None) -> dict[int, int]:
    parent: dict[int, int] = {sender: sender}
    todo = deque([sender])
    while todo:
        u = todo.popleft()
        if u != sender and topo.is_host(u):
            continue
        for v in topo.neighbors(u):
            if v in parent or (usable is not None and not usable(u, v)):
                continue
            parent[v] = u
            todo.append(v)
    tree: dict[int, int] = {}
    for r in receivers:
        if r not in parent:
            raise UnreachableReceiver(r)
        n = r
        while n != sender and n not in tree:
            tree[n] = parent[n]
            n = parent[n]
    return tree


def compute_single_tree(topo: Topology, sender: int, receivers: Iterable[int]) -> MulticastTree:
    """Union of BFS shortest paths, ties broken by ascending node id."""
    recv = _check_request(topo, sender, receivers)
    parent_of = _bfs_tree(topo, sender, recv)
    share = min(topo.capacity(p, c) for c, p in parent_of.items())
    return MulticastTree(1, sender, parent_of, share)


def compute_tree_set(topo: Topology, sender: int, receivers: Iterable[int],
                     max_trees: int) -> TreeSet:
    """Greedy residual packing of up to ``max_trees`` BFS trees.

    Each round runs the BFS tree on links with enough residual capacity,
    gives the tree the smallest residual on its links and subtracts it.
    """
    if max_trees < 1:
        raise ValueError("max_trees must be >= 1")
    recv = _check_request(topo, sender, receivers)
    residual: dict[tuple[int, int], int] = {}
    for link in topo.links:
        residual[(link.a, link.b)] = link.capacity
        residual[(link.b, link.a)] = link.capacity

    def usable(u: int, v: int) -> bool:
        r = residual[(u, v)]
        # untouched links stay usable even when thinner than a quantum
        return r > 0 and (r >= SHARE_QUANTUM or r == topo.capacity(u, v))

    trees: list[MulticastTree] = []
    for k in range(1, max_trees + 1):
        try:
            parent_of = _bfs_tree(topo, sender, recv, usable)
        except UnreachableReceiver:
            if not trees:
                raise
            break
        share = min(residual[(p, c)] for c, p in parent_of.items())
        for c, p in parent_of.items():
            residual[(p, c)] -= share
        trees.append(MulticastTree(k, sender, parent_of, share))
    return TreeSet(tuple(trees))


def enumerate_steiner_trees(topo: Topology, sender: int,
                            receivers: Iterable[int]) -> list[frozenset[tuple[int, int]]]:
    """All trees rooted at ``sender`` covering ``receivers`` whose leaves are receivers.

    Each tree is returned once, as a set of directed ``(parent, child)`` edges.
    """
    terminals = frozenset(receivers)
    out: list[frozenset[tuple[int, int]]] = []

    def extend_from(v: int, in_tree: set[int]) -> list[tuple[int, int]]:
        if v != sender and topo.is_host(v):
            return []
        return [(v, w) for w in topo.neighbors(v) if w not in in_tree]

    def dead_leaf(in_tree: set[int], edges: list, frontier: list) -> bool:
        parents = {p for p, _ in edges}
        open_from = {u for u, _ in frontier}
        for n in in_tree:
            if n != sender and n not in terminals and n not in parents and n not in open_from:
                return True
        return False

    def grow(in_tree: set[int], edges: list, frontier: list):
        if dead_leaf(in_tree, edges, frontier):
            return
        if not frontier:
            if terminals <= in_tree:
                out.append(frozenset(edges))
            return
        (u, v), rest = frontier[0], frontier[1:]
        # include (u, v)
        in_tree.add(v)
        nxt = [f for f in rest if f[1] != v] + extend_from(v, in_tree)
        edges.append((u, v))
        grow(in_tree, edges, nxt)
        edges.pop()
        in_tree.discard(v)
        # exclude (u, v)
        grow(in_tree, edges, rest)

    grow({sender}, [], extend_from(sender, {sender}))
    return out


def brute_force_pack(topo: Topology, sender: int, receivers: Iterable[int],
                     quantum: int = SHARE_QUANTUM) -> int:
    """Exact best total share over all tree packings, in whole quanta.

    Enumerates every Steiner tree, then searches the integer share
    assignments (in units of ``quantum``) that fit the link capacities,
    depth first. Branches are cut when the fractional packing of the
    remaining trees cannot beat the best assignment found so far.
    Only intended for small graphs.
    """
    if len(topo) > ORACLE_NODE_LIMIT:
        raise ValueError(
            f"brute_force_pack refuses graphs over {ORACLE_NODE_LIMIT} nodes (got {len(topo)})")
    recv = _check_request(topo, sender, receivers)
    trees = enumerate_steiner_trees(topo, sender, recv)
    if not trees:
        return 0
    links = sorted({e for t in trees for e in t})
    index = {e: i for i, e in enumerate(links)}
    caps = [topo.capacity(*e) // quantum for e in links]
    tree_links = [sorted(index[e] for e in t) for t in trees]
    tree_links.sort(key=lambda t: (len(t), t))
    n = len(tree_links)
    incidence = np.zeros((len(links), n))
    for i, t in enumerate(tree_links):
        incidence[t, i] = 1.0

    def relaxed_bound(i: int, residual: list[int]) -> int:
        # fractional packing of trees i..n-1 bounds every integer completion
        if i == n:
            return 0
        res = linprog(-np.ones(n - i), A_ub=incidence[:, i:], b_ub=residual,
                      bounds=(0, None), method="highs")
        return int(np.floor(-res.fun + 1e-7))

    best = 0
    ceiling = relaxed_bound(0, caps)

    def search(i: int, residual: list[int], acc: int) -> None:
        nonlocal best
        best = max(best, acc)
        if best == ceiling or i == n:
            return
        if acc + relaxed_bound(i, residual) <= best:
            return
        t = tree_links[i]
        top = min(residual[j] for j in t)
        for x in range(top, -1, -1):
            for j in t:
                residual[j] -= x
            search(i + 1, residual, acc + x)
            for j in t:
                residual[j] += x

    search(0, caps, 0)
    return best * quantum


@dataclass
class TreeReport:
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def validate_tree(tree: MulticastTree, topo: Topology, receivers: Iterable[int]) -> TreeReport:
    problems: list[str] = []
    recv = set(receivers)
    n_nodes = len(topo)

    # rootedness and acyclicity
    if tree.root in tree.parent_of:
        problems.append("rootedness: root has a parent")
    if not 0 <= tree.root < n_nodes:
        problems.append("rootedness: root is not a topology node")
    cyclic = False
    for start in tree.parent_of:
        seen = set()
        n = start
        while n in tree.parent_of:
            if n in seen:
                cyclic = True
                break
            seen.add(n)
            n = tree.parent_of[n]
        else:
            if n != tree.root:
                problems.append(f"rootedness: node {start} does not lead to the root")
        if cyclic:
            break
    if cyclic:
        problems.append("acyclicity: parent links form a cycle")

    missing = sorted(recv - tree.members())
    if missing:
        problems.append(f"receiver coverage: missing {missing}")
    parents = set(tree.parent_of.values())
    bad_leaves = sorted(c for c in tree.parent_of if c not in parents and c not in recv)
    if bad_leaves:
        problems.append(f"receiver coverage: non-receiver leaves {bad_leaves}")

    absent = [(p, c) for c, p in sorted(tree.parent_of.items()) if not topo.has_link(p, c)]
    if absent:
        problems.append(f"link existence: {absent} not in topology")

    if tree.share <= 0:
        problems.append("share feasibility: share must be positive")
    else:
        present = [topo.capacity(p, c) for c, p in tree.parent_of.items() if topo.has_link(p, c)]
        if present and tree.share > min(present):
            problems.append(f"share feasibility: share {tree.share} exceeds a link capacity {min(present)}")
    if not 1 <= tree.route <= MAX_ROUTE_TAG:
        problems.append(f"route tag: {tree.route} outside 1..{MAX_ROUTE_TAG}")
    return TreeReport(problems)


def validate_tree_set(trees: TreeSet, topo: Topology, receivers: Iterable[int]) -> TreeReport:
    recv = list(receivers)
    problems: list[str] = []
    for t in trees:
        problems += [f"tree {t.route}: {p}" for p in validate_tree(t, topo, recv).violations]
    tags = [t.route for t in trees]
    if len(set(tags)) != len(tags):
        problems.append(f"route tags not distinct: {tags}")
    for (a, b), load in sorted(trees.link_load().items()):
        if topo.has_link(a, b) and load > topo.capacity(a, b):
            problems.append(f"link feasibility: {a}->{b} carries {load} over {topo.capacity(a, b)}")
    return TreeReport(problems)
