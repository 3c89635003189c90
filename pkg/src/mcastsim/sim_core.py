"""Deterministic discrete-event engine.

Virtual time is an integer count of nanoseconds. Events fire in
``(fire_at, seq)`` order, where ``seq`` is the insertion counter, so two
runs that schedule the same events in the same order replay identically.
"""
from __future__ import annotations

import enum
import hashlib
import heapq
import random
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer nanoseconds (rounded to nearest)."""
    return int(round(value * SEC))


def format_time(t: int) -> str:
    return f"{t // SEC}.{t % SEC:09d}"


class EventKind(enum.Enum):
    PACKET_ARRIVAL = "packet"
    TIMER_FIRE = "timer"
    HOST_ACTION = "host"
    CONTROL = "control"


class SchedulingError(ValueError):
    pass


class Event:
    __slots__ = ("fire_at", "seq", "kind", "target", "action", "payload")

    def __init__(self, fire_at: int, seq: int, kind: EventKind, target: int,
                 action: Callable[[Any], None], payload: Any = None):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.target = target
        self.action = action
        self.payload = payload

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    def __repr__(self) -> str:
        return (f"Event({format_time(self.fire_at)}, seq={self.seq}, "
                f"{self.kind.value}, target={self.target})")


class Simulator:
    """Single-threaded event loop with a seeded random source.

    ``trace=True`` keeps one ``(fire_at, seq, kind, target)`` tuple per
    processed event; ``trace_digest()`` hashes that record.
    """

    def __init__(self, seed: int, trace: bool = False):
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        self.seed = seed
        self._rng = random.Random(seed)
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._now = 0
        self._stopped = False
        self.processed = 0
        self.trace: list[tuple[int, int, str, int]] | None = [] if trace else None

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, kind: EventKind, target: int,
                 action: Callable[[Any], None], payload: Any = None) -> Event:
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule at {fire_at} ns, simulator is at {self._now} ns")
        ev = Event(fire_at, self._seq, kind, target, action, payload)
        heapq.heappush(self._heap, (fire_at, self._seq, ev))
        self._seq += 1
        return ev

    def after(self, delay: int, kind: EventKind, target: int,
              action: Callable[[Any], None], payload: Any = None) -> Event:
        return self.schedule(self._now + delay, kind, target, action, payload)

    def stop(self) -> None:
        """Make the current ``run_until`` return after the running event."""
        self._stopped = True

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, deadline: int) -> int:
        if deadline < self._now:
            raise SchedulingError(f"deadline {deadline} is before now {self._now}")
        heap = self._heap
        trace = self.trace
        count = 0
        self._stopped = False
        pop = heapq.heappop
        while heap and heap[0][0] <= deadline:
            fire_at, seq, ev = pop(heap)
            self._now = fire_at
            if trace is not None:
                trace.append((fire_at, seq, ev.kind.value, ev.target))
            ev.action(ev.payload)
            count += 1
            if self._stopped:
                self.processed += count
                return count
        self._now = deadline
        self.processed += count
        return count

    def next_random(self, bound: int) -> int:
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self._rng.randrange(bound)

    def random_bytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def trace_digest(self) -> str:
        if self.trace is None:
            raise RuntimeError("tracing is disabled")
        h = hashlib.sha256()
        for fire_at, seq, kind, target in self.trace:
            h.update(f"{fire_at},{seq},{kind},{target}\n".encode())
        return h.hexdigest()
