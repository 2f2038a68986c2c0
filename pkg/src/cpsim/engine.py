"""Discrete-event core: integer-microsecond clock, event queue, named RNG streams."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

US_PER_S = 1_000_000
US_PER_MS = 1_000

STREAM_IDS = ("mobility", "mac-backoff", "cbf-jitter", "spawn", "equip", "cps-phase")


def seconds(value: float) -> int:
    """Convert seconds to simulation ticks (microseconds)."""
    return int(round(value * US_PER_S))


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


@dataclass(eq=False)
class Event:
    fire_at: int
    seq: int
    target: Any
    kind: str
    callback: Callable[..., None] = field(repr=False)
    args: tuple = field(default=(), repr=False)
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class EventQueue:
    """Heap of events totally ordered by ``(fire_at, seq)``.

    Cancellation is lazy: a cancelled event stays in the heap and is skipped
    when popped.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.now = 0
        self.dispatched = 0
        self.trace: list[tuple[int, int]] | None = None

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(
        self,
        fire_at: int,
        callback: Callable[..., None],
        *args: Any,
        target: Any = None,
        kind: str = "",
    ) -> Event:
        if fire_at < self.now:
            raise SchedulingError(
                f"event {kind!r} scheduled at {fire_at} us, clock is at {self.now} us"
            )
        self._seq += 1
        ev = Event(int(fire_at), self._seq, target, kind, callback, args)
        heapq.heappush(self._heap, (ev.fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, callback: Callable[..., None], *args: Any, **kw: Any) -> Event:
        return self.schedule(self.now + delay, callback, *args, **kw)

    def peek_time(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, end: int) -> None:
        """Dispatch every event with ``fire_at < end`` then set the clock to ``end``."""
        heap = self._heap
        trace = self.trace
        while heap:
            fire_at, seq, ev = heap[0]
            if fire_at >= end:
                break
            heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = fire_at
            self.dispatched += 1
            if trace is not None:
                trace.append((fire_at, seq))
            ev.callback(*ev.args)
        if end > self.now:
            self.now = end


class RngStream(random.Random):
    """Random stream keyed by ``(seed, stream_id)``.

    The state is derived from a SHA-256 digest of both, so the draw sequence
    is the same on every platform and independent of every other stream.
    """

    def __new__(cls, seed: int, stream_id: str):
        return super().__new__(cls)

    def __init__(self, seed: int, stream_id: str) -> None:
        self.seed_value = int(seed)
        self.stream_id = stream_id
        digest = hashlib.sha256(f"{int(seed)}/{stream_id}".encode()).digest()
        super().__init__(int.from_bytes(digest[:16], "big"))


def make_streams(seed: int) -> dict[str, RngStream]:
    return {sid: RngStream(seed, sid) for sid in STREAM_IDS}


def run(scenario, **kwargs):
    """Execute one scenario and return its :class:`~cpsim.metrics.RunResult`."""
    from .simulation import Simulation

    return Simulation(scenario, **kwargs).run()
