"""GeoNetworking envelope: single-hop broadcast and geo-scoped broadcast with CBF."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Callable

from .engine import ms, seconds

SHB = "SHB"
GBC = "GBC"


@dataclass
class GeonetConfig:
    gbc_radius_m: float = 200.0
    gbc_lifetime_s: float = 1.0
    gbc_hop_limit: int = 2
    gbc_algorithm: str = "cbf"
    cbf_tmax_ms: float = 100.0
    # None: line-of-sight range at the sense threshold, computed at startup
    cbf_dmax_m: float | None = None
    cbf_jitter_ms: float = 1.0
    # route retransmissions through the station's DCC gate (queued until allowed)
    forward_dcc_gated: bool = False


@dataclass(frozen=True)
class GeoNetPacket:
    transport: str
    source_id: int
    source_position: tuple[float, float]
    sequence: int
    origin_time: int
    lifetime: int
    remaining_hops: int
    payload: Any = None
    target_center: tuple[float, float] | None = None
    target_radius_m: float | None = None
    # position of the most recent transmitter, used for the CBF distance
    sender_position: tuple[float, float] | None = None
    depth: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.source_id, self.sequence)

    def inside_target(self, pos) -> bool:
        if self.target_center is None or self.target_radius_m is None:
            return False
        return math.dist(pos, self.target_center) <= self.target_radius_m


def gn_send(source_id: int, sequence: int, transport: str, payload, position, now: int,
            cfg: GeonetConfig) -> GeoNetPacket:
    position = (float(position[0]), float(position[1]))
    if transport == SHB:
        return GeoNetPacket(SHB, source_id, position, sequence, now, seconds(cfg.gbc_lifetime_s),
                            0, payload, sender_position=position)
    if transport == GBC:
        return GeoNetPacket(
            GBC, source_id, position, sequence, now, seconds(cfg.gbc_lifetime_s),
            cfg.gbc_hop_limit, payload,
            target_center=position, target_radius_m=cfg.gbc_radius_m,
            sender_position=position,
        )
    raise ValueError(f"unknown transport {transport!r}")


def retransmission(pkt: GeoNetPacket, forwarder_position) -> GeoNetPacket:
    """Copy for re-broadcast; the target area stays fixed at origination."""
    pos = (float(forwarder_position[0]), float(forwarder_position[1]))
    return replace(pkt, remaining_hops=pkt.remaining_hops - 1, sender_position=pos,
                   depth=pkt.depth + 1)


def cbf_delay(distance_m: float, tmax_us: int, dmax_m: float) -> int:
    """Contention timer: ``tmax * (1 - min(d, dmax) / dmax)``, in microseconds."""
    return int(round(tmax_us * (1.0 - min(distance_m, dmax_m) / dmax_m)))


class DuplicateTable:
    """Recently seen ``(source_id, sequence)`` pairs, dropped ``lifetime`` after first sight."""

    def __init__(self) -> None:
        self._entries: dict[tuple[int, int], int] = {}
        self._order: deque[tuple[int, tuple[int, int]]] = deque()
        self.peak = 0

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, key, now: int, lifetime: int) -> None:
        if key in self._entries:
            return
        self._entries[key] = now + lifetime
        self._order.append((now + lifetime, key))
        if len(self._order) > 1 and self._order[-2][0] > now + lifetime:
            # mixed lifetimes: keep the expiry queue sorted
            self._order = deque(sorted(self._order))
        self.peak = max(self.peak, len(self._entries))

    def expire(self, now: int) -> None:
        order = self._order
        while order and order[0][0] <= now:
            _, key = order.popleft()
            del self._entries[key]


def expire_duplicates(table: DuplicateTable, now: int) -> None:
    table.expire(now)


class GeoRouter:
    """Per-station receive path and CBF timers.

    ``forward(pkt)`` is invoked when a contention timer expires.
    """

    def __init__(self, node_id: int, queue, cfg: GeonetConfig, dmax_m: float, rng,
                 forward: Callable[[GeoNetPacket], None]) -> None:
        self.node_id = node_id
        self.q = queue
        self.cfg = cfg
        self.dmax = dmax_m
        self.rng = rng
        self.forward = forward
        self.dups = DuplicateTable()
        self.timers: dict[tuple[int, int], Any] = {}
        self.counters = {"sent": 0, "forwarded": 0, "duplicates": 0, "dropped": 0,
                         "cancelled": 0, "malformed": 0}

    def note_own(self, pkt: GeoNetPacket) -> None:
        self.dups.add(pkt.key, self.q.now, pkt.lifetime)
        self.counters["sent"] += 1

    def receive(self, pkt: GeoNetPacket, position) -> bool:
        """Process a decoded packet. Returns True when the payload goes up to CPS."""
        now = self.q.now
        self.dups.expire(now)
        if pkt.lifetime <= 0:
            self.counters["malformed"] += 1
            return False
        key = pkt.key
        if key in self.dups:
            self.counters["duplicates"] += 1
            if self.cfg.gbc_algorithm == "cbf":
                ev = self.timers.pop(key, None)
                if ev is not None:
                    ev.cancel()
                    self.counters["cancelled"] += 1
            return False
        self.dups.add(key, now, pkt.lifetime)
        if (
            pkt.transport == GBC
            and now < pkt.origin_time + pkt.lifetime
            and pkt.remaining_hops > 0
            and pkt.inside_target(position)
        ):
            jitter = int(self.rng.uniform(0.0, ms(self.cfg.cbf_jitter_ms)))
            if self.cfg.gbc_algorithm == "cbf":
                d = math.dist(position, pkt.sender_position)
                delay = cbf_delay(d, ms(self.cfg.cbf_tmax_ms), self.dmax) + jitter
            else:
                delay = jitter
            self.timers[key] = self.q.schedule(now + delay, self._expired, pkt,
                                               target=self.node_id, kind="cbf-timer")
        return True

    def _expired(self, pkt: GeoNetPacket) -> None:
        self.timers.pop(pkt.key, None)
        self.counters["forwarded"] += 1
        self.forward(pkt)

    def cancel_all(self) -> None:
        for ev in self.timers.values():
            ev.cancel()
        self.timers.clear()
