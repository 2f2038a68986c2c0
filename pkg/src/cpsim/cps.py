"""Collective Perception Service with optional application-layer multi-hop forwarding.

Each station keeps a Local Environment Model (LEM) keyed by object id. Every
CPS cycle it drains the buffer of received CPMs into the LEM, refreshes the
locally sensed objects, and builds a CPM from the objects whose kinematic
trigger fires. In application-forwarding mode remote objects whose hop count
is below the limit are carried too; hop counts are incremented on reception.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dcc import dcc_send_condition
from .geometry import count_hits


class CpsMode(str, enum.Enum):
    BASELINE = "baseline"
    APP_FORWARDING = "app-forwarding"
    GBC_FORWARDING = "gbc-forwarding"


@dataclass
class CpsConfig:
    mode: CpsMode = CpsMode.BASELINE
    max_hop: int = 2
    period_ms: int = 100
    sensor_radius_m: float = 85.0
    position_threshold_m: float = 4.0
    speed_threshold_mps: float = 4.0
    heading_threshold_deg: float = 4.0
    lapse_s: float = 1.0
    max_objects: int = 128
    lem_update_mode: str = "literal"
    # LEM entries older than this are evicted at the end of the cycle (0 disables)
    lem_max_age_s: float = 1.0

    def __post_init__(self) -> None:
        self.mode = CpsMode(self.mode)


@dataclass(frozen=True, slots=True)
class PerceivedObject:
    object_id: int
    x: float
    y: float
    speed: float
    heading: float
    measured_at: int
    hop_count: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def received(self) -> "PerceivedObject":
        return PerceivedObject(self.object_id, self.x, self.y, self.speed, self.heading,
                               self.measured_at, self.hop_count + 1)


@dataclass(frozen=True, slots=True)
class Snapshot:
    x: float
    y: float
    speed: float
    heading: float
    time: int


@dataclass(slots=True)
class LemEntry:
    object: PerceivedObject
    last_included: Snapshot | None = None


@dataclass(frozen=True)
class Cpm:
    sender_id: int
    sender_position: tuple[float, float]
    generated_at: int
    objects: tuple[PerceivedObject, ...]
    potential: int = 0

    def received(self) -> "Cpm":
        """The CPM as seen by a receiver: every hop count raised by one."""
        return Cpm(self.sender_id, self.sender_position, self.generated_at,
                   tuple(o.received() for o in self.objects), self.potential)


Lem = dict  # object_id -> LemEntry


def sense(ego_index: int, positions: np.ndarray, ids, speeds, headings, buildings: np.ndarray,
          radius: float, now: int) -> list[PerceivedObject]:
    """Vehicles within ``radius`` of the ego with an unobstructed line of sight."""
    ego = positions[ego_index]
    d = np.hypot(positions[:, 0] - ego[0], positions[:, 1] - ego[1])
    with np.errstate(invalid="ignore"):
        near = d <= radius
    near[ego_index] = False
    idx = np.flatnonzero(near)
    if len(idx) and len(buildings):
        idx = idx[count_hits(ego, positions[idx], buildings) == 0]
    return [
        PerceivedObject(int(ids[i]), float(positions[i, 0]), float(positions[i, 1]),
                        float(speeds[i]), float(headings[i]), now, 0)
        for i in idx.tolist()
    ]


def lem_update(lem: Lem, cpms, max_hop: int, mode: str = "literal") -> Lem:
    """Merge buffered, already hop-incremented CPMs into the LEM in FIFO order.

    ``literal``: an existing entry is replaced only by a strictly newer
    measurement whose hop count is below ``max_hop``. ``freshest``: the
    newest measurement always wins.
    """
    literal = mode == "literal"
    for cpm in cpms:
        for obj in cpm.objects:
            entry = lem.get(obj.object_id)
            if entry is None:
                lem[obj.object_id] = LemEntry(obj)
            elif entry.object.measured_at < obj.measured_at and (
                not literal or obj.hop_count < max_hop
            ):
                entry.object = obj
    return lem


def heading_difference(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def kinematic_change_trigger(obj: PerceivedObject, last: Snapshot | None, now: int,
                             cfg: CpsConfig | None = None) -> bool:
    cfg = cfg or _DEFAULT_CFG
    if last is None:
        return True
    if math.hypot(obj.x - last.x, obj.y - last.y) > cfg.position_threshold_m:
        return True
    if abs(obj.speed - last.speed) > cfg.speed_threshold_mps:
        return True
    if heading_difference(obj.heading, last.heading) > cfg.heading_threshold_deg:
        return True
    return now - last.time > int(round(cfg.lapse_s * 1_000_000))


_DEFAULT_CFG = CpsConfig()


def candidates(lem: Lem, mode: CpsMode, max_hop: int, now: int, cfg: CpsConfig) -> list[LemEntry]:
    if mode == CpsMode.APP_FORWARDING:
        allowed = lambda h: h < max_hop  # noqa: E731
    else:
        allowed = lambda h: h == 0  # noqa: E731
    return [
        e for e in lem.values()
        if allowed(e.object.hop_count) and kinematic_change_trigger(e.object, e.last_included, now, cfg)
    ]


def generate_cpm(sender_id: int, sender_position, lem: Lem, mode: CpsMode, max_hop: int, now: int,
                 cfg: CpsConfig) -> tuple[Cpm | None, list[LemEntry]]:
    """Build the CPM for this cycle.

    Returns the CPM (None when nothing triggered) and the LEM entries it
    carries, so the caller can stamp their inclusion snapshot once the
    message actually clears DCC. ``Cpm.potential`` is the candidate count
    before the per-message object cap.
    """
    picked = candidates(lem, mode, max_hop, now, cfg)
    if not picked:
        return None, []
    potential = len(picked)
    if potential > cfg.max_objects:
        picked.sort(key=lambda e: (e.object.hop_count, e.object.object_id))
        picked = picked[: cfg.max_objects]
    cpm = Cpm(sender_id, (float(sender_position[0]), float(sender_position[1])), now,
              tuple(e.object for e in picked), potential)
    return cpm, picked


def mark_included(entries, now: int) -> None:
    for e in entries:
        o = e.object
        e.last_included = Snapshot(o.x, o.y, o.speed, o.heading, now)


def refresh_local(lem: Lem, sensed: list[PerceivedObject]) -> None:
    for obj in sensed:
        entry = lem.get(obj.object_id)
        if entry is None:
            lem[obj.object_id] = LemEntry(obj)
        else:
            entry.object = obj


def evict_stale(lem: Lem, now: int, max_age_us: int) -> None:
    if max_age_us <= 0:
        return
    stale = [k for k, e in lem.items() if now - e.object.measured_at > max_age_us]
    for k in stale:
        del lem[k]


@dataclass
class CpsCounters:
    cycles: int = 0
    generated: int = 0
    sent: int = 0
    denied: int = 0
    empty: int = 0
    objects_sent: int = 0


@dataclass
class StationCps:
    """Per-station CPS state."""

    station_id: int
    lem: Lem = field(default_factory=dict)
    buffer: list[Cpm] = field(default_factory=list)
    counters: CpsCounters = field(default_factory=CpsCounters)
    last_generated: Cpm | None = None


def cps_cycle(st: StationCps, now: int, cfg: CpsConfig, sensed: list[PerceivedObject],
              dcc_state, send, sender_position) -> Cpm | None:
    """One CPS execution: drain buffer, refresh sensing, generate, gate on DCC, send.

    Returns the CPM that was handed to the network layer, if any. Entries of
    a denied CPM keep their previous inclusion snapshot.
    """
    st.counters.cycles += 1
    lem_update(st.lem, st.buffer, cfg.max_hop, cfg.lem_update_mode)
    st.buffer.clear()
    refresh_local(st.lem, sensed)
    evict_stale(st.lem, now, int(round(cfg.lem_max_age_s * 1_000_000)))
    cpm, entries = generate_cpm(st.station_id, sender_position, st.lem, cfg.mode, cfg.max_hop,
                                now, cfg)
    st.last_generated = cpm
    if cpm is None:
        st.counters.empty += 1
        return None
    st.counters.generated += 1
    if not dcc_send_condition(dcc_state, now):
        st.counters.denied += 1
        return None
    dcc_state.last_tx = now
    mark_included(entries, now)
    st.counters.sent += 1
    st.counters.objects_sent += len(cpm.objects)
    send(cpm)
    return cpm
