"""One simulation run: traffic, radio channel and per-station CPS/DCC/GeoNet stacks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .cps import CpsMode, StationCps, cps_cycle, sense
from .dcc import DccState, dcc_send_condition, dcc_update, next_allowed
from .engine import EventQueue, make_streams, ms, seconds
from .geonet import GBC, SHB, GeoRouter, gn_send, retransmission
from .metrics import RunResult, ear
from .mobility import Traffic, build_map
from .radio import Channel, Frame, airtime_us, frame_bytes, los_range_m, power_matrix

GRANT_CPM = 0
GRANT_FORWARD = 1


@dataclass
class Station:
    """Protocol stack of one equipped vehicle, bound to a channel slot."""

    vehicle_id: int
    slot: int
    cps: StationCps
    dcc: DccState
    router: GeoRouter | None = None
    sequence: int = 0
    cycle_event: object = None
    release_event: object = None
    forward_queue: deque = field(default_factory=deque)
    grants: int = 0
    forwards_sent: int = 0
    forwards_expired: int = 0
    last_ear: int | None = None
    alive: bool = True


class Simulation:
    """Build all state for ``scenario`` and execute it with :meth:`run`.

    ``vehicles`` replaces the random spawn plan (one entry per slot) and
    ``static`` freezes mobility; both exist for hand-built topologies.
    With ``trace`` the run keeps an ordered log of position snapshots,
    CPS cycles and CPM deliveries for offline re-evaluation.
    """

    def __init__(self, scenario: ScenarioConfig, vehicles=None, static: bool = False,
                 trace: bool = False) -> None:
        self.cfg = scenario
        self.q = EventQueue()
        self.streams = make_streams(scenario.engine.seed)
        self.map = build_map(scenario.map)
        self.buildings = self.map.building_array
        self.traffic = Traffic(self.map, scenario.mobility, self.streams, vehicles=vehicles,
                               static=static)
        self.n = len(self.traffic.vehicles)
        self.channel = Channel(self.q, scenario.radio, self.n, self.streams["mac-backoff"],
                               on_receive=self._on_receive, on_transmit=self._on_transmit)
        self.mode = CpsMode(scenario.cps.mode)
        g = scenario.geonet
        self.dmax = g.cbf_dmax_m if g.cbf_dmax_m is not None else los_range_m(scenario.radio)
        self.duration = seconds(scenario.engine.duration_s)
        self.warmup = seconds(scenario.engine.warmup_s)
        self.period = ms(scenario.cps.period_ms)
        self.step_us = seconds(scenario.mobility.step_s)
        self.cbr_window = ms(scenario.dcc.cbr_window_ms)
        half = scenario.metrics.log_region_m / 2.0
        c = self.map.extent_m / 2.0
        self.region = (c - half, c + half)
        self.range_m = scenario.metrics.range_of_interest_m
        self.max_aoi = seconds(scenario.metrics.max_aoi_s)
        self.ear_period = ms(scenario.metrics.ear_period_ms)

        self.stations: list[Station | None] = [None] * self.n
        self.result = RunResult(config=scenario.to_dict(), seed=scenario.engine.seed,
                                duration_us=self.duration, final_clock=0, events_dispatched=0)
        self.trace: list[tuple] | None = [] if trace else None
        self.stats = {
            "app_hop_violations": 0, "baseline_remote_objects": 0, "gbc_chain_violations": 0,
            "gbc_lifetime_violations": 0, "gbc_repeat_forwards": 0, "cpm_objects_sent": 0,
            "cpms_on_air": 0, "forwards_on_air": 0, "queue_drops_cpm": 0,
            "queue_drops_forward": 0, "forward_expired": 0, "dup_table_peak": 0,
            "vehicle_count_sum": 0, "vehicle_count_samples": 0,
        }
        self._forwarded_keys: set[tuple[int, tuple[int, int]]] = set()
        self._rx_cache: tuple = (None, None, None)
        self._aoi_frames: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._aoi_rx: list[tuple[int, int, int]] = []
        self._vehicle_ids = [None if v is None else v.id for v in self.traffic.vehicles]
        self._refresh_world()
        for slot, v in enumerate(self.traffic.vehicles):
            if v is not None and v.equipped:
                self._attach(slot, v.id, start=0)

    # -- world state --------------------------------------------------------
    def _refresh_world(self) -> None:
        vs = self.traffic.vehicles
        self.pos = self.traffic.positions()
        self.ids = np.array([-1 if v is None else v.id for v in vs], dtype=np.int64)
        self.speeds = np.array([0.0 if v is None else v.speed for v in vs])
        self.headings = np.array([0.0 if v is None else v.heading for v in vs])
        active = np.array([v is not None and v.equipped for v in vs], dtype=bool)
        self.channel.set_power(power_matrix(self.pos, self.buildings, self.cfg.radio, active))
        self.stats["vehicle_count_sum"] += int((self.ids >= 0).sum())
        self.stats["vehicle_count_samples"] += 1
        if self.trace is not None:
            self.trace.append(("pos", self.q.now, self.ids.copy(), self.pos.copy(),
                               self.speeds.copy(), self.headings.copy()))

    def in_region(self, slot: int) -> bool:
        lo, hi = self.region
        x, y = self.pos[slot]
        return lo <= x <= hi and lo <= y <= hi

    def _mobility(self) -> None:
        now = self.q.now
        self.traffic.step(self.cfg.mobility.step_s, now)
        for slot, v in enumerate(self.traffic.vehicles):
            vid = None if v is None else v.id
            if vid == self._vehicle_ids[slot]:
                continue
            self._vehicle_ids[slot] = vid
            self._detach(slot)
            self.channel.reset_slot(slot)
            if v is not None and v.equipped:
                self._attach(slot, v.id, start=now)
        self._refresh_world()
        if now + self.step_us < self.duration:
            self.q.schedule(now + self.step_us, self._mobility, target="mobility", kind="mobility")

    # -- station lifecycle ----------------------------------------------------
    def _attach(self, slot: int, vehicle_id: int, start: int) -> None:
        st = Station(vehicle_id, slot, StationCps(vehicle_id), DccState(
            min_gap=ms(self.cfg.dcc.gaps_ms[0])))
        st.router = GeoRouter(vehicle_id, self.q, self.cfg.geonet, self.dmax,
                              self.streams["cbf-jitter"], lambda pkt, st=st: self._forward(st, pkt))
        self.stations[slot] = st
        phase = self.streams["cps-phase"].randrange(self.period)
        first = start + phase
        if first < self.duration:
            st.cycle_event = self.q.schedule(first, self._cycle, st, target=vehicle_id,
                                             kind="cps-cycle")

    def _detach(self, slot: int) -> None:
        st = self.stations[slot]
        if st is None:
            return
        st.alive = False
        for ev in (st.cycle_event, st.release_event):
            if ev is not None:
                ev.cancel()
        st.router.cancel_all()
        self._record_node(st)
        self.stations[slot] = None

    def _record_node(self, st: Station) -> None:
        c = st.cps.counters
        r = st.router.counters
        self.stats["dup_table_peak"] = max(self.stats["dup_table_peak"], st.router.dups.peak)
        self.result.node_counters.append((
            st.vehicle_id, c.cycles, c.generated, c.sent, c.denied, c.empty, c.objects_sent,
            r["sent"], r["forwarded"], r["duplicates"], r["cancelled"], r["malformed"],
            st.forwards_sent, st.forwards_expired, st.grants,
        ))

    # -- CPS cycle --------------------------------------------------------------
    def _cycle(self, st: Station) -> None:
        now = self.q.now
        slot = st.slot
        nxt = now + self.period
        st.cycle_event = (self.q.schedule(nxt, self._cycle, st, target=st.vehicle_id,
                                          kind="cps-cycle") if nxt < self.duration else None)
        cbr = self.channel.cbr(slot, self.cbr_window)
        dcc_update(st.dcc, cbr, self.cfg.dcc)
        self.result.dcc.append((st.vehicle_id, now, cbr, int(st.dcc.level)))
        sensed = sense(slot, self.pos, self.ids, self.speeds, self.headings, self.buildings,
                       self.cfg.cps.sensor_radius_m, now)
        if self.trace is not None:
            self.trace.append(("cycle", now, st.vehicle_id, slot))
        before = st.cps.counters.generated
        sent = cps_cycle(st.cps, now, self.cfg.cps, sensed, st.dcc,
                         lambda cpm: self._send_cpm(st, cpm), self.pos[slot])
        logging = now >= self.warmup and self.in_region(slot)
        if not logging:
            return
        res = self.result
        res.cbr.append((st.vehicle_id, now, cbr))
        if st.cps.counters.generated > before:
            gen = st.cps.last_generated
            res.potential.append((st.vehicle_id, now, gen.potential,
                                  len(sent.objects) if sent is not None else 0))
        if st.last_ear is not None and now - st.last_ear < self.ear_period:
            return
        st.last_ear = now
        s = ear(slot, self.pos, self.ids, [o.object_id for o in sensed], st.cps.lem, now,
                self.range_m, self.max_aoi, station_id=st.vehicle_id)
        if s.in_range > 0:
            res.ear.append((s.station, s.at, s.perceived, s.in_range))

    def _grant(self, st: Station, kind: int) -> None:
        now = self.q.now
        st.grants += 1
        self.result.grants.append((st.vehicle_id, now, st.dcc.min_gap, int(st.dcc.level), kind))

    def _send_cpm(self, st: Station, cpm) -> None:
        # cps_cycle has already checked the DCC gate and stamped last_tx
        self._grant(st, GRANT_CPM)
        transport = GBC if self.mode == CpsMode.GBC_FORWARDING else SHB
        st.sequence += 1
        pkt = gn_send(st.vehicle_id, st.sequence, transport, cpm, self.pos[st.slot], self.q.now,
                      self.cfg.geonet)
        st.router.note_own(pkt)
        nbytes = frame_bytes(len(cpm.objects), self.cfg.radio)
        frame = Frame(st.slot, nbytes, airtime_us(nbytes, self.cfg.radio), payload=pkt)
        if not self.channel.enqueue(st.slot, frame):
            self.stats["queue_drops_cpm"] += 1

    # -- GBC forwarding -----------------------------------------------------------
    def _forward(self, st: Station, pkt) -> None:
        """Contention timer expired: retransmit now, or queue for the DCC gate if configured."""
        key = (st.vehicle_id, pkt.key)
        if key in self._forwarded_keys:
            self.stats["gbc_repeat_forwards"] += 1
        self._forwarded_keys.add(key)
        if not self.cfg.geonet.forward_dcc_gated:
            self._emit_forward(st, pkt)
            return
        st.forward_queue.append(pkt)
        if st.release_event is None:
            self._release(st)

    def _emit_forward(self, st: Station, pkt) -> None:
        out = retransmission(pkt, self.pos[st.slot])
        nbytes = frame_bytes(len(out.payload.objects), self.cfg.radio)
        frame = Frame(st.slot, nbytes, airtime_us(nbytes, self.cfg.radio), payload=out,
                      expires_at=out.origin_time + out.lifetime)
        st.forwards_sent += 1
        if not self.channel.enqueue(st.slot, frame):
            self.stats["queue_drops_forward"] += 1

    def _release(self, st: Station) -> None:
        st.release_event = None
        if not st.alive:
            return
        now = self.q.now
        fq = st.forward_queue
        while fq and now >= fq[0].origin_time + fq[0].lifetime:
            fq.popleft()
            st.forwards_expired += 1
            self.stats["forward_expired"] += 1
        if not fq:
            return
        if dcc_send_condition(st.dcc, now):
            pkt = fq.popleft()
            st.dcc.last_tx = now
            self._grant(st, GRANT_FORWARD)
            self._emit_forward(st, pkt)
            if not fq:
                return
        at = max(next_allowed(st.dcc), now + 1)
        if at < self.duration:
            st.release_event = self.q.schedule(at, self._release, st, target=st.vehicle_id,
                                               kind="dcc-release")

    # -- radio callbacks --------------------------------------------------------------
    def _on_transmit(self, slot: int, frame: Frame) -> None:
        pkt = frame.payload
        now = self.q.now
        if pkt.depth == 0:
            self.stats["cpms_on_air"] += 1
            self.stats["cpm_objects_sent"] += len(pkt.payload.objects)
            for o in pkt.payload.objects:
                if self.mode == CpsMode.APP_FORWARDING and o.hop_count >= self.cfg.cps.max_hop:
                    self.stats["app_hop_violations"] += 1
                if self.mode != CpsMode.APP_FORWARDING and o.hop_count != 0:
                    self.stats["baseline_remote_objects"] += 1
        else:
            self.stats["forwards_on_air"] += 1
            if pkt.depth > self.cfg.geonet.gbc_hop_limit or pkt.remaining_hops < 0:
                self.stats["gbc_chain_violations"] += 1
            if now >= pkt.origin_time + pkt.lifetime:
                self.stats["gbc_lifetime_violations"] += 1

    def _on_receive(self, slot: int, frame: Frame) -> None:
        st = self.stations[slot]
        if st is None:
            return
        pkt = frame.payload
        if not st.router.receive(pkt, self.pos[slot]):
            return
        now = self.q.now
        cached_frame, cpm, fidx = self._rx_cache
        if cached_frame is not frame:
            cpm = pkt.payload.received()
            fidx = None
            self._rx_cache = (frame, cpm, fidx)
        st.cps.buffer.append(cpm)
        if self.trace is not None:
            self.trace.append(("rx", now, st.vehicle_id, cpm))
        if now >= self.warmup and self.in_region(slot):
            if fidx is None:
                # object columns are built once per frame and shared by all receivers
                objs = cpm.objects
                self._aoi_frames.append((
                    np.array([o.object_id for o in objs], dtype=np.int32),
                    np.array([now - o.measured_at for o in objs], dtype=np.int32),
                    np.array([o.hop_count for o in objs], dtype=np.int32),
                ))
                fidx = len(self._aoi_frames) - 1
                self._rx_cache = (frame, cpm, fidx)
            self._aoi_rx.append((st.vehicle_id, now, fidx))

    def _aoi_table(self) -> np.ndarray:
        if not self._aoi_rx:
            return np.zeros((0, 5), dtype=np.int32)
        rx = np.array(self._aoi_rx, dtype=np.int64)
        frames = self._aoi_frames
        counts = np.array([len(frames[i][0]) for i in rx[:, 2]], dtype=np.int64)
        out = np.empty((int(counts.sum()), 5), dtype=np.int32)
        out[:, 0] = np.repeat(rx[:, 0], counts)
        out[:, 1] = np.repeat(rx[:, 1], counts)
        for col, k in ((2, 0), (3, 1), (4, 2)):
            out[:, col] = np.concatenate([frames[i][k] for i in rx[:, 2]])
        return out

    # -- run ----------------------------------------------------------------------------
    def run(self) -> RunResult:
        if self.duration > 0 and self.step_us < self.duration and not self.traffic.static:
            self.q.schedule(self.step_us, self._mobility, target="mobility", kind="mobility")
        self.q.run_until(self.duration)
        for st in self.stations:
            if st is not None:
                self._record_node(st)
        res = self.result
        res.aoi = self._aoi_table()
        res.final_clock = self.q.now
        res.events_dispatched = self.q.dispatched
        ch = self.channel
        counters = dict(self.stats)
        samples = counters.pop("vehicle_count_samples")
        counters["mean_vehicle_count"] = counters.pop("vehicle_count_sum") / max(samples, 1)
        counters.update({
            "frames_sent": ch.frames_sent, "frames_decoded": ch.decoded, "frames_lost": ch.lost,
            "mac_queue_drops": ch.queue_drops, "mac_expired_drops": ch.expired_drops,
            "vehicles_spawned": self.traffic.spawned, "vehicles_despawned": len(self.traffic.despawned),
            "min_gap_seen_m": (None if self.traffic.min_gap_seen == float("inf")
                               else round(self.traffic.min_gap_seen, 6)),
            "cbf_dmax_m": round(self.dmax, 6),
        })
        for name in ("cycles", "generated", "sent", "denied", "empty", "objects_sent"):
            counters[f"cps_{name}"] = 0
        for row in res.node_counters:
            for name, v in zip(("cycles", "generated", "sent", "denied", "empty", "objects_sent"),
                               row[1:7]):
                counters[f"cps_{name}"] += v
        for i, name in enumerate(("sent", "forwarded", "duplicates", "cancelled", "malformed")):
            counters[f"gn_{name}"] = sum(row[7 + i] for row in res.node_counters)
        res.counters = counters
        return res
