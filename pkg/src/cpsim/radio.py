"""Simplified ITS-G5 PHY/MAC.

Propagation is log-distance from a 1 m free-space reference at 5.9 GHz,
minus a fixed loss per building crossed by the direct path. Channel access
is CSMA with AIFS and a frozen-counter backoff. A frame is decoded when it
clears the decode floor and beats the summed co-temporal interference plus
noise by the capture margin.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .geometry import count_hits

C_LIGHT = 299_792_458.0


@dataclass
class RadioConfig:
    tx_power_dbm: float = 10 * math.log10(200.0)  # 200 mW
    bitrate_bps: float = 6_000_000
    frequency_hz: float = 5.9e9
    sense_threshold_dbm: float = -85.0
    decode_floor_dbm: float = -85.0
    # nominal receiver noise threshold, kept for provenance; capture uses thermal_noise_dbm
    noise_floor_dbm: float = -65.0
    thermal_noise_dbm: float = -99.0
    capture_margin_db: float = 10.0
    preamble_us: int = 40
    per_wall_loss_db: float = 15.0
    pathloss_exponent: float = 2.0
    aifs_us: int = 58
    slot_us: int = 13
    cw: int = 15
    queue_length: int = 4
    header_bytes: int = 120
    bytes_per_object: int = 35


def reference_loss_db(cfg: RadioConfig) -> float:
    """Free-space loss at 1 m: ``20 log10(4 pi / lambda)``."""
    lam = C_LIGHT / cfg.frequency_hz
    return 20.0 * math.log10(4.0 * math.pi / lam)


def airtime_us(payload_bytes: int, cfg: RadioConfig) -> int:
    return cfg.preamble_us + math.ceil(payload_bytes * 8 / cfg.bitrate_bps * 1e6)


def frame_bytes(n_objects: int, cfg: RadioConfig) -> int:
    return cfg.header_bytes + cfg.bytes_per_object * n_objects


def los_range_m(cfg: RadioConfig, threshold_dbm: float | None = None) -> float:
    """Distance at which the line-of-sight power falls to ``threshold_dbm``."""
    thr = cfg.sense_threshold_dbm if threshold_dbm is None else threshold_dbm
    budget = cfg.tx_power_dbm - reference_loss_db(cfg) - thr
    return 10.0 ** (budget / (10.0 * cfg.pathloss_exponent))


def received_power(tx, rx, buildings: np.ndarray, cfg: RadioConfig) -> float:
    """Received power in dBm between two points; distances below 1 m clamp to 1 m."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    d = max(float(np.hypot(*(rx - tx))), 1.0)
    walls = int(count_hits(tx, rx, buildings))
    return (
        cfg.tx_power_dbm
        - reference_loss_db(cfg)
        - 10.0 * cfg.pathloss_exponent * math.log10(d)
        - cfg.per_wall_loss_db * walls
    )


def power_matrix(pos: np.ndarray, buildings: np.ndarray, cfg: RadioConfig,
                 active: np.ndarray | None = None) -> np.ndarray:
    """Pairwise received power (dBm), ``-inf`` on the diagonal and for inactive nodes.

    Symmetric by construction: each unordered pair is evaluated once.
    """
    n = len(pos)
    out = np.full((n, n), -np.inf)
    if n < 2:
        return out
    idx = np.arange(n) if active is None else np.flatnonzero(active & ~np.isnan(pos[:, 0]))
    if len(idx) < 2:
        return out
    iu, ju = np.triu_indices(len(idx), k=1)
    a = idx[iu]
    b = idx[ju]
    d = np.maximum(np.hypot(pos[b, 0] - pos[a, 0], pos[b, 1] - pos[a, 1]), 1.0)
    p = cfg.tx_power_dbm - reference_loss_db(cfg) - 10.0 * cfg.pathloss_exponent * np.log10(d)
    # only pairs that could still clear the sense threshold need the wall count
    near = p >= cfg.sense_threshold_dbm
    if near.any() and len(buildings):
        walls = count_hits(pos[a[near]], pos[b[near]], buildings)
        p[near] -= cfg.per_wall_loss_db * walls
    out[a, b] = p
    out[b, a] = p
    return out


@dataclass(eq=False)
class Frame:
    tx_node: int
    payload_bytes: int
    airtime: int
    payload: Any = None
    tx_start: int = -1
    tx_id: int = -1
    power: np.ndarray | None = field(default=None, repr=False)
    epochs: np.ndarray | None = field(default=None, repr=False)
    sensed: np.ndarray | None = field(default=None, repr=False)
    # frames still queued at this time are dropped instead of sent
    expires_at: int | None = None

    @property
    def tx_end(self) -> int:
        return self.tx_start + self.airtime


IDLE, AIFS_WAIT, DEFER, BACKOFF, TX = range(5)


class Channel:
    """Shared medium plus one CSMA MAC per node slot.

    ``on_receive(slot, frame)`` is called for every successful decode at
    the end of the frame; ``on_transmit(slot, frame)`` when a frame goes on
    air.
    """

    def __init__(self, queue, cfg: RadioConfig, n_slots: int, rng,
                 on_receive: Callable[[int, Frame], None],
                 on_transmit: Callable[[int, Frame], None] | None = None) -> None:
        self.q = queue
        self.cfg = cfg
        self.n = n_slots
        self.rng = rng
        self.on_receive = on_receive
        self.on_transmit = on_transmit
        self.power = np.full((n_slots, n_slots), -np.inf)
        self.power_mw = np.zeros((n_slots, n_slots))
        self.busy_count = np.zeros(n_slots, dtype=np.int64)
        self.busy_since = np.zeros(n_slots, dtype=np.int64)
        self.busy_acc = np.zeros(n_slots, dtype=np.int64)
        self.epoch = np.zeros(n_slots, dtype=np.int64)
        self._checkpoints: dict[int, tuple[int, int]] = {}
        self.born = np.zeros(n_slots, dtype=np.int64)
        self.noise_mw = 10 ** (cfg.thermal_noise_dbm / 10.0)

        self.state = [IDLE] * n_slots
        self.queues = [deque() for _ in range(n_slots)]
        self.backoff = [0] * n_slots
        self.idle_since = [0] * n_slots
        self.timer = [None] * n_slots
        self.tx_until = np.full(n_slots, -1, dtype=np.int64)

        self.active_frames: list[Frame] = []
        self.recent_frames: deque[Frame] = deque()
        self.max_airtime = 0
        self.frames_sent = 0
        self.queue_drops = 0
        self.expired_drops = 0
        self.decoded = 0
        self.lost = 0
        self.tx_log: list[tuple[int, int, int]] = []

    # -- geometry -------------------------------------------------------
    def set_power(self, power_dbm: np.ndarray) -> None:
        self.power = power_dbm
        self.power_mw = np.where(np.isfinite(power_dbm), 10 ** (power_dbm / 10.0), 0.0)

    def reset_slot(self, slot: int) -> None:
        """Forget all state of a slot whose vehicle was replaced."""
        self.epoch[slot] += 1
        self._checkpoints.pop(slot, None)
        self.busy_count[slot] = 0
        self.busy_acc[slot] = 0
        self.busy_since[slot] = self.q.now
        self.born[slot] = self.q.now
        self.state[slot] = IDLE
        self.queues[slot].clear()
        if self.timer[slot] is not None:
            self.timer[slot].cancel()
            self.timer[slot] = None
        self.tx_until[slot] = -1

    # -- busy ledger ----------------------------------------------------
    def cumulative_busy(self, slot: int, now: int) -> int:
        acc = int(self.busy_acc[slot])
        if self.busy_count[slot] > 0:
            acc += now - int(self.busy_since[slot])
        return acc

    def cbr(self, slot: int, window: int) -> float:
        """Busy fraction at ``slot`` since its previous CBR sample.

        Callers sample on a fixed period of ``window`` microseconds, so the
        span is the trailing window. The first sample after a slot is
        (re)born covers the time since birth.
        """
        if window <= 0:
            raise ValueError("window must be > 0")
        now = self.q.now
        cum = self.cumulative_busy(slot, now)
        t0, c0 = self._checkpoints.get(slot, (int(self.born[slot]), 0))
        self._checkpoints[slot] = (now, cum)
        span = now - t0
        if span <= 0:
            return 0.0
        return min(1.0, (cum - c0) / span)

    def is_idle(self, slot: int) -> bool:
        return self.busy_count[slot] == 0

    def _mark_busy(self, slots: np.ndarray, now: int) -> None:
        was_idle = self.busy_count[slots] == 0
        self.busy_count[slots] += 1
        newly = slots[was_idle]
        self.busy_since[newly] = now
        for s in newly.tolist():
            st = self.state[s]
            if st == AIFS_WAIT or st == BACKOFF:
                self._freeze(s, now)

    def _mark_idle(self, slots: np.ndarray, now: int) -> None:
        self.busy_count[slots] -= 1
        done = slots[self.busy_count[slots] == 0]
        self.busy_acc[done] += now - self.busy_since[done]
        for s in done.tolist():
            if self.state[s] == DEFER:
                self._resume(s, now)

    # -- MAC ------------------------------------------------------------
    def enqueue(self, slot: int, frame: Frame) -> bool:
        """Hand a frame to the MAC. Returns False if the FIFO was full (frame dropped)."""
        qd = self.queues[slot]
        if len(qd) >= self.cfg.queue_length:
            self.queue_drops += 1
            return False
        frame.tx_node = slot
        qd.append(frame)
        if self.state[slot] == IDLE:
            self._start_access(slot, self.q.now, post_tx=False)
        return True

    def _start_access(self, slot: int, now: int, post_tx: bool) -> None:
        if not post_tx and self.busy_count[slot] == 0:
            self.state[slot] = AIFS_WAIT
            self.idle_since[slot] = now
            self.backoff[slot] = 0
            self.timer[slot] = self.q.schedule(now + self.cfg.aifs_us, self._timer_fired, slot,
                                               target=slot, kind="mac-aifs")
            return
        self.backoff[slot] = self.rng.randrange(self.cfg.cw)
        if self.busy_count[slot] == 0:
            self._resume(slot, now)
        else:
            self.state[slot] = DEFER

    def _resume(self, slot: int, now: int) -> None:
        self.state[slot] = BACKOFF
        self.idle_since[slot] = now
        wait = self.cfg.aifs_us + self.backoff[slot] * self.cfg.slot_us
        self.timer[slot] = self.q.schedule(now + wait, self._timer_fired, slot,
                                           target=slot, kind="mac-backoff")

    def _freeze(self, slot: int, now: int) -> None:
        st = self.state[slot]
        if self.timer[slot] is not None:
            self.timer[slot].cancel()
            self.timer[slot] = None
        if st == AIFS_WAIT:
            self.backoff[slot] = self.rng.randrange(self.cfg.cw)
        else:
            elapsed = now - self.idle_since[slot] - self.cfg.aifs_us
            if elapsed > 0:
                self.backoff[slot] = max(0, self.backoff[slot] - elapsed // self.cfg.slot_us)
        self.state[slot] = DEFER

    def _timer_fired(self, slot: int) -> None:
        self.timer[slot] = None
        now = self.q.now
        qd = self.queues[slot]
        while qd and qd[0].expires_at is not None and now >= qd[0].expires_at:
            qd.popleft()
            self.expired_drops += 1
        if not qd:
            self.state[slot] = IDLE
            return
        self._transmit(slot, qd.popleft())

    def _transmit(self, slot: int, frame: Frame) -> None:
        now = self.q.now
        self.state[slot] = TX
        frame.tx_start = now
        frame.power = self.power[slot].copy()
        frame.epochs = self.epoch.copy()
        sensed = np.flatnonzero(frame.power >= self.cfg.sense_threshold_dbm)
        frame.sensed = sensed
        self.tx_until[slot] = frame.tx_end
        self.frames_sent += 1
        self.max_airtime = max(self.max_airtime, frame.airtime)
        self.active_frames.append(frame)
        self.tx_log.append((slot, now, frame.tx_end))
        self._mark_busy(np.append(sensed, slot), now)
        if self.on_transmit is not None:
            self.on_transmit(slot, frame)
        self.q.schedule(frame.tx_end, self._frame_end, frame, target=slot, kind="frame-end")

    def _frame_end(self, frame: Frame) -> None:
        now = self.q.now
        slot = frame.tx_node
        self.active_frames.remove(frame)
        self.recent_frames.append(frame)
        while self.recent_frames and self.recent_frames[0].tx_end < now - 2 * self.max_airtime:
            self.recent_frames.popleft()

        decoded = self._decode(frame)

        same_epoch = frame.sensed[self.epoch[frame.sensed] == frame.epochs[frame.sensed]]
        tx_alive = self.epoch[slot] == frame.epochs[slot]
        self._mark_idle(np.append(same_epoch, slot) if tx_alive else same_epoch, now)

        if tx_alive:
            self.state[slot] = IDLE
            self.tx_until[slot] = -1
            if self.queues[slot]:
                self._start_access(slot, now, post_tx=True)

        for r in decoded.tolist():
            self.on_receive(r, frame)

    def _decode(self, frame: Frame) -> np.ndarray:
        cfg = self.cfg
        p = frame.power
        cand = np.flatnonzero(p >= cfg.decode_floor_dbm)
        if len(cand) == 0:
            return cand
        cand = cand[self.epoch[cand] == frame.epochs[cand]]
        interference = np.zeros(len(cand))
        half_duplex = np.zeros(len(cand), dtype=bool)
        for other in self._overlapping(frame):
            mw = np.where(np.isfinite(other.power[cand]), 10 ** (other.power[cand] / 10.0), 0.0)
            interference += mw
            half_duplex |= cand == other.tx_node
        sinr_ok = p[cand] >= 10 * np.log10(interference + self.noise_mw) + cfg.capture_margin_db
        ok = sinr_ok & ~half_duplex
        self.decoded += int(ok.sum())
        self.lost += int((~ok).sum())
        return cand[ok]

    def _overlapping(self, frame: Frame):
        s, e = frame.tx_start, frame.tx_end
        for other in self.active_frames:
            if other is not frame and other.tx_start < e and other.tx_end > s:
                yield other
        for other in self.recent_frames:
            if other is not frame and other.tx_start < e and other.tx_end > s:
                yield other
