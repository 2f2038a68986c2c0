"""Reactive decentralized congestion control: CBR bands mapped to minimum send gaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .engine import ms


class DccLevel(IntEnum):
    RELAXED = 0
    ACTIVE1 = 1
    ACTIVE2 = 2
    ACTIVE3 = 3
    RESTRICTIVE = 4


@dataclass
class DccConfig:
    enabled: bool = True
    # upper CBR bound (exclusive) of Relaxed, Active1, Active2, Active3
    cbr_thresholds: tuple[float, ...] = (0.30, 0.40, 0.50, 0.65)
    # min gap in ms for Relaxed .. Restrictive
    gaps_ms: tuple[int, ...] = (100, 200, 400, 500, 1000)
    cbr_window_ms: int = 100
    cbr_averaging: int = 1

    def __post_init__(self) -> None:
        self.cbr_thresholds = tuple(float(x) for x in self.cbr_thresholds)
        self.gaps_ms = tuple(int(x) for x in self.gaps_ms)


@dataclass
class DccState:
    level: DccLevel = DccLevel.RELAXED
    min_gap: int = ms(100)
    last_tx: int | None = None
    cbr_history: list[float] = field(default_factory=list)


def dcc_update(state: DccState, cbr: float, cfg: DccConfig | None = None) -> DccState:
    """Move ``state`` to the band containing ``cbr``; bands are lower-inclusive."""
    cfg = cfg or DccConfig()
    if not 0.0 <= cbr <= 1.0:
        raise ValueError(f"cbr {cbr} outside [0, 1]")
    if not cfg.enabled:
        state.level = DccLevel.RELAXED
        state.min_gap = ms(cfg.gaps_ms[0])
        return state
    if cfg.cbr_averaging > 1:
        state.cbr_history.append(cbr)
        del state.cbr_history[:-cfg.cbr_averaging]
        cbr = sum(state.cbr_history) / len(state.cbr_history)
    level = len(cfg.cbr_thresholds)
    for i, upper in enumerate(cfg.cbr_thresholds):
        if cbr < upper:
            level = i
            break
    state.level = DccLevel(level)
    state.min_gap = ms(cfg.gaps_ms[level])
    return state


def dcc_send_condition(state: DccState, now: int) -> bool:
    return state.last_tx is None or now - state.last_tx >= state.min_gap


def next_allowed(state: DccState) -> int:
    return 0 if state.last_tx is None else state.last_tx + state.min_gap
