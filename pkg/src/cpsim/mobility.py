"""Manhattan grid road network with intersection buildings and a simple car-following model.

Roads run the full extent of the map. Horizontal road ``i`` lies on
``y = spacing * (i + 1)``, vertical road ``j`` on ``x = spacing * (j + 1)``.
Traffic keeps right. Headings are in degrees, counter-clockwise from +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Rect, rects_array

H, V = 0, 1

# heading -> (axis, direction)
_HEADING_TO_LANE = {0: (H, 1), 90: (V, 1), 180: (H, -1), 270: (V, -1)}
_LANE_TO_HEADING = {v: k for k, v in _HEADING_TO_LANE.items()}

STRAIGHT, LEFT, RIGHT = 0, 1, 2


class MapConfigError(ValueError):
    pass


@dataclass
class MapConfig:
    grid_n: int = 3
    extent_m: float = 1000.0
    spacing_m: float | None = None
    lanes_per_direction: int = 2
    lane_width_m: float = 3.5
    building_setback_m: float = 8.0


@dataclass
class MobilityConfig:
    density: float = 30.0
    density_basis: str = "road_km"
    penetration: float = 0.10
    desired_speed_mps: float = 13.9
    speed_spread: float = 0.10
    vehicle_length_m: float = 4.5
    min_gap_m: float = 2.0
    step_s: float = 0.1


@dataclass
class GridMap:
    grid_n: int
    spacing_m: float
    extent_m: float
    lanes_per_direction: int
    lane_width_m: float
    buildings: list[Rect]
    roads: list[Rect]
    centers: tuple[float, ...]
    building_array: np.ndarray = field(repr=False)

    @property
    def half_width_m(self) -> float:
        return self.lanes_per_direction * self.lane_width_m

    @property
    def intersections(self) -> list[tuple[float, float]]:
        return [(x, y) for x in self.centers for y in self.centers]

    @property
    def road_length_km(self) -> float:
        return 2 * self.grid_n * self.extent_m / 1000.0

    @property
    def lane_length_km(self) -> float:
        return self.road_length_km * 2 * self.lanes_per_direction

    def lane_offset(self, direction: int, lane: int, axis: int) -> float:
        off = (lane + 0.5) * self.lane_width_m
        if axis == H:
            return -off if direction > 0 else off
        return off if direction > 0 else -off

    def to_xy(self, axis: int, road: int, direction: int, lane: int, s: float) -> tuple[float, float]:
        c = self.centers[road] + self.lane_offset(direction, lane, axis)
        return (s, c) if axis == H else (c, s)

    def on_road(self, x: float, y: float, tol: float = 1e-6) -> bool:
        return any(
            r.xmin - tol <= x <= r.xmax + tol and r.ymin - tol <= y <= r.ymax + tol
            for r in self.roads
        )

    def to_json(self) -> dict:
        return {
            "grid_n": self.grid_n,
            "spacing_m": self.spacing_m,
            "extent_m": self.extent_m,
            "lanes_per_direction": self.lanes_per_direction,
            "lane_width_m": self.lane_width_m,
            "intersections": [list(p) for p in self.intersections],
            "roads": [r.as_list() for r in self.roads],
            "buildings": [r.as_list() for r in self.buildings],
        }


def build_map(cfg: MapConfig) -> GridMap:
    if cfg.grid_n < 1:
        raise MapConfigError("grid_n must be >= 1")
    if not cfg.extent_m > 0:
        raise MapConfigError("extent_m must be > 0")
    spacing = cfg.extent_m / (cfg.grid_n + 1) if cfg.spacing_m is None else float(cfg.spacing_m)
    if abs((cfg.grid_n + 1) * spacing - cfg.extent_m) > 1.0:
        raise MapConfigError(
            f"(grid_n + 1) * spacing_m = {(cfg.grid_n + 1) * spacing} m does not match "
            f"extent_m = {cfg.extent_m} m"
        )
    half = cfg.lanes_per_direction * cfg.lane_width_m
    margin = half + cfg.building_setback_m
    if 2 * margin >= spacing:
        raise MapConfigError("roads plus setbacks leave no room for buildings")

    extent = float(cfg.extent_m)
    centers = tuple(spacing * (i + 1) for i in range(cfg.grid_n))
    roads = [Rect(0.0, c - half, extent, c + half) for c in centers]
    roads += [Rect(c - half, 0.0, c + half, extent) for c in centers]

    # one square building per block, inset by the same margin on every side
    edges = (0.0,) + centers + (extent,)
    buildings = []
    for i in range(len(edges) - 1):
        for j in range(len(edges) - 1):
            buildings.append(
                Rect(edges[i] + margin, edges[j] + margin, edges[i + 1] - margin, edges[j + 1] - margin)
            )
    return GridMap(
        grid_n=cfg.grid_n,
        spacing_m=spacing,
        extent_m=extent,
        lanes_per_direction=cfg.lanes_per_direction,
        lane_width_m=cfg.lane_width_m,
        buildings=buildings,
        roads=roads,
        centers=centers,
        building_array=rects_array(buildings),
    )


@dataclass
class VehicleState:
    id: int
    axis: int
    road: int
    direction: int
    lane: int
    s: float
    speed: float
    desired_speed: float
    equipped: bool
    next_turn: int = STRAIGHT
    born_at: int = 0

    @property
    def lane_key(self) -> tuple[int, int, int, int]:
        return (self.axis, self.road, self.direction, self.lane)

    @property
    def heading(self) -> float:
        return float(_LANE_TO_HEADING[(self.axis, self.direction)])

    @property
    def u(self) -> float:
        """Longitudinal coordinate increasing in the direction of travel."""
        return self.s * self.direction

    def position(self, gmap: GridMap) -> tuple[float, float]:
        return gmap.to_xy(self.axis, self.road, self.direction, self.lane, self.s)


def turn_target(axis: int, direction: int, turn: int) -> tuple[int, int]:
    heading = _LANE_TO_HEADING[(axis, direction)]
    if turn == LEFT:
        heading = (heading + 90) % 360
    elif turn == RIGHT:
        heading = (heading - 90) % 360
    return _HEADING_TO_LANE[heading]


def next_crossing(gmap: GridMap, v: VehicleState) -> int | None:
    """Index of the next cross road strictly ahead of ``v``, or None."""
    u = v.u
    best = None
    for j, c in enumerate(gmap.centers):
        uc = c * v.direction
        if uc > u and (best is None or uc < gmap.centers[best] * v.direction):
            best = j
    return best


def expected_vehicle_count(gmap: GridMap, cfg: MobilityConfig) -> int:
    if cfg.density_basis == "road_km":
        km = gmap.road_length_km
    elif cfg.density_basis == "lane_km":
        km = gmap.lane_length_km
    else:
        raise MapConfigError(f"unknown density_basis {cfg.density_basis!r}")
    return int(round(cfg.density * km))


def _all_lanes(gmap: GridMap) -> list[tuple[int, int, int, int]]:
    return [
        (axis, road, d, k)
        for axis in (H, V)
        for road in range(gmap.grid_n)
        for d in (1, -1)
        for k in range(gmap.lanes_per_direction)
    ]


def spawn_plan(gmap: GridMap, cfg: MobilityConfig, rng_spawn, rng_equip, rng_mobility,
               first_id: int = 0) -> list[VehicleState]:
    """Initial population: ``density x road-km`` vehicles spread over all lanes.

    Each vehicle is equipped independently with probability ``penetration``.
    """
    if not cfg.density > 0:
        raise MapConfigError("density must be > 0")
    if not 0.0 <= cfg.penetration <= 1.0:
        raise MapConfigError("penetration must lie in [0, 1]")
    n = expected_vehicle_count(gmap, cfg)
    lanes = _all_lanes(gmap)
    clearance = cfg.vehicle_length_m + cfg.min_gap_m + max_speed(cfg) * cfg.step_s
    occupied: dict[tuple, list[float]] = {lk: [] for lk in lanes}
    out = []
    for i in range(n):
        for _ in range(10_000):
            lk = lanes[rng_spawn.randrange(len(lanes))]
            s = rng_spawn.uniform(0.0, gmap.extent_m)
            if all(abs(s - o) >= clearance for o in occupied[lk]):
                break
        else:
            raise MapConfigError("density too high to place vehicles without overlap")
        occupied[lk].append(s)
        axis, road, d, k = lk
        desired = draw_desired_speed(cfg, rng_mobility)
        v = VehicleState(
            id=first_id + i, axis=axis, road=road, direction=d, lane=k, s=s,
            speed=desired, desired_speed=desired,
            equipped=rng_equip.random() < cfg.penetration,
        )
        v.next_turn = rng_mobility.randrange(3)
        out.append(v)
    return out


def draw_desired_speed(cfg: MobilityConfig, rng) -> float:
    return cfg.desired_speed_mps * rng.uniform(1.0 - cfg.speed_spread, 1.0 + cfg.speed_spread)


def max_speed(cfg: MobilityConfig) -> float:
    return cfg.desired_speed_mps * (1.0 + cfg.speed_spread)


def step_vehicle(v: VehicleState, dt: float, gmap: GridMap, leader_u: float | None,
                 cfg: MobilityConfig) -> float:
    """Car-following update along the lane; returns the new longitudinal coordinate.

    ``leader_u`` is the leader's coordinate after its own update this step.
    Speed is ``min(desired, gap-limited)`` so that the bumper gap stays at
    least ``min_gap_m``. Turning and boundary handling live in :class:`Traffic`.
    """
    if not 0.0 < dt <= 0.2:
        raise ValueError("dt must lie in (0, 0.2] s")
    speed = v.desired_speed
    if leader_u is not None:
        room = leader_u - v.u - cfg.vehicle_length_m - cfg.min_gap_m
        speed = min(speed, max(0.0, room / dt))
    v.speed = speed
    return v.u + speed * dt


class Traffic:
    """All vehicles of one run, advanced in lock-step."""

    def __init__(self, gmap: GridMap, cfg: MobilityConfig, streams, vehicles=None,
                 static: bool = False) -> None:
        self.map = gmap
        self.cfg = cfg
        self.rng_mob = streams["mobility"]
        self.rng_spawn = streams["spawn"]
        self.rng_equip = streams["equip"]
        self.static = static
        if vehicles is None:
            vehicles = spawn_plan(gmap, cfg, self.rng_spawn, self.rng_equip, self.rng_mob)
        self.vehicles: list[VehicleState] = list(vehicles)
        self.next_id = max((v.id for v in self.vehicles), default=-1) + 1
        self.spawned = len(self.vehicles)
        self.pending_spawns = 0
        self.despawned: list[int] = []
        self.min_gap_seen = math.inf
        self._clearance = cfg.vehicle_length_m + cfg.min_gap_m + max_speed(cfg) * cfg.step_s

    def positions(self) -> np.ndarray:
        """``(slots, 2)`` array; empty slots (vehicle awaiting re-entry) are NaN."""
        nan = (math.nan, math.nan)
        return np.array(
            [nan if v is None else v.position(self.map) for v in self.vehicles], dtype=float
        ).reshape(-1, 2)

    def _lanes(self) -> dict[tuple, list[VehicleState]]:
        lanes: dict[tuple, list[VehicleState]] = {}
        for v in self.alive():
            lanes.setdefault(v.lane_key, []).append(v)
        for members in lanes.values():
            members.sort(key=lambda v: -v.u)  # front first
        return lanes

    def _lane_free(self, occupancy: dict, lane_key: tuple, s: float) -> bool:
        return all(abs(s - o) >= self._clearance for o in occupancy.get(lane_key, ()))

    def step(self, dt: float, now: int = 0) -> list[tuple[int, VehicleState]]:
        """Advance every vehicle by ``dt``.

        Returns ``(slot, new_vehicle)`` pairs for vehicles that replaced
        ones leaving the map during this step.
        """
        if self.static:
            return []
        gmap = self.map
        lanes = self._lanes()
        # old positions per lane, for insertion checks at turns and entries
        occupancy = {lk: [v.s for v in members] for lk, members in lanes.items()}
        leaving: list[VehicleState] = []
        for members in lanes.values():
            leader_u = None
            for v in members:
                u_new = step_vehicle(v, dt, gmap, leader_u, self.cfg)
                j = next_crossing(gmap, v)
                if j is not None and v.next_turn != STRAIGHT:
                    u_c = gmap.centers[j] * v.direction
                    if u_new >= u_c:
                        axis, d = turn_target(v.axis, v.direction, v.next_turn)
                        rem = u_new - u_c
                        s_new = gmap.centers[v.road] + d * rem
                        target = (axis, j, d, v.lane)
                        if self._lane_free(occupancy, target, s_new):
                            v.axis, v.road, v.direction = axis, j, d
                            v.s = s_new
                            occupancy.setdefault(target, []).append(s_new)
                            v.next_turn = self.rng_mob.randrange(3)
                            leader_u = u_new
                            continue
                        u_new = max(v.u, u_c - 1e-6)
                        v.speed = (u_new - v.u) / dt
                elif j is not None and u_new >= gmap.centers[j] * v.direction:
                    v.next_turn = self.rng_mob.randrange(3)
                v.s = u_new * v.direction
                leader_u = u_new
                if not 0.0 <= v.s <= gmap.extent_m:
                    leaving.append(v)

        self._record_gaps()
        gone = {id(v) for v in leaving}
        for slot, v in enumerate(self.vehicles):
            if v is not None and id(v) in gone:
                self.despawned.append(v.id)
                self.pending_spawns += 1
                self.vehicles[slot] = None  # type: ignore[call-overload]
        return self._refill(occupancy, now)

    def _refill(self, occupancy: dict, now: int) -> list[tuple[int, VehicleState]]:
        gmap = self.map
        entries = _all_lanes(gmap)
        born = []
        free_slots = [i for i, v in enumerate(self.vehicles) if v is None]
        for slot in free_slots:
            order = list(range(len(entries)))
            self.rng_spawn.shuffle(order)
            for idx in order:
                lk = entries[idx]
                s = 0.0 if lk[2] > 0 else gmap.extent_m
                if self._lane_free(occupancy, lk, s):
                    break
            else:
                continue
            occupancy.setdefault(lk, []).append(s)
            axis, road, d, k = lk
            desired = draw_desired_speed(self.cfg, self.rng_mob)
            v = VehicleState(
                id=self.next_id, axis=axis, road=road, direction=d, lane=k, s=s,
                speed=desired, desired_speed=desired,
                equipped=self.rng_equip.random() < self.cfg.penetration,
                next_turn=self.rng_mob.randrange(3), born_at=now,
            )
            self.next_id += 1
            self.spawned += 1
            self.pending_spawns -= 1
            self.vehicles[slot] = v
            born.append((slot, v))
        return born

    def _record_gaps(self) -> None:
        lanes: dict[tuple, list[float]] = {}
        for v in self.alive():
            if 0.0 <= v.s <= self.map.extent_m:
                lanes.setdefault(v.lane_key, []).append(v.u)
        L = self.cfg.vehicle_length_m
        for us in lanes.values():
            us.sort()
            for a, b in zip(us, us[1:]):
                gap = b - a - L
                if gap < self.min_gap_seen:
                    self.min_gap_seen = gap

    def alive(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v is not None]
