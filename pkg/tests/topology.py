"""Hand-built static line topologies shared by the simulation and acceptance tests."""

from cpsim import ScenarioConfig
from cpsim.mobility import H, VehicleState
from cpsim.simulation import Simulation

# path-loss exponent 3 shrinks the decode range to about 101 m, so hops of 80 m
# link neighbours while stations two hops apart (160 m) cannot decode each other
LINE_RADIO = {"radio.pathloss_exponent": 3.0}
X, A, B, C, D = 0, 1, 2, 3, 4
LINE_S = {X: 300.0, A: 330.0, B: 410.0, C: 490.0, D: 570.0}


def line_vehicles(with_d: bool = True) -> list[VehicleState]:
    ids = [X, A, B, C] + ([D] if with_d else [])
    return [VehicleState(i, H, 1, 1, 0, LINE_S[i], 0.0, 0.0, equipped=(i != X)) for i in ids]


class LemProbe(Simulation):
    """Records, after every CPS cycle, the entry a station holds for one object."""

    def __init__(self, *args, watch: int, **kw) -> None:
        super().__init__(*args, **kw)
        self.watch = watch
        self.seen: dict[int, list[tuple[int, int, int]]] = {}

    def _cycle(self, st) -> None:
        super()._cycle(st)
        e = st.cps.lem.get(self.watch)
        if e is not None:
            self.seen.setdefault(st.vehicle_id, []).append(
                (self.q.now, e.object.measured_at, e.object.hop_count))


def run_line(mode: str, duration_s: float = 3.0, with_d: bool = True, seed: int = 1):
    cfg = ScenarioConfig().replace(**LINE_RADIO, **{"cps.mode": mode, "engine.duration_s": duration_s,
                                                    "engine.seed": seed})
    sim = LemProbe(cfg, vehicles=line_vehicles(with_d), static=True, trace=True, watch=X)
    res = sim.run()
    return sim, res
