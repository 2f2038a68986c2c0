import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpsim.cps import (
    Cpm, CpsConfig, CpsMode, LemEntry, PerceivedObject, Snapshot, StationCps, cps_cycle,
    generate_cpm, heading_difference, kinematic_change_trigger, lem_update, sense,
)
from cpsim.dcc import DccState
from cpsim.engine import ms
from cpsim.geometry import count_hits
from cpsim.mobility import MapConfig, build_map

from oracles import random_lem_case, reference_lem

S = 1_000_000


def obj(oid, t=0, hop=0, x=0.0, y=0.0, speed=10.0, heading=0.0):
    return PerceivedObject(oid, x, y, speed, heading, t, hop)


def as_tuples(lem):
    return {k: (e.object.x, e.object.y, e.object.speed, e.object.heading, e.object.measured_at,
                e.object.hop_count) for k, e in lem.items()}


# -- LEM update ------------------------------------------------------------------

def test_insert_when_absent_regardless_of_hop():
    lem = lem_update({}, [Cpm(1, (0, 0), 0, (obj(5, t=10, hop=3),))], max_hop=2)
    assert lem[5].object.hop_count == 3


def test_replace_when_newer_and_below_limit():
    lem = {5: LemEntry(obj(5, t=1 * S, hop=1))}
    lem_update(lem, [Cpm(1, (0, 0), 0, (obj(5, t=int(1.2 * S), hop=1),))], max_hop=2)
    assert lem[5].object.measured_at == int(1.2 * S)


def test_newer_at_hop_limit_does_not_replace():
    lem = {5: LemEntry(obj(5, t=1 * S, hop=1))}
    lem_update(lem, [Cpm(1, (0, 0), 0, (obj(5, t=int(1.2 * S), hop=2),))], max_hop=2)
    assert lem[5].object.measured_at == 1 * S


def test_freshest_mode_takes_newest():
    lem = {5: LemEntry(obj(5, t=1 * S, hop=1))}
    lem_update(lem, [Cpm(1, (0, 0), 0, (obj(5, t=2 * S, hop=2),))], max_hop=2, mode="freshest")
    assert lem[5].object.measured_at == 2 * S


def test_fifo_order_within_a_buffer():
    a = Cpm(1, (0, 0), 0, (obj(5, t=3, hop=1, x=1.0),))
    b = Cpm(2, (0, 0), 0, (obj(5, t=3, hop=1, x=2.0),))
    lem = lem_update({}, [a, b], max_hop=2)
    assert lem[5].object.x == 1.0  # equal timestamps: the first one stays


def test_lem_update_matches_reference_interpreter():
    rng = random.Random(1234)
    for _ in range(300):
        initial, cpms = random_lem_case(rng)
        lem = {k: LemEntry(PerceivedObject(k, *v)) for k, v in initial.items()}
        queue = [Cpm(0, (0, 0), 0, tuple(PerceivedObject(*o) for o in c)) for c in cpms]
        lem_update(lem, queue, max_hop=2)
        assert as_tuples(lem) == reference_lem(initial, cpms, 2)


# -- triggers -----------------------------------------------------------------------

def snap(x=0.0, y=0.0, speed=10.0, heading=0.0, t=0):
    return Snapshot(x, y, speed, heading, t)


def test_trigger_first_inclusion():
    assert kinematic_change_trigger(obj(1), None, 0)


def test_trigger_position():
    assert kinematic_change_trigger(obj(1, x=4.1), snap(), ms(100))
    assert not kinematic_change_trigger(obj(1, x=4.0), snap(), ms(100))


def test_trigger_all_below_threshold():
    o = obj(1, x=3.0, speed=11.0, heading=2.0)
    assert not kinematic_change_trigger(o, snap(), ms(500))


def test_trigger_speed_and_lapse():
    assert kinematic_change_trigger(obj(1, speed=14.5), snap(), ms(100))
    assert not kinematic_change_trigger(obj(1), snap(), S)
    assert kinematic_change_trigger(obj(1), snap(), S + 1)


def test_heading_is_circular():
    assert heading_difference(359.0, 2.0) == pytest.approx(3.0)
    assert not kinematic_change_trigger(obj(1, heading=2.0), snap(heading=359.0), ms(100))
    assert kinematic_change_trigger(obj(1, heading=4.5), snap(heading=0.0), ms(100))


# -- generation ------------------------------------------------------------------------

def _lem_two():
    return {1: LemEntry(obj(1, hop=0)), 2: LemEntry(obj(2, hop=1)), 3: LemEntry(obj(3, hop=2))}


def test_app_forwarding_carries_local_and_remote():
    cpm, _ = generate_cpm(9, (0, 0), _lem_two(), CpsMode.APP_FORWARDING, 2, 0, CpsConfig())
    assert sorted(o.object_id for o in cpm.objects) == [1, 2]


def test_baseline_carries_only_local():
    cpm, _ = generate_cpm(9, (0, 0), _lem_two(), CpsMode.BASELINE, 2, 0, CpsConfig())
    assert [o.object_id for o in cpm.objects] == [1]


def test_gbc_mode_carries_only_local():
    cpm, _ = generate_cpm(9, (0, 0), _lem_two(), CpsMode.GBC_FORWARDING, 2, 0, CpsConfig())
    assert [o.object_id for o in cpm.objects] == [1]


def test_cap_at_128_after_counting_potential():
    lem = {i: LemEntry(obj(i)) for i in range(150)}
    cpm, entries = generate_cpm(9, (0, 0), lem, CpsMode.BASELINE, 2, 0, CpsConfig())
    assert cpm.potential == 150
    assert len(cpm.objects) == 128 == len(entries)


def test_nothing_triggered_means_no_cpm():
    e = LemEntry(obj(1), last_included=snap())
    cpm, _ = generate_cpm(9, (0, 0), {1: e}, CpsMode.BASELINE, 2, ms(100), CpsConfig())
    assert cpm is None


# -- cycle -------------------------------------------------------------------------------

def test_denied_send_keeps_snapshots():
    st_ = StationCps(9)
    sent = []
    dcc = DccState(last_tx=0)  # 100 ms gap not yet met at 50 ms
    out = cps_cycle(st_, ms(50), CpsConfig(), [obj(1, t=ms(50))], dcc, sent.append, (0, 0))
    assert out is None and sent == []
    assert st_.lem[1].last_included is None
    assert st_.counters.denied == 1
    out = cps_cycle(st_, ms(100), CpsConfig(), [obj(1, t=ms(100))], dcc, sent.append, (0, 0))
    assert out is not None and st_.lem[1].last_included.time == ms(100)
    assert dcc.last_tx == ms(100)


def test_empty_cycle_sends_nothing():
    sent = []
    assert cps_cycle(StationCps(9), 0, CpsConfig(), [], DccState(), sent.append, (0, 0)) is None
    assert sent == []


def test_isolated_station_closed_form_schedule():
    """Two neighbours at 13.9 m/s and one parked: sends follow the 4 m and 1 s rules."""
    st_ = StationCps(9)
    dcc = DccState()
    sends = {}
    for k in range(35):
        now = ms(100) * k
        t = now / S
        sensed = [obj(1, now, x=13.9 * t), obj(2, now, y=13.9 * t, heading=90.0),
                  obj(3, now, x=50.0, speed=0.0)]
        cpm = cps_cycle(st_, now, CpsConfig(), sensed, dcc, lambda c: None, (0, 0))
        if cpm is not None:
            sends[k] = sorted(o.object_id for o in cpm.objects)
    # moving objects cover 4.17 m every third cycle; the parked one lapses after 1.1 s
    expected = {}
    for k in range(35):
        ids = ([1, 2] if k % 3 == 0 else []) + ([3] if k % 11 == 0 else [])
        if ids:
            expected[k] = sorted(ids)
    assert sends == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-1.5, 1.5), st.floats(-2, 2)),
                min_size=5, max_size=40))
def test_every_inclusion_had_a_trigger(steps):
    cfg = CpsConfig()
    st_ = StationCps(9)
    dcc = DccState()
    x = speed = heading = 0.0
    speed = 10.0
    last = None
    for k, (dx, dv, dh) in enumerate(steps):
        now = ms(100) * k
        x += dx
        speed = max(0.0, speed + dv)
        heading = (heading + dh) % 360.0
        o = obj(1, now, x=x, speed=speed, heading=heading)
        cpm = cps_cycle(st_, now, cfg, [o], dcc, lambda c: None, (0, 0))
        if cpm is not None:
            if last is not None:
                assert kinematic_change_trigger(o, last, now, cfg)
            last = Snapshot(o.x, o.y, o.speed, o.heading, now)


# -- sensing ---------------------------------------------------------------------------------

def _arrays(points):
    pos = np.array(points, dtype=float)
    n = len(points)
    return pos, np.arange(n), np.full(n, 10.0), np.zeros(n)


def test_sensor_radius():
    pos, ids, sp, hd = _arrays([(500, 500), (580, 500), (590, 500)])
    got = sense(0, pos, ids, sp, hd, np.zeros((0, 4)), 85.0, 7)
    assert [o.object_id for o in got] == [1]
    assert got[0].measured_at == 7 and got[0].hop_count == 0


def test_building_blocks_sensor():
    gmap = build_map(MapConfig())
    ego, target = (200.0, 243.0), (243.0, 225.0)
    assert count_hits(np.array(ego), np.array(target), gmap.building_array) == 1
    pos, ids, sp, hd = _arrays([ego, target])
    assert np.hypot(43, 18) < 85
    assert sense(0, pos, ids, sp, hd, gmap.building_array, 85.0, 0) == []


def test_sense_excludes_ego_and_empty_slots():
    pos, ids, sp, hd = _arrays([(500, 500), (510, 500)])
    pos = np.vstack([pos, [[np.nan, np.nan]]])
    ids = np.append(ids, -1)
    sp = np.append(sp, 0.0)
    hd = np.append(hd, 0.0)
    got = sense(0, pos, ids, sp, hd, np.zeros((0, 4)), 85.0, 0)
    assert [o.object_id for o in got] == [1]
