import pytest

from cpsim.cps import Cpm
from cpsim.engine import EventQueue, RngStream, ms, seconds
from cpsim.geonet import (
    GBC, SHB, DuplicateTable, GeonetConfig, GeoRouter, cbf_delay, expire_duplicates, gn_send,
    retransmission,
)

CFG = GeonetConfig()
PAYLOAD = Cpm(7, (0.0, 0.0), 0, ())


def router(q, cfg=CFG, dmax=1000.0):
    sent = []
    r = GeoRouter(1, q, cfg, dmax, RngStream(1, "cbf-jitter"),
                  lambda pkt: sent.append((q.now, pkt)))
    return r, sent


def test_shb_fields():
    pkt = gn_send(7, 1, SHB, PAYLOAD, (10, 20), 0, CFG)
    assert pkt.remaining_hops == 0 and pkt.target_center is None


def test_gbc_fields():
    pkt = gn_send(7, 1, GBC, PAYLOAD, (10, 20), 5, CFG)
    assert pkt.target_radius_m == 200
    assert pkt.lifetime == seconds(1)
    assert pkt.remaining_hops == 2
    assert pkt.target_center == (10.0, 20.0)
    assert pkt.origin_time == 5


def test_retransmission_decrements_once_and_keeps_area():
    pkt = gn_send(7, 1, GBC, PAYLOAD, (10, 20), 0, CFG)
    out = retransmission(pkt, (50, 20))
    assert out.remaining_hops == 1 and out.depth == 1
    assert out.target_center == pkt.target_center
    assert out.sender_position == (50.0, 20.0)
    assert out.key == pkt.key


def test_cbf_timer_formula():
    tmax = ms(100)
    assert cbf_delay(1000.0, tmax, 1000.0) == 0
    assert cbf_delay(2000.0, tmax, 1000.0) == 0
    assert cbf_delay(0.0, tmax, 1000.0) == tmax
    assert cbf_delay(250.0, tmax, 1000.0) == ms(75)


def test_shb_never_forwarded():
    q = EventQueue()
    r, sent = router(q)
    assert r.receive(gn_send(7, 1, SHB, PAYLOAD, (0, 0), 0, CFG), (10, 0))
    q.run_until(seconds(2))
    assert sent == [] and not r.timers


def test_gbc_inside_area_forwards_after_contention():
    q = EventQueue()
    r, sent = router(q, dmax=1000.0)
    pkt = gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, CFG)
    assert r.receive(pkt, (100, 0))
    q.run_until(seconds(1))
    assert len(sent) == 1
    # 100 m of 1000 m: 90 ms contention plus < 1 ms jitter
    fired, _ = sent[0]
    assert ms(90) <= fired < ms(91)
    assert r.counters["forwarded"] == 1


def test_duplicate_cancels_timer():
    q = EventQueue()
    r, sent = router(q)
    pkt = gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, CFG)
    assert r.receive(pkt, (100, 0))
    q.run_until(ms(10))
    assert not r.receive(retransmission(pkt, (150, 0)), (100, 0))
    q.run_until(seconds(2))
    assert sent == []
    assert r.counters["cancelled"] == 1 and r.counters["duplicates"] == 1


def test_outside_area_delivered_not_forwarded():
    q = EventQueue()
    r, sent = router(q)
    assert r.receive(gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, CFG), (250, 0))
    q.run_until(seconds(2))
    assert sent == []


def test_no_forward_after_hop_limit_or_lifetime():
    q = EventQueue()
    r, sent = router(q)
    pkt = retransmission(retransmission(gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, CFG), (1, 0)), (2, 0))
    assert pkt.remaining_hops == 0
    assert r.receive(pkt, (100, 0))
    late = gn_send(7, 2, GBC, PAYLOAD, (0, 0), 0, CFG)
    q.run_until(seconds(1) + 1)
    assert r.receive(late, (100, 0))
    q.run_until(seconds(3))
    assert sent == []


def test_malformed_zero_lifetime_dropped():
    q = EventQueue()
    r, _ = router(q)
    bad = gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, GeonetConfig(gbc_lifetime_s=1.0))
    from dataclasses import replace
    assert not r.receive(replace(bad, lifetime=0), (10, 0))
    assert r.counters["malformed"] == 1


def test_flood_forwards_within_jitter():
    q = EventQueue()
    r, sent = router(q, cfg=GeonetConfig(gbc_algorithm="flood"))
    r.receive(gn_send(7, 1, GBC, PAYLOAD, (0, 0), 0, CFG), (100, 0))
    q.run_until(ms(1) + 1)
    assert len(sent) == 1 and sent[0][0] < ms(1)


def test_duplicate_table_expiry():
    t = DuplicateTable()
    t.add((1, 1), 0, seconds(1))
    expire_duplicates(t, seconds(0.9))
    assert (1, 1) in t
    expire_duplicates(t, seconds(1.1))
    assert (1, 1) not in t


def test_duplicate_table_mixed_lifetimes():
    t = DuplicateTable()
    t.add((1, 1), 0, seconds(2))
    t.add((1, 2), 0, seconds(1))
    t.expire(seconds(1.5))
    assert (1, 1) in t and (1, 2) not in t
    assert t.peak == 2
