import pytest

from cpsim.dcc import DccConfig, DccLevel, DccState, dcc_send_condition, dcc_update, next_allowed
from cpsim.engine import ms


@pytest.mark.parametrize("cbr,level,gap", [
    (0.10, DccLevel.RELAXED, 100),
    (0.2999, DccLevel.RELAXED, 100),
    (0.30, DccLevel.ACTIVE1, 200),
    (0.45, DccLevel.ACTIVE2, 400),
    (0.50, DccLevel.ACTIVE3, 500),
    (0.64, DccLevel.ACTIVE3, 500),
    (0.65, DccLevel.RESTRICTIVE, 1000),
    (0.70, DccLevel.RESTRICTIVE, 1000),
    (1.0, DccLevel.RESTRICTIVE, 1000),
])
def test_threshold_table(cbr, level, gap):
    st = dcc_update(DccState(), cbr)
    assert st.level == level
    assert st.min_gap == ms(gap)


def test_gaps_increase_with_level():
    cfg = DccConfig()
    gaps = [dcc_update(DccState(), c, cfg).min_gap for c in (0.0, 0.35, 0.45, 0.6, 0.9)]
    assert gaps == sorted(gaps)


def test_cbr_outside_unit_interval_rejected():
    with pytest.raises(ValueError):
        dcc_update(DccState(), 1.2)


def test_send_condition_exact_gap():
    st = DccState(last_tx=0)
    assert dcc_send_condition(st, ms(100))
    assert not dcc_send_condition(st, ms(99))
    assert dcc_send_condition(DccState(), 0)
    assert next_allowed(st) == ms(100)


def test_restrictive_allows_one_grant_per_second():
    st = dcc_update(DccState(), 0.9)
    grants = []
    for k in range(50):
        now = ms(100) * k
        if dcc_send_condition(st, now):
            st.last_tx = now
            grants.append(now)
    assert grants == [0, ms(1000), ms(2000), ms(3000), ms(4000)]


def test_two_sample_averaging():
    cfg = DccConfig(cbr_averaging=2)
    st = DccState()
    dcc_update(st, 0.2, cfg)
    assert st.level == DccLevel.RELAXED
    dcc_update(st, 0.5, cfg)  # mean 0.35
    assert st.level == DccLevel.ACTIVE1


def test_disabled_stays_relaxed():
    st = dcc_update(DccState(), 0.95, DccConfig(enabled=False))
    assert st.level == DccLevel.RELAXED and st.min_gap == ms(100)
