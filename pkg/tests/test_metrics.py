import numpy as np
import pytest

from cpsim.cps import Cpm, LemEntry, PerceivedObject
from cpsim.engine import ms
from cpsim.metrics import (
    NO_DATA, RunResult, aoi_stats, box_stats, ear, empirical_cdf, metric_csv, read_runs,
    record_aoi, summarize, write_run, write_summary,
)

from oracles import pooled_median

S = 1_000_000


def _line(n, spacing=10.0):
    pos = np.array([[i * spacing, 0.0] for i in range(n)])
    return pos, np.arange(n)


def test_ear_nine_of_ten():
    pos, ids = _line(11)
    sample = ear(0, pos, ids, sensed_ids=range(1, 10), lem={}, now=0, range_m=200, max_aoi_us=S)
    assert sample.in_range == 10 and sample.perceived == 9
    assert sample.ear == pytest.approx(0.9)


def test_ear_all_sensed_is_one():
    pos, ids = _line(5)
    assert ear(0, pos, ids, range(1, 5), {}, 0, 200, S).ear == 1.0


def test_ear_stale_lem_entry_not_perceived():
    pos, ids = _line(2)
    lem = {1: LemEntry(PerceivedObject(1, 10, 0, 0, 0, 0, 1))}
    assert ear(0, pos, ids, [], lem, int(1.2 * S), 200, S).perceived == 0
    assert ear(0, pos, ids, [], lem, S, 200, S).perceived == 1


def test_ear_empty_range_is_undefined():
    pos, ids = _line(2, spacing=500)
    assert ear(0, pos, ids, [], {}, 0, 200, S).ear is None


def test_aoi_subtraction():
    cpm = Cpm(1, (0, 0), ms(150), (PerceivedObject(7, 0, 0, 0, 0, ms(120), 0),))
    (s,) = record_aoi(3, cpm, ms(200))
    assert s.aoi == ms(80) and s.receiver == 3 and s.object_id == 7


def test_degenerate_ear_distribution():
    st = box_stats([1.0] * 50)
    assert st["median"] == 1.0 and st["q3"] - st["q1"] == 0.0


def test_aoi_median_order_statistic():
    assert aoi_stats([55.0, 80.0, 285.0])["p50_ms"] == 80.0


def test_empty_sets_report_no_data():
    assert box_stats([]) == NO_DATA and aoi_stats([]) == NO_DATA


def test_empirical_cdf_matches_sorted_samples():
    rng = np.random.default_rng(3)
    v = rng.exponential(50, 500)
    xs, ps = empirical_cdf(v)
    for q in (10.0, 50.0, 120.0):
        assert np.searchsorted(xs, q, side="right") / len(v) == pytest.approx(np.mean(v <= q))
    assert ps[-1] == 1.0 and np.all(np.diff(xs) >= 0)


def _result(seed, ear_rows, aoi_rows=(), mode="baseline", pen=0.1):
    cfg = {"cps": {"mode": mode}, "mobility": {"density": 30.0, "penetration": pen}}
    r = RunResult(cfg, seed, 15 * S, 15 * S, 0, ear=list(ear_rows))
    r.aoi = np.array(aoi_rows, dtype=np.int32).reshape(-1, 5)
    r.cbr = [(1, 100_000, 0.125)]
    r.potential = [(1, 100_000, 4, 4)]
    return r


def test_summary_pools_samples_across_seeds():
    rng = np.random.default_rng(5)
    runs = []
    for seed in range(10):
        n = int(rng.integers(3, 40))
        rows = [(1, i, int(rng.integers(0, 11)), 10) for i in range(n)]
        runs.append(_result(seed, rows))
    (g,) = summarize(runs)["groups"]
    assert g["ear"]["median"] == pytest.approx(pooled_median([[p / n for *_, p, n in r.ear] for r in runs]))
    assert g["seeds"] == list(range(10))
    assert g["ear"]["n"] == sum(len(r.ear) for r in runs)


def test_csv_round_trip(tmp_path):
    r = _result(3, [(1, 100_000, 3, 4), (2, 100_000, 0, 0)],
                [(1, 200_000, 7, 80_000, 0), (2, 210_000, 7, 90_000, 1)], mode="app-forwarding")
    write_run(r, tmp_path)
    (back,) = read_runs(tmp_path)
    assert back.ear == r.ear and back.cbr == r.cbr and back.potential == r.potential
    assert np.array_equal(back.aoi, r.aoi)
    assert metric_csv("aoi", [back]) == metric_csv("aoi", [r])
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "ear_app-forwarding_30_0.1_s3.csv" in names


def test_summary_files_mark_missing_metrics(tmp_path):
    r = _result(1, [])
    jpath, cpath = write_summary(summarize([r]), tmp_path)
    text = cpath.read_text()
    assert "ear,,no data" in text and "aoi,,no data" in text
    assert jpath.exists()


def test_summarize_rejects_nothing():
    with pytest.raises(ValueError):
        summarize([])
