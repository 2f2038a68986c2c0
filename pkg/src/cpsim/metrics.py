"""Evaluation metrics (EAR, AOI, CBR, potential objects per CPM) and their export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

NO_DATA = "no data"


@dataclass
class MetricsConfig:
    range_of_interest_m: float = 200.0
    max_aoi_s: float = 1.0
    log_region_m: float = 900.0
    ear_period_ms: int = 100


@dataclass(frozen=True)
class EarSample:
    station: int
    at: int
    perceived: int
    in_range: int

    @property
    def ear(self) -> float | None:
        return self.perceived / self.in_range if self.in_range > 0 else None


@dataclass(frozen=True)
class AoiSample:
    receiver: int
    object_id: int
    aoi: int
    hop_count: int
    at: int = 0


def ear(ego_index: int, positions: np.ndarray, ids, sensed_ids, lem, now: int,
        range_m: float, max_aoi_us: int, station_id: int | None = None,
        distances: np.ndarray | None = None) -> EarSample:
    """Share of vehicles within ``range_m`` that are sensed now or known with AOI <= max."""
    if distances is None:
        ego = positions[ego_index]
        distances = np.hypot(positions[:, 0] - ego[0], positions[:, 1] - ego[1])
    with np.errstate(invalid="ignore"):
        mask = distances <= range_m
    mask[ego_index] = False
    in_range = [int(ids[i]) for i in np.flatnonzero(mask).tolist()]
    sensed = set(sensed_ids)
    perceived = 0
    for oid in in_range:
        if oid in sensed:
            perceived += 1
            continue
        entry = lem.get(oid)
        if entry is not None and now - entry.object.measured_at <= max_aoi_us:
            perceived += 1
    sid = int(ids[ego_index]) if station_id is None else station_id
    return EarSample(sid, now, perceived, len(in_range))


def record_aoi(receiver: int, cpm, received_at: int) -> list[AoiSample]:
    """One sample per object of a CPM delivered to ``receiver``."""
    return [
        AoiSample(receiver, o.object_id, received_at - o.measured_at, o.hop_count, received_at)
        for o in cpm.objects
    ]


@dataclass
class RunResult:
    """Everything one run exports. Plain data only, safe to pickle across processes."""

    config: dict
    seed: int
    duration_us: int
    final_clock: int
    events_dispatched: int
    ear: list[tuple[int, int, int, int]] = field(default_factory=list)
    # int32 columns (receiver, t, object_id, aoi_us, hop_count), one row per delivered object
    aoi: np.ndarray = field(default_factory=lambda: np.zeros((0, 5), dtype=np.int32))
    cbr: list[tuple[int, int, float]] = field(default_factory=list)
    potential: list[tuple[int, int, int, int]] = field(default_factory=list)
    counters: dict[str, Any] = field(default_factory=dict)
    node_counters: list[tuple] = field(default_factory=list)
    # (station, t, min_gap_us, dcc_level, kind) for every DCC grant, all stations
    grants: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    # (station, t, cbr, dcc_level) for every DCC sample, all stations
    dcc: list[tuple[int, int, float, int]] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, float, float]:
        return (
            self.config["cps"]["mode"],
            float(self.config["mobility"]["density"]),
            float(self.config["mobility"]["penetration"]),
        )

    def ear_values(self) -> np.ndarray:
        return np.array([p / n for _, _, p, n in self.ear if n > 0], dtype=float)

    def aoi_ms(self) -> np.ndarray:
        return self.aoi[:, 3].astype(float) / 1000.0

    def cbr_values(self) -> np.ndarray:
        return np.array([c for *_, c in self.cbr], dtype=float)

    def potential_values(self) -> np.ndarray:
        return np.array([p for _, _, p, _n in self.potential], dtype=float)


# -- statistics -------------------------------------------------------------

def _array(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.astype(float, copy=False)
    return np.asarray(list(values), dtype=float)


def box_stats(values: Iterable[float]) -> dict | str:
    v = np.sort(_array(values))
    if v.size == 0:
        return NO_DATA
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {
        "n": int(v.size), "mean": float(v.mean()), "q1": float(q1), "median": float(med),
        "q3": float(q3), "whisker_low": float(lo), "whisker_high": float(hi),
        "min": float(v[0]), "max": float(v[-1]),
    }


def aoi_stats(aoi_ms: Iterable[float]) -> dict | str:
    v = _array(aoi_ms)
    if v.size == 0:
        return NO_DATA
    p50, p85, p99 = np.percentile(v, [50, 85, 99])
    return {
        "n": int(v.size), "p50_ms": float(p50), "p85_ms": float(p85), "p99_ms": float(p99),
        "share_under_200ms": float(np.mean(v < 200.0)), "mean_ms": float(v.mean()),
    }


def cbr_stats(values: Iterable[float]) -> dict | str:
    v = _array(values)
    if v.size == 0:
        return NO_DATA
    p50, p90, p99 = np.percentile(v, [50, 90, 99])
    return {"n": int(v.size), "mean": float(v.mean()), "p50": float(p50), "p90": float(p90),
            "p99": float(p99)}


def empirical_cdf(values: Iterable[float]) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(_array(values))
    return v, np.arange(1, v.size + 1) / max(v.size, 1)


def summarize(results: list[RunResult]) -> dict:
    """Pool samples of every run sharing (mode, density, penetration)."""
    if not results:
        raise ValueError("summarize needs at least one run")
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault(r.key, []).append(r)
    rows = []
    for (mode, density, pen), runs in sorted(groups.items()):
        rows.append({
            "mode": mode,
            "density": density,
            "penetration": pen,
            "seeds": sorted(r.seed for r in runs),
            "ear": box_stats(np.concatenate([r.ear_values() for r in runs])),
            "aoi": aoi_stats(np.concatenate([r.aoi_ms() for r in runs])),
            "cbr": cbr_stats(np.concatenate([r.cbr_values() for r in runs])),
            "potential_objects": box_stats(np.concatenate([r.potential_values() for r in runs])),
        })
    return {"groups": rows}


# -- export -----------------------------------------------------------------

METRIC_COLUMNS = {
    "ear": ("station", "t_us", "perceived", "in_range", "ear"),
    "aoi": ("station", "t_us", "object_id", "aoi_us", "hop_count"),
    "cbr": ("station", "t_us", "cbr"),
    "potential": ("station", "t_us", "potential_objects", "sent_objects"),
}


def _fmt_pen(p: float) -> str:
    return f"{p:g}"


def file_stem(metric: str, result: RunResult) -> str:
    mode, density, pen = result.key
    return f"{metric}_{mode}_{density:g}_{_fmt_pen(pen)}"


def _rows(metric: str, r: RunResult):
    if metric == "ear":
        for s, t, p, n in r.ear:
            yield (s, t, p, n, f"{p / n:.6f}" if n else "")
    elif metric == "aoi":
        yield from r.aoi.tolist()
    elif metric == "cbr":
        for s, t, c in r.cbr:
            yield (s, t, repr(c))
    elif metric == "potential":
        yield from r.potential


def metric_csv(metric: str, results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("mode", "density", "penetration", "seed") + METRIC_COLUMNS[metric])
    for r in results:
        mode, density, pen = r.key
        prefix = (mode, f"{density:g}", _fmt_pen(pen), r.seed)
        for row in _rows(metric, r):
            w.writerow(prefix + tuple(row))
    return buf.getvalue()


def write_run(result: RunResult, out_dir: Path) -> list[Path]:
    """Write one CSV per metric, named ``<metric>_<mode>_<density>_<pen>[_s<seed>].csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in METRIC_COLUMNS:
        p = out_dir / f"{file_stem(metric, result)}_s{result.seed}.csv"
        p.write_text(metric_csv(metric, [result]))
        paths.append(p)
    meta = out_dir / f"run_{result.key[0]}_{result.key[1]:g}_{_fmt_pen(result.key[2])}_s{result.seed}.json"
    meta.write_text(json.dumps({
        "config": result.config, "seed": result.seed, "duration_us": result.duration_us,
        "final_clock": result.final_clock, "events_dispatched": result.events_dispatched,
        "counters": result.counters, "node_counters": result.node_counters,
    }, indent=2, sort_keys=True))
    paths.append(meta)
    return paths


def read_runs(directory: Path) -> list[RunResult]:
    """Rebuild RunResults from a directory written by :func:`write_run`."""
    directory = Path(directory)
    out = []
    for meta in sorted(directory.glob("run_*.json")):
        info = json.loads(meta.read_text())
        r = RunResult(info["config"], info["seed"], info["duration_us"], info["final_clock"],
                      info["events_dispatched"], counters=info.get("counters", {}))
        suffix = meta.stem[len("run_"):]
        aoi_rows: list[tuple] = []
        for metric in METRIC_COLUMNS:
            path = directory / f"{metric}_{suffix}.csv"
            if not path.exists():
                continue
            with path.open() as fh:
                rd = csv.DictReader(fh)
                for row in rd:
                    if metric == "ear":
                        r.ear.append((int(row["station"]), int(row["t_us"]), int(row["perceived"]),
                                      int(row["in_range"])))
                    elif metric == "aoi":
                        aoi_rows.append((int(row["station"]), int(row["t_us"]), int(row["object_id"]),
                                         int(row["aoi_us"]), int(row["hop_count"])))
                    elif metric == "cbr":
                        r.cbr.append((int(row["station"]), int(row["t_us"]), float(row["cbr"])))
                    else:
                        r.potential.append((int(row["station"]), int(row["t_us"]),
                                            int(row["potential_objects"]), int(row["sent_objects"])))
        r.aoi = np.array(aoi_rows, dtype=np.int32).reshape(-1, 5)
        out.append(r)
    return out


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_summary(summary: dict, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "summary.json"
    jpath.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    cpath = out_dir / "summary.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("mode", "density", "penetration", "metric", "statistic", "value"))
    for g in summary["groups"]:
        for metric in ("ear", "aoi", "cbr", "potential_objects"):
            stats = g[metric]
            if stats == NO_DATA:
                w.writerow((g["mode"], f"{g['density']:g}", _fmt_pen(g["penetration"]), metric, "", NO_DATA))
                continue
            for k, v in stats.items():
                w.writerow((g["mode"], f"{g['density']:g}", _fmt_pen(g["penetration"]), metric, k, v))
    cpath.write_text(buf.getvalue())
    return jpath, cpath
