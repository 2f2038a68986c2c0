"""Scenario configuration: defaults, INI files, env and CLI overrides, validation.

Resolution order is built-in defaults, then the config file, then
``CPSIM_<SECTION>__<KEY>`` environment variables, then command-line
overrides. The resolved config is plain nested data and round-trips
through :func:`to_ini` / :func:`from_ini`.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import io
import math
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .cps import CpsConfig, CpsMode
from .dcc import DccConfig
from .geonet import GeonetConfig
from .metrics import MetricsConfig
from .mobility import MapConfig, MobilityConfig
from .radio import RadioConfig

ENV_PREFIX = "CPSIM_"


class ConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    duration_s: float = 15.0
    warmup_s: float = 0.0
    seed: int = 1


@dataclass
class ScenarioConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    map: MapConfig = field(default_factory=MapConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    geonet: GeonetConfig = field(default_factory=GeonetConfig)
    dcc: DccConfig = field(default_factory=DccConfig)
    cps: CpsConfig = field(default_factory=CpsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @property
    def seed(self) -> int:
        return self.engine.seed

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            out[f.name] = {
                sf.name: _plain(getattr(section, sf.name)) for sf in dataclasses.fields(section)
            }
        return out

    def replace(self, **overrides) -> "ScenarioConfig":
        """Copy with ``section__key=value`` or bare unique-key overrides applied."""
        data = self.to_dict()
        for k, v in overrides.items():
            section, key = _locate(k.replace("__", "."))
            data[section][key] = _plain(v)
        return from_dict(data)


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, tuple):
        return list(v)
    return v


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ScenarioConfig)}


def valid_keys() -> list[str]:
    return [
        f"{s}.{f.name}" for s, factory in SECTIONS.items() for f in dataclasses.fields(factory())
    ]


def _locate(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section in SECTIONS and name in {f.name for f in dataclasses.fields(SECTIONS[section]())}:
            return section, name
    else:
        hits = [k.split(".") for k in valid_keys() if k.split(".")[1] == key]
        if len(hits) == 1:
            return hits[0][0], hits[0][1]
    raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")


def _field_type(section: str, name: str):
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return hints[name]


def _coerce(section: str, name: str, raw):
    """Convert ``raw`` (string or python value) to the declared field type."""
    tp = _field_type(section, name)
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    optional = False
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        optional = True
        tp = next(a for a in args if a is not type(None))
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
    if isinstance(raw, str):
        text = raw.strip()
        if optional and text.lower() in ("", "none", "null"):
            return None
    else:
        if raw is None and optional:
            return None
        text = None
    try:
        if tp is bool:
            if text is None:
                return bool(raw)
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text) if text is not None else int(raw)
        if tp is float:
            return float(text) if text is not None else float(raw)
        if tp is str:
            return text if text is not None else str(raw)
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(text if text is not None else raw).value
        if origin is tuple:
            inner = args[0]
            items = [x for x in text.replace(",", " ").split()] if text is not None else list(raw)
            return [inner(x) for x in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{name}: cannot parse {raw!r} as {tp}") from exc
    raise ConfigError(f"{section}.{name}: unsupported field type {tp}")


def from_dict(data: dict) -> ScenarioConfig:
    sections = {}
    for section, factory in SECTIONS.items():
        values = dict(data.get(section, {}))
        default = factory()
        kwargs = {}
        for f in dataclasses.fields(default):
            if f.name in values:
                kwargs[f.name] = _coerce(section, f.name, values.pop(f.name))
        if values:
            bad = ", ".join(f"{section}.{k}" for k in values)
            raise ConfigError(f"unknown config key(s) {bad}; valid keys: {', '.join(valid_keys())}")
        for k, v in kwargs.items():
            if isinstance(v, list):
                kwargs[k] = tuple(v)
        sections[section] = dataclasses.replace(default, **kwargs)
    extra = set(data) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown config section(s) {sorted(extra)}; valid: {sorted(SECTIONS)}")
    cfg = ScenarioConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    for section, values in cfg.to_dict().items():
        for k, v in values.items():
            if isinstance(v, float):
                need(math.isfinite(v), f"{section}.{k} must be finite")
    e, m, mob = cfg.engine, cfg.map, cfg.mobility
    # timestamps are exported as 32-bit microsecond counts
    need(0 <= e.duration_s <= 2000, "engine.duration_s must lie in [0, 2000]")
    need(0 <= e.warmup_s <= max(e.duration_s, 0), "engine.warmup_s must lie in [0, duration_s]")
    need(m.grid_n >= 1, "map.grid_n must be >= 1")
    need(m.extent_m > 0, "map.extent_m must be > 0")
    need(mob.density > 0, "mobility.density must be > 0")
    need(0.0 <= mob.penetration <= 1.0, "mobility.penetration must lie in [0, 1]")
    need(mob.density_basis in ("road_km", "lane_km"), "mobility.density_basis must be road_km or lane_km")
    need(0.0 < mob.step_s <= 0.2, "mobility.step_s must lie in (0, 0.2]")
    need(0.0 <= mob.speed_spread < 1.0, "mobility.speed_spread must lie in [0, 1)")
    need(cfg.radio.bitrate_bps > 0, "radio.bitrate_bps must be > 0")
    need(cfg.radio.cw >= 1, "radio.cw must be >= 1")
    need(cfg.radio.queue_length >= 1, "radio.queue_length must be >= 1")
    need(cfg.radio.sense_threshold_dbm <= cfg.radio.decode_floor_dbm,
         "radio.sense_threshold_dbm must not exceed radio.decode_floor_dbm")
    need(cfg.geonet.gbc_algorithm in ("cbf", "flood"), "geonet.gbc_algorithm must be cbf or flood")
    need(cfg.geonet.gbc_lifetime_s > 0, "geonet.gbc_lifetime_s must be > 0")
    need(cfg.geonet.gbc_hop_limit >= 0, "geonet.gbc_hop_limit must be >= 0")
    d = cfg.dcc
    need(len(d.gaps_ms) == len(d.cbr_thresholds) + 1, "dcc.gaps_ms needs one more entry than dcc.cbr_thresholds")
    need(all(0.0 <= x <= 1.0 for x in d.cbr_thresholds), "dcc.cbr_thresholds must lie in [0, 1]")
    need(list(d.cbr_thresholds) == sorted(d.cbr_thresholds), "dcc.cbr_thresholds must be increasing")
    need(list(d.gaps_ms) == sorted(d.gaps_ms), "dcc.gaps_ms must be non-decreasing")
    need(d.cbr_window_ms > 0, "dcc.cbr_window_ms must be > 0")
    need(d.cbr_averaging in (1, 2), "dcc.cbr_averaging must be 1 or 2")
    c = cfg.cps
    need(c.max_hop >= 1, "cps.max_hop must be >= 1")
    need(c.period_ms > 0, "cps.period_ms must be > 0")
    need(c.sensor_radius_m > 0, "cps.sensor_radius_m must be > 0")
    need(1 <= c.max_objects, "cps.max_objects must be >= 1")
    need(c.lem_update_mode in ("literal", "freshest"), "cps.lem_update_mode must be literal or freshest")
    need(0 < cfg.metrics.log_region_m <= m.extent_m, "metrics.log_region_m must lie in (0, map.extent_m]")


def to_ini(cfg: ScenarioConfig) -> str:
    cp = configparser.ConfigParser()
    for section, values in cfg.to_dict().items():
        cp[section] = {
            k: ("none" if v is None else " ".join(str(x) for x in v) if isinstance(v, list) else repr(v)
                if isinstance(v, float) else str(v))
            for k, v in values.items()
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def from_ini(text: str, base: dict | None = None) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    data = base if base is not None else ScenarioConfig().to_dict()
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]; valid: {sorted(SECTIONS)}")
        for k, v in cp[section].items():
            _locate(f"{section}.{k}")
            data[section][k] = v
    return data


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX) and "__" in k:
            section, key = k[len(ENV_PREFIX):].lower().split("__", 1)
            out[f"{section}.{key}"] = v
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, object] | None = None,
                environ=None) -> ScenarioConfig:
    """Defaults <- file <- environment <- explicit overrides, then validate."""
    data = ScenarioConfig().to_dict()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        data = from_ini(p.read_text(), data)
    layered = dict(env_overrides(environ))
    layered.update(overrides or {})
    for k, v in layered.items():
        section, key = _locate(k)
        data[section][key] = v
    return from_dict(data)


def mode_of(cfg: ScenarioConfig) -> CpsMode:
    return CpsMode(cfg.cps.mode)
