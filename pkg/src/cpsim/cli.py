"""Command-line entry point: single runs, sweeps, re-aggregation and map export."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, ScenarioConfig, from_dict, load_config, to_ini
from .engine import run as run_scenario
from .metrics import read_runs, summarize, write_run, write_summary
from .mobility import build_map

log = logging.getLogger("cpsim")

SHORTCUTS = {
    "mode": "cps.mode",
    "density": "mobility.density",
    "penetration": "mobility.penetration",
    "seed": "engine.seed",
    "duration": "engine.duration_s",
    "warmup": "engine.warmup_s",
}


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _overrides(args) -> dict[str, str]:
    out = _parse_set(args.set)
    for flag, key in SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def _resolve(args) -> ScenarioConfig:
    return load_config(args.config, _overrides(args))


def _add_config_args(p: argparse.ArgumentParser, shortcuts: bool = True) -> None:
    p.add_argument("--config", help="INI file with [section] key = value entries")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one key, e.g. --set radio.per_wall_loss_db=20 (repeatable)")
    if shortcuts:
        p.add_argument("--mode", choices=["baseline", "app-forwarding", "gbc-forwarding"])
        p.add_argument("--density", type=float, help="vehicles per km")
        p.add_argument("--penetration", type=float, help="equipped fraction in [0, 1]")
        p.add_argument("--seed", type=int)
        p.add_argument("--duration", type=float, help="seconds")
        p.add_argument("--warmup", type=float, help="seconds before metrics are logged")


def _parse_list(text: str, cast):
    return [cast(x) for x in text.replace(",", " ").split()]


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.replace(",", " ").split():
        if "-" in part:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        else:
            seeds.append(int(part))
    return seeds


# -- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _resolve(args)
    if args.dry_run:
        sys.stdout.write(to_ini(cfg))
        return 0
    out = Path(args.out)
    result = run_scenario(cfg)
    paths = write_run(result, out)
    (out / "resolved.ini").write_text(to_ini(cfg))
    write_summary(summarize([result]), out)
    log.info("wrote %d files to %s", len(paths) + 3, out)
    return 0


def _sweep_cell(config: dict, out: str) -> dict:
    """Worker: one run end to end. Never raises, so one failure cannot sink the sweep."""
    cfg = from_dict(config)
    entry = {"config": config, "seed": cfg.engine.seed, "files": [], "status": "ok"}
    try:
        result = run_scenario(cfg)
        entry["files"] = [p.name for p in write_run(result, Path(out))]
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        entry["status"] = "failed"
        entry["error"] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return entry


def sweep_configs(base: ScenarioConfig, modes, densities, penetrations, seeds) -> list[ScenarioConfig]:
    if not (modes and densities and penetrations and seeds):
        raise ConfigError("every sweep axis needs at least one value")
    return [
        base.replace(**{"cps.mode": m, "mobility.density": d, "mobility.penetration": p,
                        "engine.seed": s})
        for m, d, p, s in itertools.product(modes, densities, penetrations, seeds)
    ]


def cmd_sweep(args) -> int:
    base = _resolve(args)
    modes = _parse_list(args.modes, str) if args.modes else [base.cps.mode.value]
    dens = _parse_list(args.densities, float) if args.densities else [base.mobility.density]
    pens = _parse_list(args.penetrations, float) if args.penetrations else [base.mobility.penetration]
    seeds = _parse_seeds(args.seeds) if args.seeds else [base.engine.seed]
    cells = sweep_configs(base, modes, dens, pens, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("sweep: %d runs with %d worker(s)", len(cells), args.jobs)
    configs = [c.to_dict() for c in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_sweep_cell, configs, itertools.repeat(str(out))))
    else:
        entries = [_sweep_cell(c, str(out)) for c in configs]
    manifest = {"runs": entries,
                "axes": {"modes": modes, "densities": dens, "penetrations": pens, "seeds": seeds}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    done = read_runs(out)
    if done:
        write_summary(summarize(done), out)
    failed = [e for e in entries if e["status"] != "ok"]
    for e in failed:
        log.error("run failed (seed %s): %s", e["seed"], e["error"])
    return 1 if failed else 0


def cmd_summarize(args) -> int:
    runs = read_runs(Path(args.directory))
    if not runs:
        log.error("no runs found in %s", args.directory)
        return 1
    write_summary(summarize(runs), Path(args.out or args.directory))
    return 0


def cmd_map_dump(args) -> int:
    cfg = _resolve(args)
    text = json.dumps(build_map(cfg.map).to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one scenario")
    _add_config_args(r)
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="cross product of modes x densities x penetrations x seeds")
    _add_config_args(s, shortcuts=False)
    s.add_argument("--modes", help="comma separated, e.g. baseline,app-forwarding")
    s.add_argument("--densities", help="comma separated veh/km")
    s.add_argument("--penetrations", help="comma separated fractions")
    s.add_argument("--seeds", help="list or ranges, e.g. 1-10 or 1,2,5")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default="sweep")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("summarize", help="re-aggregate the CSVs of a run or sweep directory")
    m.add_argument("directory")
    m.add_argument("--out", help="where to write summary.json/csv (default: the directory)")
    m.set_defaults(func=cmd_summarize)

    d = sub.add_parser("map-dump", help="write the road/building geometry as JSON")
    _add_config_args(d, shortcuts=False)
    d.add_argument("--out", help="file (default: stdout)")
    d.set_defaults(func=cmd_map_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
