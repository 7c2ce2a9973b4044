"""Command-line interface: ``mikado <subcommand> [options]``.

Option values resolve as command-line flag, then the ``--config`` TOML file
(``[common]`` and ``[<subcommand>]`` tables, keys named like the long flags
with dashes as underscores), then built-in defaults. The geometry and
schedule paths also fall back to the ``TRK_GEOMETRY`` and ``TRK_SCHEDULE``
environment variables before the defaults. The resolved options are printed
to stderr as one JSON line.

Exit codes: 0 success, 1 invalid input or configuration, 2 unreadable or
unwritable files.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import tomli

from .bench import bench
from .errors import IngestionError, ValidationError
from .evaluation import (VARIABLES, binned_efficiency, delta_r_efficiency, particle_efficiency,
                         score_events, write_tables)
from .event_model import (Event, list_event_ids, load_event, read_solution, solution_path, write_event,
                          write_solution)
from .finder import run
from .geometry import Detector, default_detector, detector_from_config, load_fields, load_geometry
from .schedule import Schedule, load_default_schedule, load_schedule, write_schedule
from .synth import GenConfig, generate_event
from .tuner import DEFAULT_PARAMS, tune_pass

DEFAULTS = {
    "geometry": None,
    "field": None,
    "schedule": None,
    "workers": 2,
    "events": 1,
    "first_id": 1,
    "tracks": 100,
    "seed": 0,
    "noise_fraction": 0.05,
    "hole_prob": 0.02,
    "duplicate_prob": 0.1,
    "secondary_fraction": 0.05,
    "noiseless": False,
    "bz": 2.0,
    "time": None,
    "timings": None,
    "double_majority": False,
    "min_hits": 3,
    "bins": [],
    "repetitions": 1,
    "warmup": 1,
    "pass_index": 0,
    "params": list(DEFAULT_PARAMS),
    "weights": [1.0, 1.0],
    "max_iters": 50,
}
ENV_FALLBACK = {"geometry": "TRK_GEOMETRY", "schedule": "TRK_SCHEDULE"}
DEFAULT_BINS = {
    "log10_pt": (-1.0, 1.0, 8),
    "phi": (-3.141592653589793, 3.141592653589793, 8),
    "eta": (-3.0, 3.0, 12),
    "r0": (0.0, 1.0, 1),
    "z0": (-200.0, 200.0, 8),
}
DELTA_R_BINS = (0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 3.5)


def _common(p: argparse.ArgumentParser, finder: bool = False) -> None:
    p.add_argument("--config", help="TOML file with option defaults")
    p.add_argument("--geometry", help="detector file: geometry CSV or layout TOML (default: built-in layout)")
    p.add_argument("--field", help="per-layer field polynomial CSV, Bz in tesla")
    if finder:
        p.add_argument("--schedule", help="pass schedule TOML (default: shipped schedule)")
        p.add_argument("--workers", type=int, help="finder worker threads (default 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mikado", description="Multi-pass combinatorial track finding.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic events to a directory")
    _common(g)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--events", type=int, help="number of events (default 1)")
    g.add_argument("--first-id", type=int, help="id of the first event (default 1)")
    g.add_argument("--tracks", type=int, help="primary particles per event (default 100)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--noise-fraction", type=float, help="noise hits per signal hit (default 0.05)")
    g.add_argument("--hole-prob", type=float, help="probability a layer crossing leaves no hit (default 0.02)")
    g.add_argument("--duplicate-prob", type=float, help="probability a crossing leaves two hits (default 0.1)")
    g.add_argument("--secondary-fraction", type=float, help="secondaries per primary (default 0.05)")
    g.add_argument("--bz", type=float, help="solenoid field in tesla (default 2.0)")
    g.add_argument("--noiseless", action="store_true", default=None, help="no smear, noise or holes")

    r = sub.add_parser("reconstruct", help="run the finder on every event of a directory")
    _common(r, finder=True)
    r.add_argument("--in", dest="input", required=True, help="event directory")
    r.add_argument("--out", required=True, help="solution directory (also receives timings.json, seconds)")

    s = sub.add_parser("score", help="accuracy and throughput score as JSON")
    s.add_argument("--config", help="TOML file with option defaults")
    s.add_argument("--in", dest="input", required=True, help="event directory (with truth)")
    s.add_argument("--solutions", required=True, help="solution directory")
    s.add_argument("--time", type=float, help="override: mean seconds per event")
    s.add_argument("--timings", help="timings JSON (default: <solutions>/timings.json if present)")
    s.add_argument("--double-majority", action="store_true", default=None,
                   help="also require the track to hold more than half of the particle's weight")
    s.add_argument("--out", help="write the JSON here instead of stdout")

    a = sub.add_parser("analyze", help="efficiency tables and per-event accuracy as CSV")
    a.add_argument("--config", help="TOML file with option defaults")
    a.add_argument("--in", dest="input", required=True, help="event directory (with truth)")
    a.add_argument("--solutions", required=True, help="solution directory")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--bins", action="append",
                   help=f"VAR=LOW:HIGH:N, VAR in {', '.join(VARIABLES)} (pt in log10 GeV, lengths in mm, "
                        "angles in rad); repeatable")
    a.add_argument("--min-hits", type=int, help="hits a primary needs to be counted (default 3)")

    b = sub.add_parser("bench", help="timed in-memory finder loop, JSON report")
    _common(b, finder=True)
    b.add_argument("--in", dest="input", required=True, help="event directory (with truth)")
    b.add_argument("--repetitions", type=int, help="timed passes over all events (default 1)")
    b.add_argument("--warmup", type=int, help="untimed passes before timing (default 1)")
    b.add_argument("--out", help="write the JSON here instead of stdout")

    t = sub.add_parser("tune", help="hill-climb one pass of a schedule on training events")
    _common(t, finder=True)
    t.add_argument("--in", dest="input", required=True, help="training event directory (with truth)")
    t.add_argument("--out", required=True, help="tuned schedule TOML")
    t.add_argument("--pass-index", type=int, help="pass to tune, 0-based (default 0)")
    t.add_argument("--params", nargs="+", help="parameter paths, e.g. window_l3.0 z_residual_cut")
    t.add_argument("--weights", type=float, nargs=2, help="criterion weights w_matched w_wrong_hits (default 1 1)")
    t.add_argument("--max-iters", type=int, help="iteration cap (default 50)")
    return parser


# ------------------------------------------------------------ resolution

def _load_config(path) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise IngestionError(p, f"cannot open: {exc.strerror or exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise IngestionError(p, str(exc)) from None


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags, config file, environment and defaults."""
    cfg = _load_config(getattr(args, "config", None))
    file_opts = {**cfg.get("common", {}), **cfg.get(args.command, {})}
    out = {}
    for name, value in vars(args).items():
        if name in ("config", "command"):
            continue
        if value is None:
            if name in file_opts:
                value = file_opts[name]
            elif name in ENV_FALLBACK and os.environ.get(ENV_FALLBACK[name]):
                value = os.environ[ENV_FALLBACK[name]]
            else:
                value = DEFAULTS.get(name)
        out[name] = value
    if out.get("workers") is not None and out["workers"] < 1:
        raise ValidationError("--workers must be >= 1")
    return out


def _detector(opts) -> Detector:
    geo = opts.get("geometry")
    bz = opts.get("bz") or 2.0
    if geo is None:
        det = default_detector(bz=bz)
    elif str(geo).endswith(".toml"):
        det = detector_from_config(geo)
    else:
        det = load_geometry(geo, bz=bz)
    if opts.get("field"):
        det = det.with_fields(load_fields(opts["field"]))
    return det


def _schedule(opts) -> Schedule:
    return load_schedule(opts["schedule"]) if opts.get("schedule") else load_default_schedule()


def _events(directory, with_truth=True) -> list[Event]:
    ids = list_event_ids(directory)
    if not ids:
        raise IngestionError(directory, "no event files found")
    return [load_event(directory, i, with_truth=with_truth) for i in ids]


def _solutions(directory, events):
    return {ev.event_id: read_solution(solution_path(directory, ev.event_id), ev.event_id) for ev in events}


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _parse_bins(specs) -> dict[str, tuple[float, ...]]:
    chosen = dict(DEFAULT_BINS)
    for spec in specs or []:
        try:
            var, rng = spec.split("=", 1)
            lo, hi, n = rng.split(":")
            chosen[var.strip()] = (float(lo), float(hi), int(n))
        except ValueError:
            raise ValidationError(f"bad --bins spec {spec!r}; expected VAR=LOW:HIGH:N") from None
    out = {}
    for var, (lo, hi, n) in chosen.items():
        if var not in VARIABLES:
            raise ValidationError(f"unknown variable {var!r}")
        if n < 1 or not hi > lo:
            raise ValidationError(f"bins for {var}: need HIGH > LOW and N >= 1")
        out[var] = tuple(lo + (hi - lo) * i / n for i in range(n + 1))
    return out


# ------------------------------------------------------------ subcommands

def cmd_generate(o) -> int:
    det = _detector(o)
    cfg = GenConfig(n_primaries=o["tracks"], rng_seed=o["seed"], noise_fraction=o["noise_fraction"],
                    hole_prob=o["hole_prob"], duplicate_prob=o["duplicate_prob"],
                    secondary_fraction=o["secondary_fraction"], bz=o["bz"])
    if o["noiseless"]:
        cfg = cfg.noiseless()
    for eid in range(o["first_id"], o["first_id"] + o["events"]):
        write_event(generate_event(cfg, eid, det), o["out"])
    return 0


def cmd_reconstruct(o) -> int:
    det, sched = _detector(o), _schedule(o)
    events = _events(o["input"], with_truth=False)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    for ev in events:
        t0 = time.perf_counter()
        sol = run(ev, det, sched, workers=o["workers"])
        timings[str(ev.event_id)] = time.perf_counter() - t0
        write_solution(sol, solution_path(out, ev.event_id))
    mean = sum(timings.values()) / len(timings)
    _emit({"per_event": timings, "mean": mean}, out / "timings.json")
    return 0


def cmd_score(o) -> int:
    events = _events(o["input"])
    sols = _solutions(o["solutions"], events)
    t = o["time"]
    if t is None:
        tpath = Path(o["timings"]) if o["timings"] else Path(o["solutions"]) / "timings.json"
        if tpath.exists():
            try:
                t = float(json.loads(tpath.read_text(encoding="utf-8"))["mean"])
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestionError(tpath, f"bad timings file: {exc}") from None
    report = score_events(events, sols, t, bool(o["double_majority"]))
    _emit(report.to_dict(), o["out"])
    return 0


def cmd_analyze(o) -> int:
    events = _events(o["input"])
    sols = _solutions(o["solutions"], events)
    ordered = [sols[ev.event_id] for ev in events]
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    bins = _parse_bins(o["bins"])
    tables = [binned_efficiency(events, ordered, var, edges, charge_split=True, min_hits=o["min_hits"])
              for var, edges in bins.items()]
    write_tables(tables, out / "efficiency.csv")
    if all(sum(not p.is_secondary for p in ev.particles) >= 2 for ev in events):
        write_tables([delta_r_efficiency(events, ordered, DELTA_R_BINS, o["min_hits"])], out / "delta_r.csv")
    report = score_events(events, sols)
    with open(out / "accuracy.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("event_id,accuracy,efficiency\n")
        for ev in events:
            eff, _ = particle_efficiency(ev, sols[ev.event_id], o["min_hits"])
            fh.write(f"{ev.event_id},{report.per_event[ev.event_id]!r},{eff!r}\n")
    return 0


def cmd_bench(o) -> int:
    det, sched = _detector(o), _schedule(o)
    events = _events(o["input"])
    workers = o["workers"]
    report = bench(events, lambda ev: run(ev, det, sched, workers=workers), o["repetitions"], o["warmup"])
    _emit(report.to_dict(), o["out"])
    return 0 if report.valid else 1


def cmd_tune(o) -> int:
    det, sched = _detector(o), _schedule(o)
    i = o["pass_index"]
    if not 0 <= i < len(sched):
        raise ValidationError(f"--pass-index {i} out of range for a {len(sched)}-pass schedule")
    events = _events(o["input"])
    res = tune_pass(sched[i], events, tuple(o["weights"]), detector=det, schedule=sched, pass_index=i,
                    params=o["params"], max_iters=o["max_iters"])
    write_schedule(sched.replace_pass(i, res.config), o["out"])
    print(json.dumps({"criterion": res.value, "iterations": res.iterations}), file=sys.stderr)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "reconstruct": cmd_reconstruct,
    "score": cmd_score,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
    "tune": cmd_tune,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve(args)
        print(json.dumps({"command": args.command, **opts}, sort_keys=True, default=str), file=sys.stderr)
        return COMMANDS[args.command](opts)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
