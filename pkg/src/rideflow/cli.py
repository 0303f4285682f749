"""Command-line entry point: ingest pick-up data, run experiments, report.

Exit codes: 0 success, 2 configuration error, 3 data error.  Every output
directory gets a manifest recording the tool version, master seed, and
digests of the inputs; reruns with the same manifest produce identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from rideflow import __version__, graph as graph_mod, sim

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _file_digest(path: Path) -> str:
    return _digest(path.read_bytes())


def _check_overwrite(paths: list[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        names = ", ".join(str(p) for p in existing)
        raise CliError(f"refusing to overwrite {names} (use --force)", EXIT_CONFIG)


def _write_csv(path: Path, rows: list[dict], digest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config digest: {digest}\n")
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_ingest(args) -> int:
    csv_path = Path(args.csv)
    if not csv_path.exists():
        raise CliError(f"no such file: {csv_path}", EXIT_DATA)
    try:
        pickups, bad = graph_mod.load_pickups_csv(csv_path)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    for lineno, reason in bad:
        print(f"warning: line {lineno} malformed: {reason}", file=sys.stderr)
    if not pickups:
        raise CliError("no valid pickups in input", EXIT_DATA)
    try:
        vertices = graph_mod.cluster_pickups(pickups, args.radius, horizon=args.horizon)
        g = graph_mod.build_complete_metric(vertices, speed_kmh=args.speed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = Path(args.out)
    _check_overwrite([out], args.force)
    out.write_text(graph_mod.graph_to_json(g))
    total_rate = sum(v.arrival_rate for v in vertices)
    print(f"{len(vertices)} clusters, total arrival rate {total_rate:.4f}/min -> {out}")
    return EXIT_OK


def _load_config(args) -> sim.SimConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"no such config: {path}", EXIT_CONFIG)
        try:
            config = sim.config_from_json(path.read_text())
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise CliError(f"bad config: {exc}", EXIT_CONFIG) from exc
    else:
        config = sim.SimConfig()
    overrides = {
        "seed": args.seed,
        "control": args.control,
        "beta": args.beta,
        "num_drivers": args.drivers,
        "scenario": args.scenario,
        "num_requests": args.requests,
    }
    for name, value in overrides.items():
        if value is not None:
            config = dataclasses.replace(config, **{name: value})
    return config


def cmd_run(args) -> int:
    graph_path = Path(args.graph)
    if not graph_path.exists():
        raise CliError(f"no such graph: {graph_path}", EXIT_DATA)
    try:
        g = graph_mod.graph_from_json(graph_path.read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad graph file: {exc}", EXIT_DATA) from exc
    config = _load_config(args)
    errors = config.validate(g)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        raise CliError("invalid configuration", EXIT_CONFIG)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = _digest(sim.config_to_json(config).encode())
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "config_digest": digest,
        "graph": str(graph_path),
        "graph_digest": _file_digest(graph_path),
        "master_seed": config.seed,
        "repetitions": args.reps,
    }
    if args.reps <= 1:
        paths = [out_dir / "episode.csv", out_dir / "episode.json", out_dir / "manifest.json"]
        _check_overwrite(paths, args.force)
        result = sim.run_episode(config, g)
        _write_csv(paths[0], result.rows(), digest)
        paths[1].write_text(json.dumps({"digest": digest, **result.summary()}, indent=2))
    else:
        paths = [out_dir / "runs.csv", out_dir / "summary.csv",
                 out_dir / "summary.json", out_dir / "manifest.json"]
        _check_overwrite(paths, args.force)
        rows, summaries = sim.run_batch([config], g, args.reps, master_seed=config.seed)
        _write_csv(paths[0], rows, digest)
        _write_csv(paths[1], summaries, digest)
        paths[2].write_text(json.dumps({"digest": digest, "summaries": summaries}, indent=2))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def cmd_report(args) -> int:
    results_dir = Path(args.results)
    if not results_dir.exists():
        raise CliError(f"no such directory: {results_dir}", EXIT_DATA)
    batch_files = sorted(results_dir.glob("**/runs.csv"))
    episode_files = sorted(results_dir.glob("**/episode.json"))
    if not batch_files and not episode_files:
        raise CliError(f"no run outputs under {results_dir}", EXIT_DATA)
    rows = []
    missing = []
    for path in batch_files:
        try:
            rows.extend(_read_csv(path))
        except OSError as exc:
            missing.append(f"{path}: {exc}")
    for path in episode_files:
        # Single-episode outputs: one run-level row from summary + manifest.
        try:
            summary = json.loads(path.read_text())
            config = json.loads((path.parent / "manifest.json").read_text())["config"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            missing.append(f"{path}: {exc}")
            continue
        rows.append(
            {
                "control": config["control"],
                "beta": config["beta"],
                "drivers": config["num_drivers"],
                "scenario": config["scenario"],
                "mean_d": summary["mean_d"],
                "total_pay": summary["total_pay"],
            }
        )
    for note in missing:
        print(f"warning: skipped {note}", file=sys.stderr)

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row.get("control", "none"), row.get("drivers", ""),
               row.get("scenario", ""), row.get("beta", ""))
        groups.setdefault(key, []).append(row)

    import numpy as np

    out_rows = []
    for key in sorted(groups):
        control, drivers, scenario, beta = key
        vals = [float(r["mean_d"]) for r in groups[key] if r.get("mean_d") not in (None, "", "nan")]
        pays = [float(r.get("total_pay", 0.0)) for r in groups[key]]
        if not vals:
            continue
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        out_rows.append(
            {
                "control": control,
                "drivers": drivers,
                "scenario": scenario,
                "beta": beta,
                "runs": len(vals),
                "mean_d": float(np.mean(vals)),
                "q1_d": float(q1),
                "median_d": float(med),
                "q3_d": float(q3),
                "mean_pay": float(np.mean(pays)),
            }
        )
    out = Path(args.out)
    _check_overwrite([out], args.force)
    _write_csv(out, out_rows, _digest(json.dumps(out_rows, sort_keys=True).encode()))
    print(f"{len(out_rows)} groups -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rideflow", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="cluster a pickup CSV into a metric graph")
    p_ingest.add_argument("--csv", required=True, help="CSV with lat,lon,timestamp header")
    p_ingest.add_argument("--radius", type=float, default=500.0, help="cluster diameter cap, meters")
    p_ingest.add_argument("--speed", type=float, default=30.0, help="travel speed, km/h")
    p_ingest.add_argument("--horizon", type=float, default=None, help="demand window, minutes")
    p_ingest.add_argument("--out", required=True, help="graph JSON output path")
    p_ingest.add_argument("--force", action="store_true", help="allow overwriting outputs")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser("run", help="run a simulation episode or batch")
    p_run.add_argument("--graph", required=True)
    p_run.add_argument("--config", help="JSON config file; flags override its values")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--control", choices=list(sim.CONTROLS))
    p_run.add_argument("--beta", type=float)
    p_run.add_argument("--drivers", type=int)
    p_run.add_argument("--scenario", choices=list(sim.SCENARIOS))
    p_run.add_argument("--requests", type=int)
    p_run.add_argument("--reps", type=int, default=1)
    p_run.add_argument("--force", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="aggregate run outputs into a summary table")
    p_report.add_argument("--results", required=True, help="directory of run outputs")
    p_report.add_argument("--out", required=True, help="summary CSV path")
    p_report.add_argument("--force", action="store_true")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
