"""`sim` command line: runs, fitting, data generation, reports, serving."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import analytics, battle, datagen
from .config import ConfigError, RunConfig, load_cluster_specs
from .domain import Action, ProfileClass
from .engine import SimulationRun
from .persistence import RunRecord, load_snapshot, read_log


class CliError(Exception):
    pass


def _load_config(path: str) -> RunConfig:
    try:
        return RunConfig.from_file(path)
    except (ConfigError, FileNotFoundError) as e:
        raise CliError(f"bad config {path}: {e}") from e


def _log_hash(log_path: Path) -> str:
    h = hashlib.sha256()
    with open(log_path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _events_of_run(run_dir: Path):
    log_path = run_dir / "events.log"
    if not log_path.exists():
        raise CliError(f"no events.log under {run_dir}")
    return read_log(log_path)


def _record_of_run(run_dir: Path) -> RunRecord:
    try:
        return RunRecord.load(run_dir)
    except FileNotFoundError as e:
        raise CliError(f"no run.json under {run_dir}") from e


# --- subcommands -------------------------------------------------------------


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    run = SimulationRun(config, out_dir=out)
    record = RunRecord(run_id=config.run_id, config=config.to_dict(),
                       log_path=str(out / "events.log"),
                       snapshot_dir=str(out / "snapshots"))
    record.transition("running")
    record.save(out)
    run.run_to_end()
    run.close()
    record.transition("finished")
    record.save(out)
    print(f"run {config.run_id}: {config.total_steps} steps, "
          f"{len(run.events)} events, log sha256 {_log_hash(out / 'events.log')}")
    return 0


def cmd_resume(args) -> int:
    doc = load_snapshot(args.snapshot)
    out = Path(args.out) if args.out else Path(args.snapshot).parent.parent
    run = SimulationRun.from_snapshot(doc, out_dir=out)
    run.run_to_end()
    run.close()
    print(f"resumed from step {doc['taken_at_step']}, "
          f"finished at step {run.next_step}")
    return 0


def cmd_serve(args) -> int:
    from .api import RunManager, serve

    manager = RunManager(args.runs_dir)
    console = args.console
    if console is None:
        default = Path("frontend") / "dist"
        console = str(default) if default.is_dir() else None
    server = serve(manager, args.host, args.port, console)
    print(f"control plane on http://{args.host}:{args.port}/ "
          f"(console: {console or 'disabled'})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        manager.close()
        server.server_close()
    return 0


def cmd_fit(args) -> int:
    _, records = datagen.read_records(args.logs)
    model = battle.fit(records, min_bin_count=args.min_bin_count,
                       match_band=(args.band_lo, args.band_hi))
    model.save(args.out)
    print(f"fitted {len(model.curves)} classes from {len(records)} records "
          f"-> {args.out}")
    return 0


def cmd_predict_curve(args) -> int:
    model = battle.BattleModel.load(args.model)
    pc = ProfileClass.parse(args.profile_class)
    series = battle.predict_curve(model, pc, args.n_max)
    doc = {"profile_class": pc.value, "roman": pc.roman, "series": series}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2), "utf-8")
        print(f"wrote {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    return 0


def cmd_datagen(args) -> int:
    specs = load_cluster_specs(args.spec)
    if args.what == "population":
        profiles = datagen.generate_population(specs, args.n, args.seed)
        datagen.write_records(
            args.out, [p.to_dict() for p in profiles],
            header={"seed": args.seed, "n": args.n,
                    "fingerprint": datagen.records_fingerprint(
                        [p.to_dict() for p in profiles])})
        print(f"wrote {len(profiles)} profiles -> {args.out}")
        return 0
    if args.what == "season":
        logs = datagen.generate_season_logs(
            specs, args.n, args.seed, (args.band_lo, args.band_hi))
        out_dir = Path(args.out)
        for season, records in logs.items():
            path = out_dir / f"{season}.jsonl"
            datagen.write_records(
                path, records,
                header={"seed": args.seed, "season": season,
                        "fingerprint": datagen.records_fingerprint(records)})
            print(f"wrote {len(records)} matches -> {path}")
        return 0
    # trajectories
    record = _record_of_run(Path(args.run))
    config = RunConfig.from_dict(record.config)
    _, events = _events_of_run(Path(args.run))
    corpus = datagen.export_trajectories(
        events, config.resolve_population(), config.steps_per_day, args.day)
    datagen.write_records(
        args.out, corpus,
        header={"corpus_version": datagen.CORPUS_VERSION, "day": args.day,
                "run_id": config.run_id, "seed": config.seed})
    print(f"wrote {len(corpus)} decision points -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = datagen.read_corpus(args.pred)
    truth = datagen.read_corpus(args.truth)
    report = analytics.stepwise_accuracy(pred, truth)
    print(json.dumps(report, indent=2))
    return 0


def cmd_stats(args) -> int:
    record = _record_of_run(Path(args.run))
    config = RunConfig.from_dict(record.config)
    _, events = _events_of_run(Path(args.run))
    last = (config.total_steps - 1 if record.status == "finished" else None)
    frame = analytics.compute_frame(events, config, args.step, args.window,
                                    last_executed=last)
    print(json.dumps(frame.to_dict(), indent=2))
    return 0


def cmd_report(args) -> int:
    record = _record_of_run(Path(args.run))
    config = RunConfig.from_dict(record.config)
    _, events = _events_of_run(Path(args.run))
    out_dir = Path(args.out or (Path(args.run) / "report"))
    out_dir.mkdir(parents=True, exist_ok=True)
    spd = config.steps_per_day
    last = (config.total_steps - 1 if record.status == "finished"
            else events[-1].step.abs_step if events else 0)
    days = last // spd + 1
    series = []
    for day in range(days):
        step = min(last, (day + 1) * spd - 1)
        frame = analytics.compute_frame(events, config, step, spd,
                                        last_executed=last)
        series.append({"day": day, **frame.to_dict()})
    datagen.write_records(out_dir / "daily_stats.jsonl", series,
                          header={"run_id": config.run_id, "days": days})
    fold = analytics.LogFold(config).feed_all(events)
    ivs = sorted(fold.interventions.values(), key=lambda d: d["applied_step"])
    if ivs:
        reports = [analytics.intervention_report(
            events, config, iv["intervention_id"]) for iv in ivs]
        (out_dir / "interventions.json").write_text(
            json.dumps(reports, indent=2), "utf-8")
    print(f"wrote per-day series for {days} days -> {out_dir}")
    return 0


def cmd_replay(args) -> int:
    from mmosim.policy import ReplayPolicy

    record = _record_of_run(Path(args.run))
    config = RunConfig.from_dict(record.config)
    _, events = _events_of_run(Path(args.run))
    trajectory, rationales = {}, {}
    for ev in events:
        if ev.kind == "action_chosen":
            key = (ev.uid, ev.step.abs_step)
            trajectory[key] = Action(ev.payload["action"])
            if ev.payload.get("rationale_text") is not None:
                rationales[key] = ev.payload["rationale_text"]
    out = Path(args.out)
    replay_run = SimulationRun(config, out_dir=out)
    replay_run.bind_replay(ReplayPolicy(trajectory, rationales))
    replay_run.run_to_end()
    replay_run.close()
    original = _log_hash(Path(args.run) / "events.log")
    replayed = _log_hash(out / "events.log")
    match = "match" if original == replayed else "MISMATCH"
    print(f"replay {match}: original {original[:12]} replayed {replayed[:12]}")
    return 0 if original == replayed else 1


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="extraction-shooter economy simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a config to completion")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("resume", help="continue a run from a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_resume)

    p = sub.add_parser("serve", help="control plane + console")
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    p.add_argument("--console", default=None,
                   help="static console assets (default: frontend/dist if present)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("fit", help="fit battle curves from match logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-bin-count", type=int, default=30)
    p.add_argument("--band-lo", type=int, default=35)
    p.add_argument("--band-hi", type=int, default=40)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("predict-curve", help="export a fitted curve series")
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="profile_class", required=True,
                   help="class name or roman numeral I..V")
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_predict_curve)

    p = sub.add_parser("datagen", help="synthetic populations, seasons, corpora")
    p.add_argument("what", choices=["population", "season", "trajectories"])
    p.add_argument("--spec", default=None,
                   help="cluster spec file (default: packaged table)")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--band-lo", type=int, default=35)
    p.add_argument("--band-hi", type=int, default=40)
    p.add_argument("--run", default=None, help="run dir (trajectories)")
    p.add_argument("--day", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("eval", help="stepwise prediction accuracy")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="StatsFrame at a step")
    p.add_argument("--run", required=True)
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("report", help="per-day series + intervention reports")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("replay", help="re-execute a run from its own decisions")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
