"""Operator command line: run, sweep, gen, convert, stats, report, serve,
replay, compare-human."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .channel import ChannelConfig
from .lane_graph import MapLibrary
from .scenario import parse_scenario_dir, scenario_statistics
from .suite import (SuiteConfig, compare_human, load_scenarios, run_suite,
                    run_sweep, scatter_rows)


def _load_cfg(args) -> SuiteConfig:
    if args.config:
        cfg = SuiteConfig.from_file(args.config)
    else:
        cfg = SuiteConfig()
    if getattr(args, "scenarios", None):
        cfg.scenario_roots = [args.scenarios]
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.workers is not None:
        cfg.workers = args.workers
    if getattr(args, "policies", None):
        cfg.policies = args.policies.split(",")
    return cfg


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    outcome = run_suite(cfg)
    print(f"executed {outcome.executed} episodes, skipped {outcome.skipped} "
          f"(already complete)")
    print(f"results: {outcome.results_path}")
    print(f"summary: {outcome.summary_path}")
    print(Path(outcome.summary_path).with_suffix(".txt").read_text())
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    if args.latency:
        cfg.sweep["latency_ticks"] = [int(v) for v in args.latency.split(",")]
    if args.pos_sigma:
        cfg.sweep["pos_noise_sigma_m"] = [float(v) for v in args.pos_sigma.split(",")]
    if args.rot_sigma:
        cfg.sweep["rot_noise_sigma_deg"] = [float(v) for v in args.rot_sigma.split(",")]
    outcome = run_sweep(cfg)
    print(f"executed {outcome.executed} episodes, skipped {outcome.skipped}")
    print(Path(outcome.summary_path).with_suffix(".txt").read_text())
    return 0


def cmd_stats(args) -> int:
    cfg = _load_cfg(args)
    scenarios = load_scenarios(cfg)
    by_bucket: dict[str, list] = {}
    for s in scenarios:
        by_bucket.setdefault(s.bucket, []).append(scenario_statistics(s))
    print(f"{'bucket':<14}{'count':>6}{'CAV':>7}{'RL(m)':>9}{'HC(deg)':>9}"
          f"{'actors':>8}{'infra':>7}")
    for bucket in sorted(by_bucket):
        rows = by_bucket[bucket]
        n = len(rows)
        mean = lambda f: sum(f(r) for r in rows) / n
        print(f"{bucket:<14}{n:>6}{mean(lambda r: r.cav_count):>7.2f}"
              f"{mean(lambda r: r.mean_route_length_m):>9.2f}"
              f"{mean(lambda r: r.mean_cumulative_heading_change_deg):>9.2f}"
              f"{mean(lambda r: r.background_actor_count):>8.2f}"
              f"{mean(lambda r: r.infrastructure_count):>7.2f}")
    return 0


def cmd_report(args) -> int:
    results = Path(args.results)
    records = [json.loads(ln) for ln in results.read_text().splitlines() if ln.strip()]
    from .metrics import BenchmarkReport
    from .suite import render_tables
    report = BenchmarkReport.from_records(records)
    cfg = SuiteConfig()
    print(render_tables(cfg, records, report))
    if args.scatter:
        rows = scatter_rows(report, records)
        out = Path(args.scatter)
        cols = sorted({k for r in rows for k in r})
        lines = [",".join(cols)]
        for r in rows:
            lines.append(",".join(str(r.get(c, "")) for c in cols))
        out.write_text("\n".join(lines) + "\n")
        print(f"scatter table: {out}")
    return 0


def cmd_gen(args) -> int:
    from .scenario_gen import (DifficultyBand, MapRegionLibrary,
                               difficulty_screen, duplicate_filter,
                               export_batch, instantiate, propose,
                               read_review_annotations)
    regions = MapRegionLibrary()
    categories = args.categories.split(",") if args.categories else []
    if args.verb == "propose":
        for cat in categories:
            schemas = propose(cat, args.count, args.proposer, args.seed or 0)
            for k, schema in enumerate(schemas):
                print(json.dumps(schema.as_dict(), sort_keys=True))
        return 0
    pool = []
    for cat in categories:
        schemas = propose(cat, args.count, args.proposer, args.seed or 0)
        for k, schema in enumerate(schemas):
            scen = instantiate(schema, regions, seed=(args.seed or 0) * 1000 + k,
                               scenario_id=f"{cat}_{k:03d}")
            pool.append(scen)
    survivors = duplicate_filter(pool)
    print(f"instantiated {len(pool)} scenarios, {len(survivors)} after "
          f"duplicate filtering")
    band = DifficultyBand(args.band_low, args.band_high)
    screen = {s.id: difficulty_screen(s, band, contact_dist=args.contact_dist)
              for s in survivors}
    accepted = sum(1 for ok, _ in screen.values() if ok)
    print(f"difficulty screen: {accepted}/{len(survivors)} inside "
          f"[{band.min_ttc_low}, {band.min_ttc_high}] s")
    if args.verb in ("export", "instantiate"):
        review = read_review_annotations(args.review) if args.review else {}
        for sid, keep in review.items():
            if sid in screen:
                screen[sid] = (keep, screen[sid][1])
        out = args.out or "generated_scenarios"
        export_batch(survivors, out, screen)
        print(f"exported to {out} (batch.index lists fingerprints and screen "
              f"results)")
    return 0


def cmd_convert(args) -> int:
    from .real2sim import convert_log
    maps = MapLibrary(args.maps) if args.maps else None
    out = Path(args.out or "converted")
    scen, report = convert_log(args.log, maps, out, args.id)
    print(report.text())
    print(f"scenario {scen.id}: {len(scen.cavs)} CAVs, "
          f"{len(scen.background_actors)} replay actors -> {out}")
    return 0


def cmd_serve(args) -> int:
    from .bridge import BridgeServer
    cfg = _load_cfg(args)
    scenarios = load_scenarios(cfg)
    scen = scenarios[0]
    human = args.human or scen.cavs[0].id
    bindings = {c.id: args.policy for c in scen.cavs}
    server = BridgeServer(scen, bindings, human, port=args.port,
                          token=args.token, channel_cfg=cfg.channel,
                          seed=cfg.seeds[0])
    print(f"bridge serving scenario {scen.id!r} on 127.0.0.1:{server.port} "
          f"(human CAV: {human})")
    try:
        server.serve()
    except KeyboardInterrupt:
        pass
    finally:
        for k, demo in enumerate(server.demos):
            path = Path(cfg.out_dir) / f"demo_{scen.id}_{k}.log"
            path.parent.mkdir(parents=True, exist_ok=True)
            demo.write(path)
            print(f"saved demonstration {path}")
        server.stop()
    return 0


def cmd_replay(args) -> int:
    from .bridge import DemonstrationLog, replay_demo
    cfg = _load_cfg(args)
    log = DemonstrationLog.load(args.demo)
    scenarios = load_scenarios(cfg)
    scen = next(s for s in scenarios if s.id == log.scenario_id)
    result, trace_bytes = replay_demo(log, scen)
    print(f"replayed {log.scenario_id} / {log.cav_id}: rc={result.rc:.2f} "
          f"ip={result.ip:.3f} ds={result.ds:.2f} success={result.success}")
    if args.append_results:
        record = {
            "digest": f"demo:{Path(args.demo).name}",
            "scenario_id": scen.id, "bucket": scen.bucket,
            "category": scen.category, "policy": "human",
            "seed": log.seed, "channel": "human", "cav": log.cav_id,
            "end_reason": "demo", **result.as_dict(),
        }
        with Path(args.append_results).open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
        print(f"appended human record to {args.append_results}")
    if log.outcome is not None:
        match = result.as_dict() == log.outcome
        print(f"outcome identical to recording: {match}")
        return 0 if match else 1
    return 0


def cmd_compare_human(args) -> int:
    records = [json.loads(ln) for ln in Path(args.results).read_text().splitlines()
               if ln.strip()]
    human = [r for r in records if r["policy"] == "human"]
    policy = [r for r in records if r["policy"] != "human"]
    table = compare_human(human, policy)
    for name, block in table["per_policy"].items():
        h, p, g = block["human"], block["policy"], block["gap"]
        print(f"{name}: human DS {h['ds']:.2f} SR {h['sr']:.1f}% | policy DS "
              f"{p['ds']:.2f} SR {p['sr']:.1f}% | gap DS {g['ds']:+.2f} "
              f"SR {g['sr']:+.1f}% | time delta {block['time_delta_s']:+.1f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopbench",
        description="closed-loop cooperative driving benchmark harness")
    parser.add_argument("--config", help="suite config JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a benchmark suite")
    p.add_argument("--scenarios", help="scenario root directory")
    p.add_argument("--policies", help="comma-separated policy bindings")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="latency / pose-noise perturbation sweep")
    p.add_argument("--scenarios")
    p.add_argument("--policies")
    p.add_argument("--latency", help="comma list of latency_ticks")
    p.add_argument("--pos-sigma", dest="pos_sigma", help="comma list of sigma m")
    p.add_argument("--rot-sigma", dest="rot_sigma", help="comma list of sigma deg")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="scenario-set structural statistics")
    p.add_argument("--scenarios", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="rebuild summary tables from results")
    p.add_argument("--results", required=True)
    p.add_argument("--scatter", help="write open-vs-closed scatter CSV here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen", help="scenario generation pipeline")
    p.add_argument("verb", choices=["propose", "instantiate", "screen", "export"])
    p.add_argument("--categories", required=True,
                   help="comma-separated category slugs")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--proposer", default="template",
                   help="'template' or 'external:<url>'")
    p.add_argument("--band-low", type=float, default=0.5)
    p.add_argument("--band-high", type=float, default=4.0)
    p.add_argument("--contact-dist", type=float, default=0.0,
                   help="center distance counting as contact (0 = strict)")
    p.add_argument("--review", help="manual review annotations file")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="convert a driving log into a scenario")
    p.add_argument("--log", required=True)
    p.add_argument("--maps", help="directory of .lanes map files")
    p.add_argument("--id", help="scenario id for the export")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("serve", help="live takeover bridge for the UI")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--policy", default="coop_perception")
    p.add_argument("--human", help="CAV id the human controls")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--token", help="session token clients must present")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay a demonstration log")
    p.add_argument("--demo", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--append-results", dest="append_results",
                   help="append the replayed outcome as a policy=human record")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare-human", help="human vs policy gap tables")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_compare_human)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
