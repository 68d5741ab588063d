"""Benchmark suite runner: episode matrix execution, persistence, reports.

Every (scenario, policy, seed, channel point) combination is one episode
keyed by a configuration digest. Results append to `results.jsonl`; reruns
skip combinations whose digest is already persisted, so an interrupted
suite resumes with zero repeated work and reproduces the identical summary.
"""

from __future__ import annotations

import fnmatch
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import ChannelConfig
from .engine import EngineConfig, Episode, config_digest
from .lane_graph import MapLibrary
from .metrics import (BenchmarkReport, InsufficientDataError, ade, ap_at_iou,
                      collision_rate, correlation_report, harmonic_mean_ds_sr)
from .scenario import Scenario, parse_scenario_dir


@dataclass
class SuiteConfig:
    scenario_roots: list[str] = field(default_factory=list)
    buckets: list[str] = field(default_factory=list)      # empty = all
    categories: list[str] = field(default_factory=list)
    id_globs: list[str] = field(default_factory=lambda: ["*"])
    policies: list[str] = field(default_factory=lambda: ["single"])
    bindings: dict[str, str] = field(default_factory=dict)  # per-CAV override
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    sweep: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    termination: str = "terminate"
    workers: int = 1
    out_dir: str = "results"
    open_loop: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    @classmethod
    def from_file(cls, path) -> "SuiteConfig":
        raw = json.loads(Path(path).read_text())
        channel = ChannelConfig(**raw.pop("channel", {}))
        return cls(channel=channel, **raw)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(termination=self.termination,
                            collect_open_loop=self.open_loop)

    def channel_points(self) -> list[ChannelConfig]:
        if not self.sweep:
            return [self.channel]
        points = [self.channel]
        base = self.channel
        keys = sorted(self.sweep)
        grids: list[ChannelConfig] = []

        def expand(idx, current):
            if idx == len(keys):
                grids.append(current)
                return
            for value in self.sweep[keys[idx]]:
                expand(idx + 1, replace(current, **{keys[idx]: value}))

        expand(0, base)
        # unique while preserving order; the clean point must be present
        seen = set()
        out = []
        for cfg in grids:
            key = json.dumps(cfg.digest_fields(), sort_keys=True)
            if key not in seen:
                seen.add(key)
                out.append(cfg)
        if not any(c.latency_ticks == 0 and c.pos_noise_sigma_m == 0.0
                   and c.rot_noise_sigma_deg == 0.0 for c in out):
            raise ValueError("sweep grid must include the clean point")
        return out


def load_scenarios(cfg: SuiteConfig) -> list[Scenario]:
    scenarios = []
    for root in cfg.scenario_roots:
        root = Path(root)
        maps = MapLibrary(root / "maps") if (root / "maps").is_dir() else None
        if (root / "manifest").exists():
            # the root itself is a single scenario directory
            scenarios.append(parse_scenario_dir(root, maps))
            continue
        for d in sorted(root.iterdir()):
            if not (d / "manifest").exists():
                continue
            scen = parse_scenario_dir(d, maps)
            scenarios.append(scen)
    out = []
    for s in scenarios:
        if cfg.buckets and s.bucket not in cfg.buckets:
            continue
        if cfg.categories and s.category not in cfg.categories:
            continue
        if cfg.id_globs and not any(fnmatch.fnmatch(s.id, g) for g in cfg.id_globs):
            continue
        out.append(s)
    if not out:
        raise ValueError("scenario selectors matched nothing")
    return out


def _bindings_for(scenario: Scenario, policy: str, overrides: dict) -> dict:
    return {c.id: overrides.get(c.id, policy) for c in scenario.cavs}


def _combo_digest(scenario, policy, seed, channel_cfg, engine_cfg, overrides) -> str:
    return config_digest(scenario, _bindings_for(scenario, policy, overrides),
                         channel_cfg, engine_cfg, seed)


def _channel_label(cfg: ChannelConfig) -> str:
    return (f"lat{cfg.latency_ticks}"
            f"_pos{cfg.pos_noise_sigma_m:g}_rot{cfg.rot_noise_sigma_deg:g}")


def _run_combo(args):
    scenario, policy, seed, channel_cfg, engine_cfg, overrides = args
    bindings = _bindings_for(scenario, policy, overrides)
    ep = Episode(scenario, bindings, channel_cfg, seed, engine_cfg)
    ep.run()
    results = ep.results()
    digest = _combo_digest(scenario, policy, seed, channel_cfg, engine_cfg, overrides)
    records = []
    for cav_id in sorted(results):
        r = results[cav_id]
        records.append({
            "digest": digest,
            "scenario_id": scenario.id,
            "bucket": scenario.bucket,
            "category": scenario.category,
            "policy": policy,
            "seed": seed,
            "channel": _channel_label(channel_cfg),
            "cav": cav_id,
            "end_reason": ep.end_reason,
            **r.as_dict(),
        })
    open_loop = ep.open_loop_samples() if engine_cfg.collect_open_loop else []
    return digest, records, (policy, open_loop)


@dataclass
class SuiteOutcome:
    executed: int
    skipped: int
    records: list[dict]
    report: BenchmarkReport
    summary_path: Path
    results_path: Path


def run_suite(cfg: SuiteConfig, scenarios: list[Scenario] | None = None,
              episode_limit: int | None = None) -> SuiteOutcome:
    """Execute the configured episode matrix, resumably."""
    scenarios = scenarios if scenarios is not None else load_scenarios(cfg)
    engine_cfg = cfg.engine_config()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"

    existing: dict[str, list[dict]] = {}
    if results_path.exists():
        for line in results_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                existing.setdefault(rec["digest"], []).append(rec)

    combos = []
    for scenario in scenarios:
        for policy in cfg.policies:
            for channel_cfg in cfg.channel_points():
                for seed in cfg.seeds:
                    combos.append((scenario, policy, seed, channel_cfg,
                                   engine_cfg, cfg.bindings))
    pending = []
    skipped = 0
    for combo in combos:
        digest = _combo_digest(combo[0], combo[1], combo[2], combo[3],
                               combo[4], combo[5])
        if digest in existing:
            skipped += 1
        else:
            pending.append(combo)
    if episode_limit is not None:
        pending = pending[:episode_limit]

    ol_samples: dict[str, list] = {}
    new_records: list[dict] = []
    if pending:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                outcomes = list(pool.map(_run_combo, pending))
        else:
            outcomes = [_run_combo(c) for c in pending]
        with results_path.open("a") as f:
            for digest, records, (policy, samples) in outcomes:
                for rec in records:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
                new_records.extend(records)
                if samples:
                    ol_samples.setdefault(policy, []).extend(samples)

    all_records = [r for recs in existing.values() for r in recs] + new_records
    all_records.sort(key=lambda r: (r["scenario_id"], r["policy"], r["seed"],
                                    r["channel"], r["cav"]))
    report = BenchmarkReport.from_records(all_records)
    if ol_samples:
        report.open_loop = _aggregate_open_loop(ol_samples)
        closed = {p: block for p, block in _per_policy_closed(all_records).items()}
        if len(report.open_loop) >= 3 and len(closed) >= 3:
            try:
                report.correlations = correlation_report(report.open_loop, closed)
            except InsufficientDataError:
                report.correlations = None
    summary_path = out_dir / "summary.json"
    summary_text = render_summary(cfg, all_records, report)
    summary_path.write_text(summary_text)
    (out_dir / "summary.txt").write_text(render_tables(cfg, all_records, report))
    return SuiteOutcome(len(pending), skipped, all_records, report,
                        summary_path, results_path)


def _per_policy_closed(records: list[dict]) -> dict[str, dict[str, float]]:
    groups: dict[str, list[dict]] = {}
    for r in records:
        groups.setdefault(r["policy"], []).append(r)
    out = {}
    for policy, rows in sorted(groups.items()):
        n = len(rows)
        out[policy] = {
            "ds": sum(r["ds"] for r in rows) / n,
            "sr": 100.0 * sum(1 for r in rows if r["success"]) / n,
        }
    return out


def _aggregate_open_loop(ol_samples: dict[str, list]) -> dict[str, dict[str, float]]:
    out = {}
    for policy, samples in sorted(ol_samples.items()):
        if not samples:
            continue
        frames = [(list(s.pred_boxes), list(s.gt_boxes)) for s in samples]
        ap = ap_at_iou(frames, 0.5)
        ades = [ade(s.plan, s.gt_future) for s in samples]
        out[policy] = {
            "ap50": ap,
            "ade": sum(ades) / len(ades),
            "cr": collision_rate(samples),
        }
    return out


# ---------------------------------------------------------------------------
# reports

def render_summary(cfg: SuiteConfig, records: list[dict],
                   report: BenchmarkReport) -> str:
    payload = {
        "by_policy_bucket": report.by_policy_bucket,
        "by_policy_category": report.by_policy_category,
        "open_loop": report.open_loop,
        "correlations": report.correlations,
        "episodes": len({r["digest"] for r in records}),
        "records": len(records),
        "sweep": _sweep_tables(records) if _has_sweep(cfg, records) else None,
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _has_sweep(cfg: SuiteConfig, records: list[dict]) -> bool:
    return bool(cfg.sweep) or len({r["channel"] for r in records}) > 1


CLEAN_LABEL = "lat0_pos0_rot0"


def _sweep_tables(records: list[dict]) -> dict:
    """Clean-vs-perturbed deltas per policy: DS, RC, IS, SR columns."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in records:
        groups.setdefault((r["policy"], r["channel"]), []).append(r)

    def block(rows):
        n = len(rows)
        return {
            "ds": sum(x["ds"] for x in rows) / n,
            "rc": sum(x["rc"] for x in rows) / n,
            "is": sum(x["ip"] for x in rows) / n,
            "sr": 100.0 * sum(1 for x in rows if x["success"]) / n,
        }

    tables: dict = {}
    policies = sorted({p for p, _ in groups})
    channels = sorted({c for _, c in groups})
    for policy in policies:
        clean = groups.get((policy, CLEAN_LABEL))
        if clean is None:
            continue
        base = block(clean)
        for channel in channels:
            rows = groups.get((policy, channel))
            if rows is None:
                continue
            perturbed = block(rows)
            tables.setdefault(channel, {})[policy] = {
                "clean": base,
                "perturbed": perturbed,
                "delta": {k: perturbed[k] - base[k] for k in base},
            }
    return tables


def render_tables(cfg: SuiteConfig, records: list[dict],
                  report: BenchmarkReport) -> str:
    lines = ["benchmark summary", "=" * 64]
    lines.append(f"{'policy|bucket':<34}{'n':>4}{'DS':>8}{'RC':>8}{'IP':>7}{'SR%':>7}")
    for key, b in report.by_policy_bucket.items():
        lines.append(f"{key:<34}{b['n']:>4}{b['ds']:>8.2f}{b['rc']:>8.2f}"
                     f"{b['ip']:>7.3f}{b['sr']:>7.1f}")
    lines.append("")
    lines.append(f"{'policy|category':<40}{'HM(DS,SR)':>10}")
    for key, b in report.by_policy_category.items():
        lines.append(f"{key:<40}{b['hm_ds_sr']:>10.2f}")
    if report.open_loop:
        lines.append("")
        lines.append(f"{'policy':<20}{'AP50':>8}{'ADE':>8}{'CR%':>8}")
        for policy, m in report.open_loop.items():
            lines.append(f"{policy:<20}{m['ap50']:>8.3f}{m['ade']:>8.3f}{m['cr']:>8.2f}")
    if _has_sweep(cfg, records):
        lines.append("")
        lines.append("perturbation deltas (clean vs point)")
        tables = _sweep_tables(records)
        for channel, rows in tables.items():
            lines.append(f"-- {channel}")
            lines.append(f"{'policy':<18}{'DS':>8}{'dDS':>8}{'RC':>8}{'dRC':>8}"
                         f"{'IS':>7}{'dIS':>8}{'SR':>7}{'dSR':>8}")
            for policy, t in rows.items():
                p, d = t["perturbed"], t["delta"]
                lines.append(
                    f"{policy:<18}{p['ds']:>8.2f}{d['ds']:>+8.2f}{p['rc']:>8.2f}"
                    f"{d['rc']:>+8.2f}{p['is']:>7.3f}{d['is']:>+8.3f}"
                    f"{p['sr']:>7.1f}{d['sr']:>+8.1f}")
    return "\n".join(lines) + "\n"


def run_sweep(cfg: SuiteConfig, scenarios: list[Scenario] | None = None) -> SuiteOutcome:
    """Suite execution over a perturbation grid, emitting delta tables."""
    if not cfg.sweep:
        raise ValueError("run_sweep needs a sweep grid (latency and/or sigmas)")
    return run_suite(cfg, scenarios)


def scatter_rows(report: BenchmarkReport, records: list[dict]) -> list[dict]:
    """Per-policy open-vs-closed scatter table for external plotting."""
    closed = _per_policy_closed(records)
    rows = []
    for policy in sorted(closed):
        row = {"policy": policy, **{f"cl_{k}": v for k, v in closed[policy].items()}}
        if report.open_loop and policy in report.open_loop:
            row.update({f"ol_{k}": v for k, v in report.open_loop[policy].items()})
        rows.append(row)
    return rows


def compare_human(human_records: list[dict], policy_records: list[dict]) -> dict:
    """Per-scenario and aggregate DS/SR of demonstrations vs each policy,
    plus completion-time efficiency deltas."""
    by_scenario_h: dict[str, list[dict]] = {}
    for r in human_records:
        by_scenario_h.setdefault(r["scenario_id"], []).append(r)
    by_policy: dict[str, dict[str, list[dict]]] = {}
    for r in policy_records:
        by_policy.setdefault(r["policy"], {}).setdefault(r["scenario_id"], []).append(r)
    overlap_any = False
    comparison: dict = {"per_policy": {}, "scenarios": sorted(by_scenario_h)}

    def agg(rows):
        n = len(rows)
        return {
            "ds": sum(x["ds"] for x in rows) / n,
            "sr": 100.0 * sum(1 for x in rows if x["success"]) / n,
            "mean_duration_s": sum(x["duration_ticks"] for x in rows) / n * 0.05,
        }

    for policy, per_scen in sorted(by_policy.items()):
        shared = sorted(set(per_scen) & set(by_scenario_h))
        if not shared:
            continue
        overlap_any = True
        h_rows = [r for sid in shared for r in by_scenario_h[sid]]
        p_rows = [r for sid in shared for r in per_scen[sid]]
        h, p = agg(h_rows), agg(p_rows)
        comparison["per_policy"][policy] = {
            "scenarios": shared,
            "human": h,
            "policy": p,
            "gap": {k: h[k] - p[k] for k in ("ds", "sr")},
            "time_delta_s": p["mean_duration_s"] - h["mean_duration_s"],
            "per_scenario": {
                sid: {
                    "human_ds": agg(by_scenario_h[sid])["ds"],
                    "policy_ds": agg(per_scen[sid])["ds"],
                }
                for sid in shared
            },
        }
    if not overlap_any:
        raise InsufficientDataError("no overlapping scenario ids between "
                                    "demonstrations and policy results")
    return comparison
