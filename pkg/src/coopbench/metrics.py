"""Closed-loop and open-loop evaluation metrics.

Closed loop: route completion (monotone arc-length projection), infraction
penalty (multiplicative), driving score DS = RC x IP, success. Open loop:
AP at BEV IoU 0.5, ADE over the 3 s plan grid, and collision rate with the
strict TTC < 0.9 s and lateral < 3.5 m thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Obb, Polyline, obb_intersection_area

DEFAULT_PENALTIES = {
    "collision_pedestrian": 0.50,
    "collision_vehicle": 0.60,
    "collision_static": 0.65,
    "red_light": 0.70,
    "off_route_timeout": 0.70,
}

SUCCESS_RC_THRESHOLD = 99.9
OFF_ROUTE_BOUND_M = 7.0  # 2 x default lane width

CR_TTC_S = 0.9
CR_LATERAL_M = 3.5

OPEN_LOOP_GRID_DT = 0.5
OPEN_LOOP_POINTS = 6


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    tick: int
    coefficient: float
    other_id: str = ""

    def as_dict(self) -> dict:
        return {"kind": self.kind, "tick": self.tick,
                "coefficient": self.coefficient, "other_id": self.other_id}


@dataclass(frozen=True)
class EpisodeResult:
    rc: float                   # percent, 0..100
    ip: float                   # 0..1
    ds: float                   # rc * ip
    success: bool
    infractions: tuple[InfractionEvent, ...]
    duration_ticks: int

    def as_dict(self) -> dict:
        return {
            "rc": self.rc, "ip": self.ip, "ds": self.ds, "success": self.success,
            "duration_ticks": self.duration_ticks,
            "infractions": [e.as_dict() for e in self.infractions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        return cls(
            rc=d["rc"], ip=d["ip"], ds=d["ds"], success=d["success"],
            duration_ticks=d["duration_ticks"],
            infractions=tuple(InfractionEvent(**e) for e in d["infractions"]),
        )


def infraction_penalty(events, penalties: dict[str, float] | None = None) -> float:
    """Product of per-event coefficients; 1.0 for a clean episode."""
    table = penalties or DEFAULT_PENALTIES
    ip = 1.0
    for ev in events:
        coeff = ev.coefficient if isinstance(ev, InfractionEvent) else table[ev]
        ip *= coeff
    return ip


def driving_score(rc: float, ip: float) -> float:
    return rc * ip


def success(result: EpisodeResult, rc_threshold: float = SUCCESS_RC_THRESHOLD) -> bool:
    return result.rc >= rc_threshold and len(result.infractions) == 0


def make_result(rc: float, events, duration_ticks: int,
                penalties=None, rc_threshold: float = SUCCESS_RC_THRESHOLD) -> EpisodeResult:
    ip = infraction_penalty(events, penalties)
    ds = driving_score(rc, ip)
    ok = rc >= rc_threshold and len(events) == 0
    return EpisodeResult(rc, ip, ds, ok, tuple(events), duration_ticks)


def route_completion(positions, route: Polyline,
                     off_route_bound: float = OFF_ROUTE_BOUND_M) -> float:
    """Monotone arc-length progress along the route, as a percentage.

    Progress never decreases (no credit for backtracking) and freezes while
    the lateral deviation exceeds the off-route bound.
    """
    if route.length <= 0:
        raise ValueError("route arc length must be > 0")
    s_max = 0.0
    for p in positions:
        proj = route.project(p)
        if proj.distance > off_route_bound:
            continue
        s_max = max(s_max, proj.s)
    return 100.0 * s_max / route.length


def iou_bev(a: Obb, b: Obb) -> float:
    inter = obb_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return inter / union if union > 0 else 0.0


def ap_at_iou(frames, threshold: float = 0.5) -> float:
    """Average precision over score-ranked pooled predictions.

    `frames` is a list of (predictions, ground_truths) where predictions are
    (Obb, score) pairs. Matching is greedy in descending score with the
    highest-IoU unmatched truth per frame; a match requires IoU >= threshold.
    AP is the area under the precision-recall curve with the all-point
    precision envelope.
    """
    pooled = []  # (score, frame_idx, pred_idx)
    n_gt = 0
    for f, (preds, gts) in enumerate(frames):
        n_gt += len(gts)
        for i, (box, scoreval) in enumerate(preds):
            pooled.append((scoreval, f, i))
    if n_gt == 0:
        return 0.0 if pooled else 1.0
    pooled.sort(key=lambda t: (-t[0], t[1], t[2]))
    matched: dict[int, set[int]] = {f: set() for f in range(len(frames))}
    tp = np.zeros(len(pooled))
    for rank, (scoreval, f, i) in enumerate(pooled):
        preds, gts = frames[f]
        box = preds[i][0]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if j in matched[f]:
                continue
            iou = iou_bev(box, gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= threshold:
            matched[f].add(best_j)
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(pooled) + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    # precision envelope, then sum over recall steps
    ap = 0.0
    prev_recall = 0.0
    for r in range(len(pooled)):
        if tp[r] > 0:
            p_env = float(np.max(precision[r:]))
            ap += (recall[r] - prev_recall) * p_env
            prev_recall = recall[r]
    return float(ap)


def ade(plan, gt) -> float:
    """Mean Euclidean distance over timestamp-aligned plan and truth."""
    if len(plan) != len(gt):
        raise ValueError(f"length mismatch: plan {len(plan)} vs gt {len(gt)}")
    total = 0.0
    for (ta, xa, ya), (tb, xb, yb) in zip(plan, gt):
        total += math.hypot(xa - xb, ya - yb)
    return total / len(plan)


@dataclass(frozen=True)
class OpenLoopSample:
    """One open-loop evaluation point extracted from a closed-loop trace."""

    tick: int
    gt_boxes: tuple[Obb, ...]
    pred_boxes: tuple[tuple[Obb, float], ...]
    plan: tuple[tuple[float, float, float], ...]       # (t, x, y) on the grid
    gt_future: tuple[tuple[float, float, float], ...]  # same grid
    surrounding: tuple[tuple[tuple[float, float, float, float], ...], ...]
    # surrounding[i][k] = (x, y, vx, vy) of object i at grid step k


def _plan_kinematics(plan):
    """Unit headings and velocity vectors per grid point."""
    n = len(plan)
    headings = []
    vels = []
    last_u = (1.0, 0.0)
    for k in range(n):
        if k + 1 < n:
            dt = plan[k + 1][0] - plan[k][0]
            dx = plan[k + 1][1] - plan[k][1]
            dy = plan[k + 1][2] - plan[k][2]
        else:
            dt = plan[k][0] - plan[k - 1][0]
            dx = plan[k][1] - plan[k - 1][1]
            dy = plan[k][2] - plan[k - 1][2]
        norm = math.hypot(dx, dy)
        u = (dx / norm, dy / norm) if norm > 1e-9 else last_u
        last_u = u
        vels.append((dx / dt, dy / dt) if dt > 0 else (0.0, 0.0))
        headings.append(u)
    return headings, vels


def sample_violates(sample: OpenLoopSample) -> bool:
    """TTC < 0.9 s and lateral < 3.5 m at any grid time (strict bounds)."""
    plan = sample.plan
    if len(plan) < 2:
        return False
    headings, vels = _plan_kinematics(plan)
    for k in range(len(plan)):
        _, px, py = plan[k]
        ux, uy = headings[k]
        nx, ny = -uy, ux
        vpx, vpy = vels[k]
        for obj in sample.surrounding:
            if k >= len(obj):
                continue
            ox, oy, ovx, ovy = obj[k]
            rx, ry = ox - px, oy - py
            lon = rx * ux + ry * uy
            lat = rx * nx + ry * ny
            if abs(lat) >= CR_LATERAL_M:
                continue
            closing = (vpx - ovx) * ux + (vpy - ovy) * uy
            if lon <= 0 or closing <= 0:
                continue
            ttc = lon / closing
            if ttc < CR_TTC_S:
                return True
    return False


def collision_rate(samples, per_scenario: dict | None = None) -> float:
    """Percent of samples in violation; pass a {sample: scenario} map to
    count per scenario instead."""
    if not samples:
        return 0.0
    if per_scenario is None:
        bad = sum(1 for s in samples if sample_violates(s))
        return 100.0 * bad / len(samples)
    groups: dict[str, list] = {}
    for s in samples:
        groups.setdefault(per_scenario[id(s)], []).append(s)
    bad = sum(1 for members in groups.values() if any(sample_violates(s) for s in members))
    return 100.0 * bad / len(groups)


# ---------------------------------------------------------------------------
# correlation and aggregation

def pearson(x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xm, ym = x - x.mean(), y - y.mean()
    denom = math.sqrt(float((xm**2).sum()) * float((ym**2).sum()))
    if denom == 0:
        return float("nan")
    return float((xm * ym).sum() / denom)


def _ranks(x) -> np.ndarray:
    x = np.asarray(x, float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0  # average rank for ties, 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    return pearson(_ranks(x), _ranks(y))


def harmonic_mean_ds_sr(ds: float, sr: float) -> float:
    if ds < 0 or sr < 0:
        raise ValueError("inputs must be >= 0")
    if ds + sr == 0:
        return 0.0
    return 2.0 * ds * sr / (ds + sr)


def correlation_report(open_metrics: dict[str, dict[str, float]],
                       closed_metrics: dict[str, dict[str, float]]) -> dict:
    """Pearson and Spearman per (open, closed) metric pair across policies,
    plus the per-policy scatter table for external plotting."""
    policies = sorted(set(open_metrics) & set(closed_metrics))
    if len(policies) < 3:
        raise InsufficientDataError(
            f"correlation needs >= 3 policies, got {len(policies)}")
    ol_names = sorted({k for p in policies for k in open_metrics[p]})
    cl_names = sorted({k for p in policies for k in closed_metrics[p]})
    pairs = {}
    for ol in ol_names:
        for cl in cl_names:
            xs = [open_metrics[p][ol] for p in policies]
            ys = [closed_metrics[p][cl] for p in policies]
            pairs[f"{ol}~{cl}"] = {
                "pearson": pearson(xs, ys),
                "spearman": spearman(xs, ys),
            }
    scatter = [
        {"policy": p, **{f"ol_{k}": open_metrics[p].get(k) for k in ol_names},
         **{f"cl_{k}": closed_metrics[p].get(k) for k in cl_names}}
        for p in policies
    ]
    return {"pairs": pairs, "scatter": scatter}


@dataclass
class BenchmarkReport:
    """Aggregates recomputable from the persisted per-episode records."""

    by_policy_bucket: dict = field(default_factory=dict)
    by_policy_category: dict = field(default_factory=dict)
    open_loop: dict = field(default_factory=dict)
    correlations: dict | None = None

    @staticmethod
    def from_records(records: list[dict]) -> "BenchmarkReport":
        rep = BenchmarkReport()
        groups: dict[tuple[str, str], list[dict]] = {}
        cat_groups: dict[tuple[str, str], list[dict]] = {}
        for r in records:
            groups.setdefault((r["policy"], r["bucket"]), []).append(r)
            cat_groups.setdefault((r["policy"], r["category"]), []).append(r)
        for (policy, bucket), rows in sorted(groups.items()):
            rep.by_policy_bucket[f"{policy}|{bucket}"] = _mean_block(rows)
        for (policy, category), rows in sorted(cat_groups.items()):
            block = _mean_block(rows)
            block["hm_ds_sr"] = harmonic_mean_ds_sr(block["ds"], block["sr"])
            rep.by_policy_category[f"{policy}|{category}"] = block
        return rep


def _mean_block(rows: list[dict]) -> dict:
    n = len(rows)
    return {
        "n": n,
        "ds": float(np.mean([r["ds"] for r in rows])),
        "rc": float(np.mean([r["rc"] for r in rows])),
        "ip": float(np.mean([r["ip"] for r in rows])),
        "sr": 100.0 * sum(1 for r in rows if r["success"]) / n,
    }
