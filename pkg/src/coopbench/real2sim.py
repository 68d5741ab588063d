"""Driving-log conversion: ingestion, rigid alignment, lane snapping, export.

A log holds per-actor tracks in an arbitrary metric frame plus CAV and
infrastructure designations. Alignment estimates the rigid 2D transform
that registers vehicle track points onto the lane graph (coarse heading
grid with vertex-anchored translation seeds, then point-to-line Gauss
Newton); snapping projects each on-road point laterally onto the nearest
heading-consistent centerline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import SE2, Polyline, angle_diff, wrap_angle
from .lane_graph import LaneGraph, MapLibrary, parse_lane_graph
from .scenario import (ActorSpec, ActorTrack, CavSpec, InfraSpec,
                       ReplayBehavior, RouteSpec, Scenario, StaticObject,
                       UNCATEGORIZED, serialize_scenario_dir, validate_scenario)


class IngestionError(ValueError):
    pass


class AlignmentError(RuntimeError):
    def __init__(self, message: str, rms: float):
        super().__init__(message)
        self.rms = rms


@dataclass(frozen=True)
class LogTrack:
    actor_id: str
    actor_class: str
    footprint: tuple[float, float]
    frames: tuple[tuple[float, float, float, float, float], ...]  # t x y yaw v

    def array(self) -> np.ndarray:
        return np.array(self.frames, dtype=float)


@dataclass
class DrivingLog:
    map_id: str | None
    rate_hz: float
    cav_ids: tuple[str, ...]
    tracks: dict[str, LogTrack]
    infrastructure: tuple[InfraSpec, ...] = ()
    objects: tuple[StaticObject, ...] = ()
    embedded_graph: LaneGraph | None = None

    def window(self) -> tuple[float, float]:
        start = max(t.frames[0][0] for t in self.tracks.values())
        end = min(t.frames[-1][0] for t in self.tracks.values())
        return start, end


def ingest_log(path, maps: MapLibrary | None = None) -> DrivingLog:
    path = Path(path)
    lines = path.read_text().splitlines()
    map_id = None
    rate = 10.0
    cav_ids: list[str] = []
    infra: list[InfraSpec] = []
    objects: list[StaticObject] = []
    tracks: dict[str, LogTrack] = {}
    embedded: list[str] = []
    i = 0
    in_map = False
    current: list | None = None
    for ln_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if in_map:
            if line == "endmap":
                in_map = False
            else:
                embedded.append(raw)
            continue
        if not line or line.startswith("#"):
            continue
        if line == "beginmap":
            in_map = True
            continue
        if current is not None:
            if line == "end":
                tid, cls, L, W, rows = current
                if not rows:
                    raise IngestionError(f"{path}:{ln_no}: empty track {tid}")
                tracks[tid] = LogTrack(tid, cls, (L, W), tuple(rows))
                current = None
            else:
                vals = line.split()
                if len(vals) != 5:
                    raise IngestionError(f"{path}:{ln_no}: track rows are 't x y yaw v'")
                current[4].append(tuple(float(v) for v in vals))
            continue
        if line.startswith("track "):
            parts = line.split()
            if len(parts) != 5:
                raise IngestionError(f"{path}:{ln_no}: 'track id class length width'")
            current = [parts[1], parts[2], float(parts[3]), float(parts[4]), []]
            continue
        if ":" not in line:
            raise IngestionError(f"{path}:{ln_no}: expected 'key: value'")
        key, value = (s.strip() for s in line.split(":", 1))
        if key == "map":
            map_id = value
        elif key == "rate":
            rate = float(value)
        elif key == "cavs":
            cav_ids = value.split()
        elif key == "infra":
            parts = value.split()
            rng = float(parts[4]) if len(parts) == 5 else 60.0
            infra.append(InfraSpec(parts[0], float(parts[1]), float(parts[2]),
                                   float(parts[3]), rng))
        elif key == "object":
            parts = value.split()
            objects.append(StaticObject(parts[0], *(float(v) for v in parts[1:6])))
    if current is not None:
        raise IngestionError(f"{path}: unterminated track block")

    graph = None
    if embedded:
        import tempfile
        with tempfile.NamedTemporaryFile("w", suffix=".lanes", delete=False) as f:
            f.write("\n".join(embedded) + "\n")
            tmp = f.name
        graph = parse_lane_graph(tmp, map_id or "embedded")
        Path(tmp).unlink()

    if not cav_ids:
        raise IngestionError(f"{path}: no CAV designation")
    missing = [c for c in cav_ids if c not in tracks]
    if missing:
        raise IngestionError(f"{path}: designated CAVs without tracks: {missing}")
    log = DrivingLog(map_id=map_id, rate_hz=rate, cav_ids=tuple(cav_ids),
                     tracks=tracks, infrastructure=tuple(infra),
                     objects=tuple(objects), embedded_graph=graph)
    start, end = log.window()
    if end <= start:
        raise IngestionError(f"{path}: actor tracks share no common time window")
    return log


def resolve_graph(log: DrivingLog, maps: MapLibrary | LaneGraph | None) -> LaneGraph:
    if isinstance(maps, LaneGraph):
        return maps
    if log.embedded_graph is not None:
        return log.embedded_graph
    if maps is not None and log.map_id is not None:
        return maps.get(log.map_id)
    raise IngestionError("log has no embedded lane graph and no resolvable map id")


# ---------------------------------------------------------------------------
# alignment

MAX_RMS_M = 2.0
THETA_WINDOW_DEG = 6.0
MIN_ON_ROAD_POINTS = 20
MAX_OFFSET_M = 60.0  # larger recovered offsets mean no genuine lane support


def _vehicle_points(log: DrivingLog, limit: int = 120) -> np.ndarray:
    pts = []
    for track in log.tracks.values():
        if track.actor_class == "pedestrian":
            continue
        arr = track.array()
        pts.append(arr[:, 1:3])
    if not pts:
        return np.empty((0, 2))
    cloud = np.vstack(pts)
    if len(cloud) > limit:
        idx = np.linspace(0, len(cloud) - 1, limit).astype(int)
        cloud = cloud[idx]
    return cloud


def _segment_arrays(graph: LaneGraph):
    a_list, b_list = [], []
    for lane_id in sorted(graph.lanes):
        pts = graph.lanes[lane_id].centerline.pts
        a_list.append(pts[:-1])
        b_list.append(pts[1:])
    a = np.vstack(a_list)
    b = np.vstack(b_list)
    d = b - a
    len2 = np.maximum((d**2).sum(axis=1), 1e-12)
    return a, d, len2


def _nearest_foot(points: np.ndarray, segs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Foot points, outward normals, distances for each query point."""
    a, d, len2 = segs
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None, :, :]).sum(axis=2) / len2[None, :], 0.0, 1.0)
    foot = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - foot
    dist2 = (diff**2).sum(axis=2)
    idx = np.argmin(dist2, axis=1)
    rows = np.arange(len(points))
    best_foot = foot[rows, idx]
    offs = points - best_foot
    dist = np.sqrt(dist2[rows, idx])
    normals = np.where(dist[:, None] > 1e-12, offs / np.maximum(dist[:, None], 1e-12),
                       np.array([1.0, 0.0]))
    return best_foot, normals, dist


def _rms(points: np.ndarray, segs) -> float:
    _, _, dist = _nearest_foot(points, segs)
    return float(np.sqrt((dist**2).mean()))


def _solve_translation(points: np.ndarray, segs) -> np.ndarray:
    foot, n, _ = _nearest_foot(points, segs)
    c = ((points - foot) * n).sum(axis=1)
    A = n.T @ n
    b = -(n * c[:, None]).sum(axis=0)
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.zeros(2)


def estimate_alignment(log: DrivingLog, graph: LaneGraph,
                       theta_window_deg: float = THETA_WINDOW_DEG) -> SE2:
    """Rigid transform taking log coordinates onto the lane graph.

    Coarse search over heading at 1 degree with vertex-anchored translation
    seeds, then point-to-line Gauss-Newton with step halving; the refined
    objective is non-increasing by construction.
    """
    cloud = _vehicle_points(log)
    if len(cloud) < MIN_ON_ROAD_POINTS:
        raise AlignmentError(
            f"need >= {MIN_ON_ROAD_POINTS} on-road track points, got {len(cloud)}",
            rms=math.inf)
    segs = _segment_arrays(graph)
    vertices = np.vstack([graph.lanes[l].centerline.pts for l in sorted(graph.lanes)])
    if len(vertices) > 150:
        idx = np.linspace(0, len(vertices) - 1, 150).astype(int)
        vertices = vertices[idx]
    anchors = cloud[np.linspace(0, len(cloud) - 1, 3).astype(int)]
    sub = cloud[np.linspace(0, len(cloud) - 1, min(len(cloud), 40)).astype(int)]

    best = None
    thetas = np.radians(np.arange(-theta_window_deg, theta_window_deg + 0.5, 1.0))
    a_seg, d_seg, len2_seg = segs
    for theta in thetas:
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        rot_sub = sub @ rot.T
        rot_anchors = anchors @ rot.T
        candidates = [np.zeros(2)]
        for anchor in rot_anchors:
            delta = vertices - anchor
            near = delta[(delta**2).sum(axis=1) <= 45.0**2]
            candidates.extend(near)
        cand = np.array(candidates)
        # dedupe on a 3 m grid: nearby vertices seed identical basins
        _, keep = np.unique(np.round(cand / 3.0).astype(int), axis=0,
                            return_index=True)
        cand = cand[np.sort(keep)]
        moved = (rot_sub[None, :, :] + cand[:, None, :]).reshape(-1, 2)
        _, _, dist = _nearest_foot(moved, segs)
        scores = np.sqrt((dist.reshape(len(cand), -1) ** 2).mean(axis=1))
        i = int(np.argmin(scores))
        if best is None or scores[i] < best[0]:
            best = (float(scores[i]), theta, cand[i].astype(float))

    _, theta, t_vec = best
    # refinement: alternating assignment and closed-form translation, plus a
    # joint Gauss-Newton step on (theta, t) accepted only when it improves;
    # coarse passes run on a subsample, final polish on the full cloud
    current = SE2(theta, float(t_vec[0]), float(t_vec[1]))
    for passes, pts in ((12, sub), (4, cloud)):
        obj = _rms(current.apply(pts), segs)
        for _ in range(passes):
            prev_obj = obj
            moved = current.apply(pts)
            delta_t = _solve_translation(moved, segs)
            cand = SE2(current.theta, current.tx + float(delta_t[0]),
                       current.ty + float(delta_t[1]))
            cand_obj = _rms(cand.apply(pts), segs)
            if cand_obj < obj - 1e-14:
                current, obj = cand, cand_obj
            step = _gauss_newton_step(pts, current, segs)
            scale = 1.0
            for _ in range(5):
                cand = SE2(wrap_angle(current.theta + scale * step[0]),
                           current.tx + scale * step[1], current.ty + scale * step[2])
                cand_obj = _rms(cand.apply(pts), segs)
                if cand_obj < obj - 1e-14:
                    current, obj = cand, cand_obj
                    break
                scale *= 0.5
            if prev_obj - obj < 1e-10:
                break
    obj = _rms(current.apply(cloud), segs)
    if obj > MAX_RMS_M:
        raise AlignmentError(
            f"alignment residual {obj:.3f} m RMS exceeds {MAX_RMS_M} m", rms=obj)
    if math.hypot(current.tx, current.ty) > MAX_OFFSET_M:
        raise AlignmentError(
            f"recovered offset {math.hypot(current.tx, current.ty):.1f} m is "
            f"implausible; the log has no lane support near its own frame",
            rms=obj)
    return current


def _gauss_newton_step(cloud: np.ndarray, T: SE2, segs) -> np.ndarray:
    moved = T.apply(cloud)
    foot, n, _ = _nearest_foot(moved, segs)
    r = ((moved - foot) * n).sum(axis=1)
    c, s = math.cos(T.theta), math.sin(T.theta)
    dR = np.array([[-s, -c], [c, -s]])
    dtheta = (cloud @ dR.T * n).sum(axis=1)
    J = np.column_stack([dtheta, n[:, 0], n[:, 1]])
    JtJ = J.T @ J + 1e-9 * np.eye(3)
    try:
        return np.linalg.solve(JtJ, -J.T @ r)
    except np.linalg.LinAlgError:
        return np.zeros(3)


# ---------------------------------------------------------------------------
# snapping

HEADING_GATE_RAD = math.radians(45.0)


@dataclass(frozen=True)
class SnapResult:
    frames: tuple[tuple[float, float, float, float, float], ...]
    residuals: tuple[float, ...]
    flagged: tuple[int, ...]  # indices kept raw


def snap_to_lane_graph(track: LogTrack, graph: LaneGraph, T: SE2) -> SnapResult:
    """Project each transformed point laterally onto the nearest lane whose
    tangent is within 45 degrees of the track heading; keep raw and flag
    points whose residual exceeds half the lane width. Pedestrians are
    transformed but never snapped."""
    out = []
    residuals = []
    flagged = []
    for i, (t, x, y, yaw, v) in enumerate(track.frames):
        wx, wy, wyaw = T.apply_pose(x, y, yaw)
        if track.actor_class == "pedestrian":
            out.append((t, wx, wy, wyaw, v))
            residuals.append(0.0)
            continue
        best = None
        for lane_id in sorted(graph.lanes):
            lane = graph.lanes[lane_id]
            proj = lane.centerline.project((wx, wy))
            tangent = lane.centerline.heading_at(proj.s)
            if abs(angle_diff(tangent, wyaw)) > HEADING_GATE_RAD:
                continue
            if best is None or proj.distance < best[0]:
                best = (proj.distance, lane, proj, tangent)
        if best is None:
            out.append((t, wx, wy, wyaw, v))
            residuals.append(math.inf)
            flagged.append(i)
            continue
        dist, lane, proj, tangent = best
        residuals.append(dist)
        if dist <= lane.width / 2.0:
            foot = lane.centerline.point_at(proj.s)
            out.append((t, float(foot[0]), float(foot[1]), wyaw, v))
        else:
            out.append((t, wx, wy, wyaw, v))
            flagged.append(i)
    return SnapResult(tuple(out), tuple(residuals), tuple(flagged))


# ---------------------------------------------------------------------------
# role assignment and export

ROUTE_DECIMATION_M = 1.0


def _route_from_frames(frames) -> tuple[tuple[float, float], ...]:
    pts = [(frames[0][1], frames[0][2])]
    for _, x, y, _, _ in frames[1:]:
        if math.hypot(x - pts[-1][0], y - pts[-1][1]) >= ROUTE_DECIMATION_M:
            pts.append((x, y))
    last = (frames[-1][1], frames[-1][2])
    if math.hypot(last[0] - pts[-1][0], last[1] - pts[-1][1]) > 1e-6:
        pts.append(last)
    return tuple(pts)


@dataclass
class ConversionReport:
    transform: SE2
    rms: float
    flagged_points: int
    cav_count: int
    actor_count: int
    infra_count: int

    def text(self) -> str:
        return "\n".join([
            "conversion report",
            f"transform: theta_deg={math.degrees(self.transform.theta):.4f} "
            f"tx={self.transform.tx:.4f} ty={self.transform.ty:.4f}",
            f"rms_m: {self.rms:.4f}",
            f"flagged_points: {self.flagged_points}",
            f"cavs: {self.cav_count}",
            f"replay_actors: {self.actor_count}",
            f"infrastructure: {self.infra_count}",
        ]) + "\n"


def assign_roles(log: DrivingLog, graph: LaneGraph, T: SE2,
                 snapped: dict[str, SnapResult] | None = None
                 ) -> tuple[list[CavSpec], list[ActorSpec], list[InfraSpec], int]:
    """Designated CAVs become policy-controlled specs with track-derived
    routes; everything else replays; infrastructure poses become sharers."""
    if snapped is None:
        snapped = {tid: snap_to_lane_graph(tr, graph, T)
                   for tid, tr in log.tracks.items()}
    start, _ = log.window()
    flagged_total = sum(len(s.flagged) for s in snapped.values())

    def shifted(frames):
        return tuple((t - start, x, y, yaw, v) for t, x, y, yaw, v in frames
                     if t >= start - 1e-9)

    cavs = []
    actors = []
    for cav_id in log.cav_ids:
        frames = shifted(snapped[cav_id].frames)
        wps = _route_from_frames(frames)
        speeds = [f[4] for f in frames]
        cap = float(min(max(2.0, 1.05 * max(speeds)), 12.0))
        yaw0 = frames[0][3]
        cavs.append(CavSpec(cav_id, (wps[0][0], wps[0][1], yaw0),
                            RouteSpec(wps, cap)))
    for tid in sorted(log.tracks):
        if tid in log.cav_ids:
            continue
        track = log.tracks[tid]
        frames = shifted(snapped[tid].frames)
        actors.append(ActorSpec(tid, track.actor_class, ReplayBehavior(),
                                track.footprint,
                                ActorTrack(frames, track.actor_class)))
    infra = [replace(i, **dict(zip(("x", "y", "yaw"),
                                   T.apply_pose(i.x, i.y, i.yaw))))
             for i in log.infrastructure]
    return cavs, actors, infra, flagged_total


def export_scenario(log: DrivingLog, T: SE2, out_dir,
                    graph: LaneGraph, scenario_id: str | None = None
                    ) -> tuple[Scenario, ConversionReport]:
    """Produce a v2xpnp-bucket scenario directory plus a conversion report."""
    snapped = {tid: snap_to_lane_graph(tr, graph, T)
               for tid, tr in log.tracks.items()}
    cavs, actors, infra, flagged = assign_roles(log, graph, T, snapped)
    start, end = log.window()
    objects = tuple(
        StaticObject(o.id, *T.apply_pose(o.x, o.y, o.yaw), o.length, o.width)
        for o in log.objects)
    scenario = Scenario(
        id=scenario_id or f"r2s_{Path(str(out_dir)).name}",
        bucket="v2xpnp", category=UNCATEGORIZED,
        interactivity="dynamic_coordination", map_id=graph.map_id,
        weather="default", max_duration_s=(end - start) + 5.0,
        cavs=tuple(cavs), background_actors=tuple(actors),
        static_objects=objects, infrastructure=tuple(infra), lane_graph=graph)
    cloud = _vehicle_points(log)
    rms = _rms(T.apply(cloud), _segment_arrays(graph))
    report = ConversionReport(T, rms, flagged, len(cavs), len(actors), len(infra))
    violations = validate_scenario(scenario, graph)
    if violations:
        raise IngestionError(
            "exported scenario failed validation: "
            + "; ".join(str(v) for v in violations[:5])
            + f" | {report.text()}")
    out = Path(out_dir)
    serialize_scenario_dir(scenario, out)
    (out / "conversion.report").write_text(report.text())
    # self-contained export: the parser's fallback finds the map inside
    from .lane_graph import serialize_lane_graph
    serialize_lane_graph(graph, out / f"{graph.map_id}.lanes")
    return scenario, report


def convert_log(path, maps: MapLibrary | LaneGraph | None, out_dir,
                scenario_id: str | None = None) -> tuple[Scenario, ConversionReport]:
    log = ingest_log(path, maps if isinstance(maps, MapLibrary) else None)
    graph = resolve_graph(log, maps)
    T = estimate_alignment(log, graph)
    return export_scenario(log, T, out_dir, graph, scenario_id)


def serialize_log(log: DrivingLog, path) -> None:
    def _f(x):
        return repr(float(x))

    lines = []
    if log.map_id:
        lines.append(f"map: {log.map_id}")
    lines.append(f"rate: {_f(log.rate_hz)}")
    lines.append("cavs: " + " ".join(log.cav_ids))
    for i in log.infrastructure:
        lines.append(f"infra: {i.id} {_f(i.x)} {_f(i.y)} {_f(i.yaw)} {_f(i.sensor_range)}")
    for o in log.objects:
        lines.append(f"object: {o.id} {_f(o.x)} {_f(o.y)} {_f(o.yaw)} "
                     f"{_f(o.length)} {_f(o.width)}")
    for tid in sorted(log.tracks):
        tr = log.tracks[tid]
        lines.append(f"track {tr.actor_id} {tr.actor_class} "
                     f"{_f(tr.footprint[0])} {_f(tr.footprint[1])}")
        for frame in tr.frames:
            lines.append(" ".join(_f(v) for v in frame))
        lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")
