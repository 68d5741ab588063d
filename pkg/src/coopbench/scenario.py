"""Scenario data model, directory format, validation, and statistics.

A scenario directory holds:

    manifest                    key: value lines plus optional infra records
    routes/<cav_id>.route.xml   ordered waypoints, spawn pose, speed cap
    actors.manifest             one record per background actor
    objects.manifest            optional static oriented boxes
    tracks/<actor_id>.track     whitespace rows: t x y yaw v

Parsing is pure; all types are immutable values after construction.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Obb, Polyline, obb_overlap, disc_obb_overlap
from .lane_graph import LaneGraph, MapLibrary, parse_lane_graph

BUCKETS = ("interdrive", "interaction", "v2xpnp")
WEATHER_PRESETS = ("default", "cloudy", "night", "rain")
INTERACTIVITY_LEVELS = ("static_avoidance", "dynamic_avoidance", "dynamic_coordination")

CATEGORIES = (
    "pre_crash",
    "blocked_lane_obstacle",
    "construction_zone",
    "highway_on_ramp_merge",
    "interactive_lane_change",
    "intersection_deadlock_resolution",
    "major_minor_unsignalized_entry",
    "overtaking_two_lane",
    "pedestrian_crosswalk",
    "roundabout_navigation",
    "unprotected_left_turn",
)

CATEGORY_INTERACTIVITY = {
    "pre_crash": "dynamic_coordination",
    "blocked_lane_obstacle": "static_avoidance",
    "construction_zone": "static_avoidance",
    "highway_on_ramp_merge": "dynamic_coordination",
    "interactive_lane_change": "dynamic_coordination",
    "intersection_deadlock_resolution": "dynamic_coordination",
    "major_minor_unsignalized_entry": "dynamic_coordination",
    "overtaking_two_lane": "static_avoidance",
    "pedestrian_crosswalk": "dynamic_avoidance",
    "roundabout_navigation": "dynamic_coordination",
    "unprotected_left_turn": "dynamic_coordination",
}

ACTOR_CLASSES = ("vehicle", "pedestrian", "cyclist")
# label for non-interaction buckets whose content has no category slot
UNCATEGORIZED = "uncategorized"

DEFAULT_VEHICLE_FOOTPRINT = (4.6, 2.0)
PEDESTRIAN_RADIUS = 0.3


class ScenarioFormatError(ValueError):
    pass


class ScenarioValidationError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class RouteSpec:
    waypoints: tuple[tuple[float, float], ...]
    target_speed_cap: float

    def polyline(self) -> Polyline:
        return Polyline(self.waypoints)

    @property
    def length(self) -> float:
        return self.polyline().length


@dataclass(frozen=True)
class CavSpec:
    id: str
    spawn: tuple[float, float, float]  # x, y, yaw
    route: RouteSpec
    policy: str | None = None  # resolved at run time


@dataclass(frozen=True)
class ActorTrack:
    frames: tuple[tuple[float, float, float, float, float], ...]  # t x y yaw v
    actor_class: str = "vehicle"

    def times(self) -> np.ndarray:
        return np.array([f[0] for f in self.frames])

    def array(self) -> np.ndarray:
        return np.array(self.frames, dtype=float)


@dataclass(frozen=True)
class ReplayBehavior:
    kind: str = "replay"


@dataclass(frozen=True)
class ReactiveFollowBehavior:
    lane_id: str
    target_speed: float
    start_s: float = 0.0
    kind: str = "reactive_follow"


@dataclass(frozen=True)
class ActorSpec:
    id: str
    actor_class: str
    behavior: ReplayBehavior | ReactiveFollowBehavior
    footprint: tuple[float, float]
    track: ActorTrack | None = None


@dataclass(frozen=True)
class StaticObject:
    id: str
    x: float
    y: float
    yaw: float
    length: float
    width: float

    def obb(self) -> Obb:
        return Obb(self.x, self.y, self.yaw, self.length, self.width)


@dataclass(frozen=True)
class InfraSpec:
    """Roadside perception-sharing sensor pose."""

    id: str
    x: float
    y: float
    yaw: float
    sensor_range: float = 60.0


@dataclass(frozen=True)
class Scenario:
    id: str
    bucket: str
    category: str
    interactivity: str
    map_id: str
    weather: str
    max_duration_s: float
    cavs: tuple[CavSpec, ...]
    background_actors: tuple[ActorSpec, ...] = ()
    static_objects: tuple[StaticObject, ...] = ()
    infrastructure: tuple[InfraSpec, ...] = ()
    lane_graph: LaneGraph | None = field(default=None, compare=False)

    def with_lane_graph(self, graph: LaneGraph) -> "Scenario":
        return replace(self, lane_graph=graph)

    def cav(self, cav_id: str) -> CavSpec:
        for c in self.cavs:
            if c.id == cav_id:
                return c
        raise KeyError(cav_id)


@dataclass(frozen=True)
class ScenarioStats:
    cav_count: int
    mean_route_length_m: float
    mean_cumulative_heading_change_deg: float
    background_actor_count: int
    infrastructure_count: int = 0


@dataclass(frozen=True)
class Violation:
    rule: str
    entity: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.entity}: {self.message}"


def actor_spawn_pose(actor: ActorSpec, graph: LaneGraph | None) -> tuple[float, float, float, float]:
    """(x, y, yaw, v) of the actor at tick 0."""
    if isinstance(actor.behavior, ReplayBehavior):
        if actor.track is None or not actor.track.frames:
            raise ScenarioValidationError(f"actor {actor.id}: replay behavior without track")
        t0, x, y, yaw, v = actor.track.frames[0]
        return x, y, yaw, v
    beh = actor.behavior
    if graph is None or beh.lane_id not in graph.lanes:
        raise ScenarioValidationError(f"actor {actor.id}: lane {beh.lane_id} unresolved")
    lane = graph.lanes[beh.lane_id]
    p = lane.centerline.point_at(beh.start_s)
    yaw = lane.centerline.heading_at(beh.start_s)
    return float(p[0]), float(p[1]), yaw, beh.target_speed


def _spawn_footprints(s: Scenario, graph: LaneGraph | None):
    """Footprint shapes of every spawned entity at tick 0."""
    shapes = []
    for cav in s.cavs:
        x, y, yaw = cav.spawn
        shapes.append((cav.id, Obb(x, y, yaw, *DEFAULT_VEHICLE_FOOTPRINT), "vehicle"))
    for actor in s.background_actors:
        try:
            x, y, yaw, _ = actor_spawn_pose(actor, graph)
        except ScenarioValidationError:
            continue
        if actor.actor_class == "pedestrian":
            shapes.append((actor.id, (x, y, PEDESTRIAN_RADIUS), "pedestrian"))
        else:
            shapes.append((actor.id, Obb(x, y, yaw, *actor.footprint), actor.actor_class))
    for obj in s.static_objects:
        shapes.append((obj.id, obj.obb(), "static"))
    return shapes


def _shapes_overlap(a, b) -> bool:
    a_disc = isinstance(a, tuple)
    b_disc = isinstance(b, tuple)
    if a_disc and b_disc:
        return math.hypot(a[0] - b[0], a[1] - b[1]) < a[2] + b[2]
    if a_disc:
        return disc_obb_overlap(b, (a[0], a[1]), a[2])
    if b_disc:
        return disc_obb_overlap(a, (b[0], b[1]), b[2])
    return obb_overlap(a, b)


def validate_scenario(s: Scenario, graph: LaneGraph | None = None) -> list[Violation]:
    """All rule violations; an empty list means the scenario is well formed."""
    graph = graph or s.lane_graph
    out: list[Violation] = []

    if s.bucket not in BUCKETS:
        out.append(Violation("bucket", s.id, f"unknown bucket {s.bucket!r}"))
    if s.weather not in WEATHER_PRESETS:
        out.append(Violation("weather", s.id, f"unknown weather {s.weather!r}"))
    if s.interactivity not in INTERACTIVITY_LEVELS:
        out.append(Violation("interactivity", s.id, f"unknown level {s.interactivity!r}"))
    if s.bucket == "interaction":
        if s.category not in CATEGORIES:
            out.append(Violation("category", s.id, f"unknown category {s.category!r}"))
        elif CATEGORY_INTERACTIVITY.get(s.category) != s.interactivity:
            out.append(Violation(
                "interactivity", s.id,
                f"category {s.category} implies {CATEGORY_INTERACTIVITY[s.category]}"))
    elif s.category not in CATEGORIES and s.category != UNCATEGORIZED:
        out.append(Violation("category", s.id, f"unknown category {s.category!r}"))
    if s.max_duration_s <= 0:
        out.append(Violation("max_duration_s", s.id, "must be > 0"))
    if not s.cavs:
        out.append(Violation("cavs", s.id, "at least one CAV required"))

    ids: dict[str, str] = {}
    for kind, entity_ids in (
        ("cav", [c.id for c in s.cavs]),
        ("actor", [a.id for a in s.background_actors]),
        ("object", [o.id for o in s.static_objects]),
        ("infra", [i.id for i in s.infrastructure]),
    ):
        for eid in entity_ids:
            if eid in ids:
                out.append(Violation("unique_id", eid, f"duplicate id across {ids[eid]} and {kind}"))
            ids[eid] = kind

    for cav in s.cavs:
        out.extend(_validate_route(cav, graph))
        if graph is not None:
            lane_id, _, lateral = graph.nearest_lane(cav.spawn[:2])
            half = graph.lanes[lane_id].width / 2.0
            if abs(lateral) > half + 1e-9:
                out.append(Violation(
                    "spawn_on_lane", cav.id,
                    f"spawn {abs(lateral):.2f} m from lane {lane_id} centerline (> half width {half:.2f})"))

    for actor in s.background_actors:
        if actor.actor_class not in ACTOR_CLASSES:
            out.append(Violation("actor_class", actor.id, f"unknown class {actor.actor_class!r}"))
        if actor.footprint[0] <= 0 or actor.footprint[1] <= 0:
            out.append(Violation("footprint", actor.id, "dimensions must be > 0"))
        if isinstance(actor.behavior, ReplayBehavior):
            if actor.track is None or len(actor.track.frames) == 0:
                out.append(Violation("track", actor.id, "replay actor without track"))
            else:
                t = actor.track.times()
                if len(t) > 1 and not np.all(np.diff(t) > 0):
                    out.append(Violation("track", actor.id, "timestamps not strictly increasing"))
        else:
            if graph is None or actor.behavior.lane_id not in (graph.lanes if graph else {}):
                out.append(Violation("lane_ref", actor.id,
                                     f"lane {actor.behavior.lane_id!r} not in map"))
            if actor.behavior.target_speed <= 0:
                out.append(Violation("target_speed", actor.id, "must be > 0"))
        if graph is not None and actor.actor_class != "pedestrian":
            try:
                x, y, _, _ = actor_spawn_pose(actor, graph)
            except ScenarioValidationError:
                continue
            lane_id, _, lateral = graph.nearest_lane((x, y))
            half = graph.lanes[lane_id].width / 2.0
            if abs(lateral) > half + 1e-9:
                out.append(Violation(
                    "spawn_on_lane", actor.id,
                    f"spawn {abs(lateral):.2f} m from lane {lane_id} centerline (> half width {half:.2f})"))

    for obj in s.static_objects:
        if obj.length <= 0 or obj.width <= 0:
            out.append(Violation("footprint", obj.id, "dimensions must be > 0"))

    shapes = _spawn_footprints(s, graph)
    for i in range(len(shapes)):
        for j in range(i + 1, len(shapes)):
            ia, sa, _ = shapes[i]
            ib, sb, _ = shapes[j]
            if _shapes_overlap(sa, sb):
                out.append(Violation("spawn_overlap", f"{ia}+{ib}",
                                     "footprints overlap at tick 0"))
    return out


def _validate_route(cav: CavSpec, graph: LaneGraph | None) -> list[Violation]:
    out: list[Violation] = []
    wps = cav.route.waypoints
    if len(wps) < 2:
        out.append(Violation("route", cav.id, "route needs >= 2 waypoints"))
        return out
    if cav.route.target_speed_cap <= 0:
        out.append(Violation("route", cav.id, "target_speed_cap must be > 0"))
    arc = 0.0
    for k in range(len(wps) - 1):
        d = math.hypot(wps[k + 1][0] - wps[k][0], wps[k + 1][1] - wps[k][1])
        if d <= 0:
            out.append(Violation("route", cav.id, f"waypoints {k} and {k + 1} coincide"))
        arc += d
    if arc <= 0:
        out.append(Violation("route", cav.id, "total arc length must be > 0"))
    if graph is not None:
        for k, (x, y) in enumerate(wps):
            lane_id, _, lateral = graph.nearest_lane((x, y))
            half = graph.lanes[lane_id].width / 2.0
            if abs(lateral) > half + 1e-9:
                out.append(Violation(
                    "route_on_lane", cav.id,
                    f"waypoint {k} is {abs(lateral):.2f} m from lane {lane_id} (> half width {half:.2f})"))
    return out


def scenario_statistics(s: Scenario) -> ScenarioStats:
    """Per-scenario structural statistics. Actor count excludes CAVs and infra."""
    lengths = []
    heading_changes = []
    for cav in s.cavs:
        poly = cav.route.polyline()
        lengths.append(poly.length)
        heading_changes.append(poly.cumulative_heading_change_deg())
    return ScenarioStats(
        cav_count=len(s.cavs),
        mean_route_length_m=float(np.mean(lengths)) if lengths else 0.0,
        mean_cumulative_heading_change_deg=float(np.mean(heading_changes)) if heading_changes else 0.0,
        background_actor_count=len(s.background_actors),
        infrastructure_count=len(s.infrastructure),
    )


# ---------------------------------------------------------------------------
# directory serialization

def serialize_scenario_dir(s: Scenario, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    lines = [
        f"id: {s.id}",
        f"bucket: {s.bucket}",
        f"category: {s.category}",
        f"interactivity: {s.interactivity}",
        f"map_id: {s.map_id}",
        f"weather: {s.weather}",
        f"max_duration_s: {_fmt(s.max_duration_s)}",
    ]
    for infra in s.infrastructure:
        lines.append(f"infra: {infra.id} {_fmt(infra.x)} {_fmt(infra.y)} "
                     f"{_fmt(infra.yaw)} {_fmt(infra.sensor_range)}")
    (root / "manifest").write_text("\n".join(lines) + "\n")

    routes = root / "routes"
    routes.mkdir(exist_ok=True)
    for cav in s.cavs:
        el = ET.Element("route", {
            "cav_id": cav.id,
            "spawn_x": _fmt(cav.spawn[0]),
            "spawn_y": _fmt(cav.spawn[1]),
            "spawn_yaw": _fmt(cav.spawn[2]),
            "speed_cap": _fmt(cav.route.target_speed_cap),
        })
        for x, y in cav.route.waypoints:
            ET.SubElement(el, "waypoint", {"x": _fmt(x), "y": _fmt(y), "z": "0"})
        tree = ET.ElementTree(el)
        ET.indent(tree)
        tree.write(routes / f"{cav.id}.route.xml", encoding="unicode")

    actor_lines = []
    tracks_dir = root / "tracks"
    for actor in s.background_actors:
        L, W = actor.footprint
        if isinstance(actor.behavior, ReplayBehavior):
            actor_lines.append(f"{actor.id} {actor.actor_class} replay {_fmt(L)} {_fmt(W)}")
            tracks_dir.mkdir(exist_ok=True)
            rows = [" ".join(_fmt(v) for v in frame) for frame in actor.track.frames]
            (tracks_dir / f"{actor.id}.track").write_text("\n".join(rows) + "\n")
        else:
            b = actor.behavior
            actor_lines.append(
                f"{actor.id} {actor.actor_class} reactive_follow {b.lane_id} "
                f"{_fmt(b.target_speed)} {_fmt(b.start_s)} {_fmt(L)} {_fmt(W)}")
    (root / "actors.manifest").write_text("\n".join(actor_lines) + ("\n" if actor_lines else ""))

    if s.static_objects:
        obj_lines = [
            f"{o.id} {_fmt(o.x)} {_fmt(o.y)} {_fmt(o.yaw)} {_fmt(o.length)} {_fmt(o.width)}"
            for o in s.static_objects
        ]
        (root / "objects.manifest").write_text("\n".join(obj_lines) + "\n")


def parse_scenario_dir(path, maps: MapLibrary | LaneGraph | None = None,
                       validate: bool = True) -> Scenario:
    """Parse a scenario directory and validate it against its lane graph.

    The lane graph is resolved from `maps`, or from a `maps/` directory next
    to the scenario directory, or from `<map_id>.lanes` inside it.
    """
    root = Path(path)
    manifest_path = root / "manifest"
    if not manifest_path.exists():
        raise ScenarioFormatError(f"{root}: missing manifest")

    fields: dict[str, str] = {}
    infra: list[InfraSpec] = []
    for ln, raw in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ScenarioFormatError(f"{manifest_path}:{ln}: expected 'key: value'")
        key, value = line.split(":", 1)
        key, value = key.strip(), value.strip()
        if key == "infra":
            parts = value.split()
            if len(parts) not in (4, 5):
                raise ScenarioFormatError(f"{manifest_path}:{ln}: infra needs id x y yaw [range]")
            rng = float(parts[4]) if len(parts) == 5 else 60.0
            infra.append(InfraSpec(parts[0], float(parts[1]), float(parts[2]),
                                   float(parts[3]), rng))
        else:
            fields[key] = value

    for req in ("id", "bucket", "category", "interactivity", "map_id", "weather", "max_duration_s"):
        if req not in fields:
            raise ScenarioFormatError(f"{manifest_path}: missing field {req!r}")

    cavs = []
    routes_dir = root / "routes"
    if routes_dir.is_dir():
        for route_file in sorted(routes_dir.glob("*.route.xml")):
            cavs.append(_parse_route_file(route_file))

    actors = _parse_actor_manifest(root)
    objects = _parse_objects(root)

    graph = _resolve_graph(fields["map_id"], maps, root)
    scenario = Scenario(
        id=fields["id"],
        bucket=fields["bucket"],
        category=fields["category"],
        interactivity=fields["interactivity"],
        map_id=fields["map_id"],
        weather=fields["weather"],
        max_duration_s=float(fields["max_duration_s"]),
        cavs=tuple(cavs),
        background_actors=tuple(actors),
        static_objects=tuple(objects),
        infrastructure=tuple(infra),
        lane_graph=graph,
    )
    if validate:
        violations = validate_scenario(scenario, graph)
        if violations:
            detail = "; ".join(str(v) for v in violations[:8])
            raise ScenarioValidationError(f"{root}: {len(violations)} violation(s): {detail}")
    return scenario


def _resolve_graph(map_id, maps, root) -> LaneGraph | None:
    if isinstance(maps, LaneGraph):
        return maps
    if isinstance(maps, MapLibrary):
        return maps.get(map_id)
    for candidate in (root / f"{map_id}.lanes", root.parent / "maps" / f"{map_id}.lanes"):
        if candidate.exists():
            return parse_lane_graph(candidate, map_id)
    return None


def _parse_route_file(path: Path) -> CavSpec:
    try:
        el = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ScenarioFormatError(f"{path}: bad XML: {exc}") from exc
    if el.tag != "route":
        raise ScenarioFormatError(f"{path}: root element must be <route>")
    for attr in ("cav_id", "spawn_x", "spawn_y", "spawn_yaw", "speed_cap"):
        if attr not in el.attrib:
            raise ScenarioFormatError(f"{path}: missing attribute {attr!r}")
    waypoints = []
    for wp in el.findall("waypoint"):
        waypoints.append((float(wp.get("x")), float(wp.get("y"))))
    return CavSpec(
        id=el.get("cav_id"),
        spawn=(float(el.get("spawn_x")), float(el.get("spawn_y")), float(el.get("spawn_yaw"))),
        route=RouteSpec(tuple(waypoints), float(el.get("speed_cap"))),
    )


def _parse_actor_manifest(root: Path) -> list[ActorSpec]:
    path = root / "actors.manifest"
    actors: list[ActorSpec] = []
    if not path.exists():
        return actors
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 5:
            raise ScenarioFormatError(f"{path}:{ln}: short actor record")
        actor_id, cls, behavior = parts[0], parts[1], parts[2]
        if behavior == "replay":
            if len(parts) != 5:
                raise ScenarioFormatError(f"{path}:{ln}: replay record needs 5 fields")
            footprint = (float(parts[3]), float(parts[4]))
            track = _parse_track(root / "tracks" / f"{actor_id}.track", cls)
            actors.append(ActorSpec(actor_id, cls, ReplayBehavior(), footprint, track))
        elif behavior == "reactive_follow":
            if len(parts) != 8:
                raise ScenarioFormatError(f"{path}:{ln}: reactive_follow record needs 8 fields")
            beh = ReactiveFollowBehavior(parts[3], float(parts[4]), float(parts[5]))
            footprint = (float(parts[6]), float(parts[7]))
            actors.append(ActorSpec(actor_id, cls, beh, footprint, None))
        else:
            raise ScenarioFormatError(f"{path}:{ln}: unknown behavior {behavior!r}")
    return actors


def _parse_track(path: Path, actor_class: str) -> ActorTrack:
    if not path.exists():
        raise ScenarioFormatError(f"missing track file {path}")
    frames = []
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 5:
            raise ScenarioFormatError(f"{path}:{ln}: track rows are 't x y yaw v'")
        frames.append(tuple(float(v) for v in vals))
    if not frames:
        raise ScenarioFormatError(f"{path}: empty track")
    return ActorTrack(tuple(frames), actor_class)


def _parse_objects(root: Path) -> list[StaticObject]:
    path = root / "objects.manifest"
    objects: list[StaticObject] = []
    if not path.exists():
        return objects
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ScenarioFormatError(f"{path}:{ln}: object rows are 'id x y yaw length width'")
        objects.append(StaticObject(parts[0], *(float(v) for v in parts[1:])))
    return objects
