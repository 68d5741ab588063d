"""Structured scenario generation: proposal, instantiation, screening.

The proposer emits abstract schemas (topology intent, per-CAV maneuvers,
timing constraints, background roles); instantiation expands them into
lane-legal routes and concrete spawns on a matching built-in map and must
produce scenarios that validate cleanly. Candidate pools then pass through
fingerprint plus route-similarity duplicate filtering and a constant
velocity time-to-collision difficulty screen.

A deterministic per-category template proposer ships built in; an external
proposer can be attached over HTTP and is schema-validated with retry
diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .geometry import Polyline, discrete_frechet
from .lane_graph import MapLibrary
from .maps import MapCatalog, builtin_maps, route_waypoints
from .scenario import (ActorSpec, ActorTrack, CavSpec, InfraSpec,
                       ReactiveFollowBehavior, ReplayBehavior, RouteSpec,
                       Scenario, StaticObject, CATEGORIES,
                       CATEGORY_INTERACTIVITY, validate_scenario)

TOPOLOGY_BY_CATEGORY = {
    "pre_crash": "intersection_4way",
    "blocked_lane_obstacle": "straight_2lane",
    "construction_zone": "straight_2lane",
    "highway_on_ramp_merge": "highway_ramp",
    "interactive_lane_change": "straight_2lane",
    "intersection_deadlock_resolution": "intersection_4way",
    "major_minor_unsignalized_entry": "t_junction",
    "overtaking_two_lane": "straight_2lane",
    "pedestrian_crosswalk": "straight_2lane",
    "roundabout_navigation": "roundabout",
    "unprotected_left_turn": "intersection_4way",
}

# each category cycles 3 cloudy, 3 night, 2 default, 2 rain
WEATHER_CYCLE = ("cloudy", "cloudy", "cloudy", "night", "night", "night",
                 "default", "default", "rain", "rain")

MANEUVER_INTENTS = ("follow", "swerve", "lane_change", "straight", "left_turn",
                    "right_turn", "merge", "roundabout_1", "roundabout_2",
                    "roundabout_3")

ROLE_KINDS = ("crossing_pedestrian", "lead_vehicle", "oncoming_vehicle",
              "lane_blockage", "cone_row", "blind_corner_walls", "rsu")


class ProposalError(RuntimeError):
    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class InstantiationError(RuntimeError):
    pass


class InfeasibleError(InstantiationError):
    pass


@dataclass(frozen=True)
class Maneuver:
    approach: str
    intent: str


@dataclass(frozen=True)
class TimingConstraint:
    a: int  # CAV slot indices
    b: int
    min_gap_s: float


@dataclass(frozen=True)
class ActorRole:
    role: str
    params: tuple = ()


@dataclass(frozen=True)
class ScenarioSchema:
    category: str
    topology: str
    maneuvers: tuple[Maneuver, ...]
    constraints: tuple[TimingConstraint, ...] = ()
    actor_roles: tuple[ActorRole, ...] = ()
    weather: str = "default"

    def as_dict(self) -> dict:
        return {
            "category": self.category,
            "topology": self.topology,
            "maneuvers": [asdict(m) for m in self.maneuvers],
            "constraints": [asdict(c) for c in self.constraints],
            "actor_roles": [{"role": r.role, "params": list(r.params)}
                            for r in self.actor_roles],
            "weather": self.weather,
        }


def validate_schema_dict(d: dict) -> list[str]:
    """Field-level diagnostics; empty when the dict is a valid schema."""
    problems = []
    if not isinstance(d, dict):
        return ["schema must be an object"]
    cat = d.get("category")
    if cat not in CATEGORIES:
        problems.append(f"category: unknown value {cat!r}")
    topo = d.get("topology")
    if cat in TOPOLOGY_BY_CATEGORY and topo != TOPOLOGY_BY_CATEGORY[cat]:
        problems.append(f"topology: {topo!r} incompatible with category {cat!r}")
    maneuvers = d.get("maneuvers")
    if not isinstance(maneuvers, list) or not maneuvers:
        problems.append("maneuvers: at least one CAV maneuver required")
    else:
        for i, m in enumerate(maneuvers):
            if not isinstance(m, dict) or "approach" not in m or "intent" not in m:
                problems.append(f"maneuvers[{i}]: needs approach and intent")
            elif m["intent"] not in MANEUVER_INTENTS:
                problems.append(f"maneuvers[{i}].intent: unknown {m['intent']!r}")
    n_cavs = len(maneuvers) if isinstance(maneuvers, list) else 0
    for i, c in enumerate(d.get("constraints", [])):
        if not isinstance(c, dict):
            problems.append(f"constraints[{i}]: must be an object")
            continue
        for endp in ("a", "b"):
            v = c.get(endp)
            if not isinstance(v, int) or not (0 <= v < n_cavs):
                problems.append(
                    f"constraints[{i}].{endp}: must reference a declared CAV slot")
        if not isinstance(c.get("min_gap_s"), (int, float)):
            problems.append(f"constraints[{i}].min_gap_s: must be a number")
    for i, r in enumerate(d.get("actor_roles", [])):
        if not isinstance(r, dict) or r.get("role") not in ROLE_KINDS:
            problems.append(f"actor_roles[{i}].role: unknown role")
    if d.get("weather") not in ("default", "cloudy", "night", "rain"):
        problems.append(f"weather: unknown preset {d.get('weather')!r}")
    return problems


def schema_from_dict(d: dict) -> ScenarioSchema:
    problems = validate_schema_dict(d)
    if problems:
        raise ProposalError("invalid schema: " + "; ".join(problems), raw_response=d)
    return ScenarioSchema(
        category=d["category"],
        topology=d["topology"],
        maneuvers=tuple(Maneuver(m["approach"], m["intent"]) for m in d["maneuvers"]),
        constraints=tuple(TimingConstraint(c["a"], c["b"], float(c["min_gap_s"]))
                          for c in d.get("constraints", [])),
        actor_roles=tuple(ActorRole(r["role"], tuple(r.get("params", ())))
                          for r in d.get("actor_roles", [])),
        weather=d.get("weather", "default"),
    )


# ---------------------------------------------------------------------------
# template proposer

def _template_schema(category: str, k: int, stream) -> ScenarioSchema:
    topo = TOPOLOGY_BY_CATEGORY[category]
    weather = WEATHER_CYCLE[k % len(WEATHER_CYCLE)]
    roles: list[ActorRole] = []
    constraints: list[TimingConstraint] = []
    if category == "pre_crash":
        maneuvers = [Maneuver("e", "straight"), Maneuver("n", "straight")]
        roles.append(ActorRole("blind_corner_walls"))
        roles.append(ActorRole("rsu", (0.0, 12.0)))
        constraints.append(TimingConstraint(0, 1, float(stream.uniform(0.0, 1.0))))
    elif category == "blocked_lane_obstacle":
        n = int(stream.integers(2, 4))
        maneuvers = [Maneuver("east", "swerve")]
        maneuvers += [Maneuver("east", "follow")] * (n - 1)
        roles.append(ActorRole("lane_blockage", (float(stream.uniform(0.0, 30.0)),)))
        constraints.append(TimingConstraint(0, 1, 1.5))
    elif category == "construction_zone":
        n = int(stream.integers(2, 4))
        maneuvers = [Maneuver("east", "swerve")] + [Maneuver("east", "follow")] * (n - 1)
        roles.append(ActorRole("cone_row", (float(stream.uniform(-10.0, 20.0)),
                                            int(stream.integers(4, 8)))))
        roles.append(ActorRole("lead_vehicle", ("w0", float(stream.uniform(4.0, 6.0)))))
    elif category == "highway_on_ramp_merge":
        maneuvers = [Maneuver("ramp:merge", "merge"),
                     Maneuver("main_outer:follow", "follow")]
        if stream.random() < 0.5:
            maneuvers.append(Maneuver("main:follow", "follow"))
        constraints.append(TimingConstraint(0, 1, float(stream.uniform(0.5, 2.0))))
    elif category == "interactive_lane_change":
        maneuvers = [Maneuver("east", "lane_change"),
                     Maneuver("east_outer", "follow")]
        if stream.random() < 0.5:
            maneuvers.append(Maneuver("east", "follow"))
        constraints.append(TimingConstraint(0, 1, float(stream.uniform(0.8, 1.6))))
    elif category == "intersection_deadlock_resolution":
        arms = ["e", "n", "w", "s"]
        n = int(stream.integers(3, 5))
        maneuvers = [Maneuver(a, "straight") for a in arms[:n]]
        for i in range(1, n):
            constraints.append(TimingConstraint(i - 1, i, float(stream.uniform(0.6, 1.2))))
    elif category == "major_minor_unsignalized_entry":
        minor = stream.choice(["left_turn", "right_turn"])
        maneuvers = [Maneuver("n", str(minor)), Maneuver("e", "straight")]
        if stream.random() < 0.5:
            maneuvers.append(Maneuver("w", "straight"))
        constraints.append(TimingConstraint(0, 1, float(stream.uniform(0.5, 1.5))))
    elif category == "overtaking_two_lane":
        maneuvers = [Maneuver("east", "swerve")]
        roles.append(ActorRole("lane_blockage", (float(stream.uniform(0.0, 25.0)),)))
        roles.append(ActorRole("oncoming_vehicle", ("w0", float(stream.uniform(5.0, 7.0)))))
        if stream.random() < 0.4:
            maneuvers.append(Maneuver("east_outer", "follow"))
    elif category == "pedestrian_crosswalk":
        n = int(stream.integers(1, 3))
        maneuvers = [Maneuver("east", "follow")] * n
        if n > 1:
            constraints.append(TimingConstraint(0, 1, 1.2))
        roles.append(ActorRole("crossing_pedestrian",
                               (float(stream.uniform(1.0, 1.8)),)))
        roles.append(ActorRole("rsu", (60.0, 10.0)))
    elif category == "roundabout_navigation":
        arms = ["s", "e", "n", "w"]
        n = int(stream.integers(2, 4))
        start = int(stream.integers(0, 4))
        maneuvers = [Maneuver(arms[(start + i) % 4], f"roundabout_{int(stream.integers(1, 4))}")
                     for i in range(n)]
        for i in range(1, n):
            constraints.append(TimingConstraint(i - 1, i, float(stream.uniform(0.5, 1.0))))
    elif category == "unprotected_left_turn":
        maneuvers = [Maneuver("e", "left_turn"), Maneuver("w", "straight")]
        if stream.random() < 0.5:
            maneuvers.append(Maneuver("w", "straight"))
        roles.append(ActorRole("oncoming_vehicle", ("w_in", float(stream.uniform(5.0, 7.0)))))
        constraints.append(TimingConstraint(0, 1, float(stream.uniform(0.4, 1.2))))
    else:
        raise ProposalError(f"no template for category {category!r}")
    return ScenarioSchema(category, topo, tuple(maneuvers), tuple(constraints),
                          tuple(roles), weather)


def propose(category: str, count: int, proposer: str = "template",
            seed: int = 0) -> list[ScenarioSchema]:
    """`template` (built-in, deterministic per seed) or `external:<url>`."""
    if category not in CATEGORIES:
        raise ProposalError(f"unknown category {category!r}")
    if proposer == "template":
        out = []
        for k in range(count):
            stream = rngmod.substream(seed, "template", category, k)
            out.append(_template_schema(category, k, stream))
        return out
    if proposer.startswith("external:"):
        return _propose_external(proposer.split(":", 1)[1], category, count)
    raise ProposalError(f"unknown proposer {proposer!r}")


EXTERNAL_RETRIES = 2


def _propose_external(url: str, category: str, count: int) -> list[ScenarioSchema]:
    token = os.environ.get("COOPBENCH_PROPOSER_TOKEN", "")
    diagnostics: list[str] = []
    payload = {
        "category": category,
        "count": count,
        "schema_grammar": {
            "maneuver_intents": MANEUVER_INTENTS,
            "actor_roles": ROLE_KINDS,
            "topology": TOPOLOGY_BY_CATEGORY[category],
        },
    }
    last_raw = None
    for attempt in range(1 + EXTERNAL_RETRIES):
        body = dict(payload)
        if diagnostics:
            body["diagnostics"] = diagnostics
        req = urllib.request.Request(
            url, data=json.dumps(body).encode(),
            headers={"Content-Type": "application/json",
                     **({"Authorization": f"Bearer {token}"} if token else {})})
        try:
            with urllib.request.urlopen(req, timeout=60.0) as resp:
                raw = resp.read().decode()
        except (urllib.error.URLError, OSError) as exc:
            raise ProposalError(f"external proposer unreachable: {exc}") from exc
        last_raw = raw
        try:
            data = json.loads(raw)
            schemas = [schema_from_dict(s) for s in data["schemas"]]
            if len(schemas) < count:
                raise ProposalError(
                    f"proposer returned {len(schemas)} schemas, wanted {count}",
                    raw_response=raw)
            return schemas[:count]
        except ProposalError as exc:
            diagnostics.append(str(exc))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            diagnostics.append(f"malformed response: {exc}")
    raise ProposalError(
        "external proposer failed validation after retries: " + "; ".join(diagnostics),
        raw_response=last_raw)


# ---------------------------------------------------------------------------
# instantiation

def _swerve_waypoints(x0, x1, x_obs, y_from=-1.75, y_via=1.75):
    pts = [(x0, y_from)]
    for x in np.arange(x0 + 10.0, x_obs - 16.0, 10.0):
        pts.append((float(x), y_from))
    pts += [(x_obs - 14.0, y_from), (x_obs - 5.0, y_via), (x_obs + 6.0, y_via),
            (x_obs + 15.0, y_from)]
    for x in np.arange(x_obs + 24.0, x1, 10.0):
        pts.append((float(x), y_from))
    pts.append((x1, y_from))
    return pts


def _lane_change_waypoints(x0, x1, xc, y_from=-1.75, y_to=-5.25):
    pts = [(x0, y_from)]
    for x in np.arange(x0 + 10.0, xc - 10.0, 10.0):
        pts.append((float(x), y_from))
    pts += [(xc - 8.0, y_from), (xc + 8.0, y_to)]
    for x in np.arange(xc + 18.0, x1, 10.0):
        pts.append((float(x), y_to))
    pts.append((x1, y_to))
    return pts


def _gap_to_offset(gap_s: float, cap: float) -> float:
    return max(8.0, gap_s * cap + 6.0)


class MapRegionLibrary:
    """Built-in maps indexed by topology intent."""

    def __init__(self, library: MapLibrary | None = None,
                 catalogs: dict[str, MapCatalog] | None = None):
        if library is None or catalogs is None:
            library, catalogs = builtin_maps()
        self.library = library
        self.catalogs = catalogs

    def match(self, topology: str) -> MapCatalog:
        for cat in self.catalogs.values():
            if cat.topology == topology:
                return cat
        raise InstantiationError(f"no map region matches topology {topology!r}")


MAX_REPAIR_ROUNDS = 15


def instantiate(schema: ScenarioSchema, regions: MapRegionLibrary | None = None,
                seed: int = 0, scenario_id: str | None = None) -> Scenario:
    """Expand a schema into a concrete validated Scenario.

    Spawn conflicts are repaired by a bounded search that pushes the later
    entity further back along its approach; exhaustion raises Infeasible.
    """
    regions = regions or MapRegionLibrary()
    catalog = regions.match(schema.topology)
    graph = regions.library.get(catalog.map_id)
    stream = rngmod.substream(seed, "instantiate", schema.category)
    cap = 8.0

    # timing constraints become staggered start offsets along the approaches
    offsets = [0.0] * len(schema.maneuvers)
    for c in schema.constraints:
        offsets[max(c.a, c.b)] = max(offsets[max(c.a, c.b)],
                                     offsets[min(c.a, c.b)] + _gap_to_offset(c.min_gap_s, cap))
    extra = [0.0] * len(schema.maneuvers)
    actor_extra: dict[int, float] = {}
    lane_change_xc = float(stream.uniform(-20.0, 20.0))
    oncoming_start = {idx: float(stream.uniform(16.0, 44.0))
                      for idx, r in enumerate(schema.actor_roles)
                      if r.role == "oncoming_vehicle"}
    ped_start = {idx: float(stream.uniform(8.0, 14.0))
                 for idx, r in enumerate(schema.actor_roles)
                 if r.role == "crossing_pedestrian"}

    last_err = "unsatisfied spawn constraints"
    for _ in range(MAX_REPAIR_ROUNDS):
        cavs = _build_cavs(schema, catalog, graph, offsets, extra, cap,
                           lane_change_xc)
        actors, objects, infra = _build_roles(schema, catalog, graph,
                                              oncoming_start, ped_start,
                                              actor_extra)
        scen_id = scenario_id or f"{schema.category}_{seed:04d}"
        scenario = Scenario(
            id=scen_id, bucket="interaction", category=schema.category,
            interactivity=CATEGORY_INTERACTIVITY[schema.category],
            map_id=catalog.map_id, weather=schema.weather, max_duration_s=60.0,
            cavs=tuple(cavs), background_actors=tuple(actors),
            static_objects=tuple(objects), infrastructure=tuple(infra),
            lane_graph=graph)
        violations = validate_scenario(scenario, graph)
        overlaps = [v for v in violations if v.rule == "spawn_overlap"]
        if not violations:
            return scenario
        if not overlaps:
            raise InstantiationError(
                f"{scen_id}: instantiation produced an invalid scenario: "
                + "; ".join(str(v) for v in violations[:5]))
        last_err = str(overlaps[0])
        for v in overlaps:
            ids = v.entity.split("+")
            _push_back(ids, extra, actor_extra, schema, actors)
    raise InfeasibleError(
        f"{schema.category}: spawn constraints unsatisfiable after "
        f"{MAX_REPAIR_ROUNDS} repair rounds ({last_err})")


def _push_back(ids, extra, actor_extra, schema, actors) -> None:
    """Shift the later entity of an overlapping pair 8 m up its approach."""
    cav_slots = [int(i.split("_")[1]) - 1 for i in ids if i.startswith("cav_")]
    actor_ids = [i for i in ids if not i.startswith("cav_")]
    if len(cav_slots) == 2:
        slot = max(cav_slots, key=lambda s: extra[s])
        extra[slot] += 8.0
    elif actor_ids:
        name = actor_ids[0]
        for k, a in enumerate(actors):
            if a.id == name:
                actor_extra[k] = actor_extra.get(k, 0.0) + 8.0
                return
        if cav_slots:
            extra[cav_slots[0]] += 8.0


def _build_cavs(schema, catalog, graph, offsets, extra, cap, lane_change_xc):
    per_approach_count: dict[str, int] = {}
    shared_exit_rank: dict[int, int] = {}
    order = sorted(range(len(schema.maneuvers)), key=lambda i: offsets[i] + extra[i])
    for rank, i in enumerate(order):
        shared_exit_rank[i] = rank
    x_obs = None
    for r in schema.actor_roles:
        if r.role in ("lane_blockage", "cone_row"):
            x_obs = float(r.params[0]) if r.params else 10.0

    cavs: list[CavSpec] = []
    for slot, m in enumerate(schema.maneuvers):
        n_prior = per_approach_count.get(m.approach, 0)
        per_approach_count[m.approach] = n_prior + 1
        if n_prior >= catalog.slots_per_approach:
            raise InfeasibleError(
                f"approach {m.approach!r} has {catalog.slots_per_approach} spawn "
                f"slots, schema wants more")
        start_s = offsets[slot] + extra[slot] + 14.0 * n_prior
        if m.intent == "swerve":
            xo = x_obs if x_obs is not None else 10.0
            wps = _swerve_waypoints(-140.0 + start_s, 120.0, xo)
        elif m.intent == "lane_change":
            y_from = -1.75 if m.approach == "east" else -5.25
            y_to = -5.25 if y_from == -1.75 else -1.75
            wps = _lane_change_waypoints(-140.0 + start_s, 120.0, lane_change_xc,
                                         y_from, y_to)
        else:
            key = m.approach if ":" in m.approach else f"{m.approach}:{m.intent}"
            if key not in catalog.maneuvers:
                key2 = f"{m.approach}:follow"
                if key2 not in catalog.maneuvers:
                    raise InstantiationError(
                        f"maneuver {m.intent!r} from {m.approach!r} not available "
                        f"on {catalog.map_id}")
                key = key2
            wps = route_waypoints(graph, catalog.maneuvers[key][0],
                                  start_s=start_s,
                                  end_trim=16.0 * shared_exit_rank[slot])
        if len(wps) < 2:
            raise InfeasibleError(f"slot {slot}: approach too short for offset {start_s}")
        yaw = math.atan2(wps[1][1] - wps[0][1], wps[1][0] - wps[0][0])
        cavs.append(CavSpec(f"cav_{slot + 1}", (wps[0][0], wps[0][1], yaw),
                            RouteSpec(tuple(wps), cap)))
    return cavs

def _build_roles(schema, catalog, graph, oncoming_start, ped_start, actor_extra):
    actors: list[ActorSpec] = []
    objects: list[StaticObject] = []
    infra: list[InfraSpec] = []
    for idx, role in enumerate(schema.actor_roles):
        if role.role == "lane_blockage":
            xo = float(role.params[0]) if role.params else 10.0
            objects.append(StaticObject(f"block_{idx}", xo, -1.75, 0.0, 4.6, 2.0))
        elif role.role == "cone_row":
            xo = float(role.params[0]) if role.params else 0.0
            n = int(role.params[1]) if len(role.params) > 1 else 5
            for k in range(n):
                objects.append(StaticObject(f"cone_{idx}_{k}", xo + 4.0 * k,
                                            -1.3, 0.0, 0.5, 0.5))
        elif role.role == "blind_corner_walls":
            objects.append(StaticObject(f"wall_h_{idx}", -35.0, -4.4, 0.0, 58.0, 1.6))
            objects.append(StaticObject(f"wall_v_{idx}", -4.4, -35.0, 0.0, 1.6, 58.0))
        elif role.role == "lead_vehicle":
            lane = str(role.params[0]) if role.params else "e0"
            speed = float(role.params[1]) if len(role.params) > 1 else 5.0
            if lane not in graph.lanes:
                raise InstantiationError(f"lead_vehicle lane {lane!r} not on map")
            start = 60.0 + actor_extra.get(len(actors), 0.0)
            actors.append(ActorSpec(f"lead_{idx}", "vehicle",
                                    ReactiveFollowBehavior(lane, speed, start),
                                    (4.6, 2.0)))
        elif role.role == "oncoming_vehicle":
            lane = str(role.params[0]) if role.params else "w0"
            speed = float(role.params[1]) if len(role.params) > 1 else 6.0
            if lane not in graph.lanes:
                raise InstantiationError(f"oncoming lane {lane!r} not on map")
            start = oncoming_start.get(idx, 20.0) + actor_extra.get(len(actors), 0.0)
            actors.append(ActorSpec(f"onc_{idx}", "vehicle",
                                    ReactiveFollowBehavior(lane, speed, start),
                                    (4.6, 2.0)))
        elif role.role == "crossing_pedestrian":
            speed = float(role.params[0]) if role.params else 1.4
            cw_x = catalog.features.get("crosswalk_x", 60.0)
            frames = []
            y0, y1 = -8.0, 8.0
            start_t = ped_start.get(idx, 10.0)
            n = int((y1 - y0) / speed / 0.2)
            for k in range(n + 1):
                t = start_t + 0.2 * k
                y = min(y0 + speed * 0.2 * k, y1)
                frames.append((t, cw_x, y, math.pi / 2, speed))
            actors.append(ActorSpec(
                f"ped_{idx}", "pedestrian", ReplayBehavior(), (0.6, 0.6),
                ActorTrack(tuple(frames), "pedestrian")))
        elif role.role == "rsu":
            x = float(role.params[0]) if role.params else 0.0
            y = float(role.params[1]) if len(role.params) > 1 else 10.0
            infra.append(InfraSpec(f"rsu_{idx}", x, y, -math.pi / 2, 60.0))
    return actors, objects, infra


# ---------------------------------------------------------------------------
# duplicate filtering

QUANT_POS = 0.5   # m
QUANT_YAW = 5.0   # deg
FRECHET_DUP_M = 2.0


def scenario_fingerprint(s: Scenario) -> str:
    h = hashlib.sha256()
    h.update(f"{s.bucket}|{s.category}|{s.weather}|{s.map_id}".encode())
    for cav in s.cavs:
        qx = round(cav.spawn[0] / QUANT_POS)
        qy = round(cav.spawn[1] / QUANT_POS)
        qyaw = round(math.degrees(cav.spawn[2]) / QUANT_YAW)
        h.update(f"cav|{qx}|{qy}|{qyaw}".encode())
        for x, y in cav.route.waypoints:
            h.update(f"{round(x / QUANT_POS)}|{round(y / QUANT_POS)};".encode())
    for actor in s.background_actors:
        h.update(f"actor|{actor.actor_class}|{actor.behavior.kind}".encode())
    for obj in s.static_objects:
        h.update(f"obj|{round(obj.x / QUANT_POS)}|{round(obj.y / QUANT_POS)}".encode())
    return h.hexdigest()[:24]


def _resampled_route(cav: CavSpec, n: int = 24) -> np.ndarray:
    line = cav.route.polyline()
    ss = np.linspace(0.0, line.length, n)
    return np.array([line.point_at(s) for s in ss])


def _routes_near_duplicate(a: Scenario, b: Scenario) -> bool:
    if len(a.cavs) != len(b.cavs):
        return False
    for ca, cb in zip(a.cavs, b.cavs):
        if discrete_frechet(_resampled_route(ca), _resampled_route(cb)) >= FRECHET_DUP_M:
            return False
    return True


def duplicate_filter(pool: list[Scenario]) -> list[Scenario]:
    """Drop later members with identical fingerprints or near-identical
    per-CAV routes (discrete Frechet under 2 m over the coupling)."""
    survivors: list[Scenario] = []
    seen: set[str] = set()
    for s in pool:
        fp = scenario_fingerprint(s)
        if fp in seen:
            continue
        if any(_routes_near_duplicate(s, kept) for kept in survivors):
            continue
        seen.add(fp)
        survivors.append(s)
    return survivors


# ---------------------------------------------------------------------------
# difficulty screening

@dataclass(frozen=True)
class DifficultyBand:
    min_ttc_low: float = 0.5
    min_ttc_high: float = 4.0

    def __post_init__(self):
        if not (0 < self.min_ttc_low < self.min_ttc_high):
            raise ValueError("band must satisfy 0 < low < high")


SCREEN_DT = 0.05
SCREEN_CONTACT_DIST = 0.0  # center coincidence, found analytically per tick


def _constant_velocity_paths(s: Scenario, horizon_s: float):
    """Tick-sampled positions of every agent under constant nominal speed."""
    n = int(horizon_s / SCREEN_DT) + 1
    paths = {}
    for cav in s.cavs:
        line = cav.route.polyline()
        v = cav.route.target_speed_cap
        pts = np.array([line.point_at(min(v * k * SCREEN_DT, line.length))
                        for k in range(n)])
        paths[cav.id] = pts
    for actor in s.background_actors:
        if isinstance(actor.behavior, ReplayBehavior):
            arr = actor.track.array()
            ts = np.array([k * SCREEN_DT for k in range(n)])
            xs = np.interp(ts, arr[:, 0], arr[:, 1])
            ys = np.interp(ts, arr[:, 0], arr[:, 2])
            paths[actor.id] = np.column_stack([xs, ys])
        else:
            beh = actor.behavior
            lane = s.lane_graph.lanes[beh.lane_id]
            line = lane.centerline
            pts = np.array([
                line.point_at(min(beh.start_s + beh.target_speed * k * SCREEN_DT,
                                  line.length))
                for k in range(n)])
            paths[actor.id] = pts
    return paths


def _first_contact_time(pa: np.ndarray, pb: np.ndarray,
                        contact: float = SCREEN_CONTACT_DIST) -> float:
    """Earliest time the pair's centers close to <= contact, minimizing the
    within-tick linear relative motion analytically."""
    rel = pa - pb
    thr = contact + 1e-9
    for k in range(len(rel) - 1):
        r0 = rel[k]
        r1 = rel[k + 1]
        d = r1 - r0
        dd = float(d @ d)
        if dd < 1e-18:
            t_star = 0.0
        else:
            t_star = min(max(-float(r0 @ d) / dd, 0.0), 1.0)
        closest = r0 + t_star * d
        if math.hypot(*closest) <= thr:
            # earliest in-segment crossing of the threshold
            lo, hi = 0.0, t_star
            if math.hypot(*r0) <= thr:
                hi = 0.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if math.hypot(*(r0 + mid * d)) <= thr:
                    hi = mid
                else:
                    lo = mid
            return (k + hi) * SCREEN_DT
    return math.inf


def difficulty_screen(s: Scenario, band: DifficultyBand | None = None,
                      horizon_s: float | None = None,
                      contact_dist: float = SCREEN_CONTACT_DIST) -> tuple[bool, float]:
    """(accept, min_ttc) under a constant-velocity rollout of every agent.

    `contact_dist` is the center distance that counts as contact. The
    default 0 is the strict kinematic reading (paths must actually meet);
    pass roughly a vehicle length, e.g. 2.5, to screen organic traffic where
    exact coincidence almost never happens.
    """
    band = band or DifficultyBand()
    horizon = min(horizon_s or s.max_duration_s, 30.0)
    paths = _constant_velocity_paths(s, horizon)
    ids = sorted(paths)
    min_ttc = math.inf
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            t = _first_contact_time(paths[ids[i]], paths[ids[j]], contact_dist)
            min_ttc = min(min_ttc, t)
    accept = band.min_ttc_low <= min_ttc <= band.min_ttc_high
    return accept, min_ttc


# ---------------------------------------------------------------------------
# batch export

def export_batch(survivors: list[Scenario], out_dir,
                 screen_results: dict[str, tuple[bool, float]] | None = None) -> list[str]:
    """Serialize survivors as scenario directories plus a batch index."""
    from pathlib import Path

    from .scenario import serialize_scenario_dir
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    dirs = []
    maps_dir = out / "maps"
    maps_dir.mkdir(exist_ok=True)
    written_maps = set()
    for s in survivors:
        d = out / s.id
        serialize_scenario_dir(s, d)
        if s.lane_graph is not None and s.map_id not in written_maps:
            from .lane_graph import serialize_lane_graph
            serialize_lane_graph(s.lane_graph, maps_dir / f"{s.map_id}.lanes")
            written_maps.add(s.map_id)
        fp = scenario_fingerprint(s)
        accept, ttc = (screen_results or {}).get(s.id, (True, math.inf))
        ttc_txt = "inf" if math.isinf(ttc) else f"{ttc:.3f}"
        rows.append(f"{s.id} {fp} {ttc_txt} {'accept' if accept else 'reject'}")
        dirs.append(str(d))
    (out / "batch.index").write_text("\n".join(rows) + "\n")
    return dirs


def read_review_annotations(path) -> dict[str, bool]:
    """Manual review file: `<scenario_id> accept|reject` per line."""
    from pathlib import Path
    out = {}
    p = Path(path)
    if not p.exists():
        return out
    for ln in p.read_text().splitlines():
        parts = ln.split()
        if len(parts) == 2 and parts[1] in ("accept", "reject"):
            out[parts[0]] = parts[1] == "accept"
    return out
