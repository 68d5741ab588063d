import math

import numpy as np
import pytest

from coopbench import maps
from coopbench.scenario import (ActorSpec, ActorTrack, CavSpec,
                                ReactiveFollowBehavior, ReplayBehavior,
                                RouteSpec, Scenario, StaticObject)


@pytest.fixture(scope="session")
def map_library():
    lib, cats = maps.builtin_maps()
    return lib, cats


@pytest.fixture(scope="session")
def straight_map(map_library):
    lib, _ = map_library
    return lib.get("straight_2lane_a")


@pytest.fixture(scope="session")
def crossing_map(map_library):
    lib, _ = map_library
    return lib.get("intersection_4way_a")


def straight_route(x0=-100.0, x1=100.0, y=-1.75, cap=8.0, step=10.0):
    xs = np.arange(x0, x1 + 0.5 * step, step)
    return RouteSpec(tuple((float(x), y) for x in xs), cap)


def make_straight_scenario(graph, scen_id="straight", cap=8.0, x0=-100.0, x1=100.0,
                           actors=(), objects=(), infra=(), duration=60.0):
    route = straight_route(x0, x1, cap=cap)
    cav = CavSpec("cav_1", (x0, -1.75, 0.0), route)
    return Scenario(
        id=scen_id, bucket="interaction", category="pedestrian_crosswalk",
        interactivity="dynamic_avoidance", map_id=graph.map_id, weather="default",
        max_duration_s=duration, cavs=(cav,), background_actors=tuple(actors),
        static_objects=tuple(objects), infrastructure=tuple(infra), lane_graph=graph)


def crossing_track(x, y0, y1, speed, t_start, cls="pedestrian"):
    """Straight constant-speed track from (x, y0) to (x, y1)."""
    frames = []
    total = abs(y1 - y0)
    direction = 1.0 if y1 > y0 else -1.0
    yaw = math.pi / 2 * direction
    n = int(total / speed / 0.2) + 1
    for i in range(n + 1):
        t = t_start + i * 0.2
        y = y0 + direction * min(speed * i * 0.2, total)
        frames.append((t, x, y, yaw, speed))
    return ActorTrack(tuple(frames), cls)


def random_scenario(rng, lib_cats, idx=0):
    """A structurally valid scenario with randomized content, for round trips."""
    lib, cats = lib_cats
    catalog = cats[rng.choice(sorted(cats))]
    graph = lib.get(catalog.map_id)
    keys = sorted(catalog.maneuvers)
    n_cav = int(rng.integers(1, 4))
    cavs = []
    used = set()
    for k in range(n_cav):
        key = keys[int(rng.integers(0, len(keys)))]
        path = catalog.maneuvers[key][0]
        start_s = float(rng.uniform(0, 5)) + 12.0 * len([u for u in used if u == key])
        used.add(key)
        wps = maps.route_waypoints(graph, path, start_s=start_s)
        if len(wps) < 2:
            continue
        spawn_yaw = math.atan2(wps[1][1] - wps[0][1], wps[1][0] - wps[0][0])
        cavs.append(CavSpec(f"cav_{k + 1}", (wps[0][0], wps[0][1], spawn_yaw),
                            RouteSpec(tuple(wps), float(rng.uniform(4, 9)))))
    if not cavs:
        return None
    actors = []
    if rng.random() < 0.7:
        lane_ids = sorted(graph.lanes)
        lid = lane_ids[int(rng.integers(0, len(lane_ids)))]
        lane = graph.lanes[lid]
        s0 = float(rng.uniform(0, max(lane.centerline.length - 10, 1)))
        actors.append(ActorSpec(
            "bg_1", "vehicle",
            ReactiveFollowBehavior(lid, float(rng.uniform(3, 8)), s0),
            (4.6, 2.0), None))
    if rng.random() < 0.5:
        track = crossing_track(float(rng.uniform(-20, 20)), -30.0, 30.0,
                               1.4, 0.0, "pedestrian")
        actors.append(ActorSpec("ped_1", "pedestrian", ReplayBehavior(), (0.6, 0.6), track))
    objects = []
    if rng.random() < 0.5:
        objects.append(StaticObject("obj_1", float(rng.uniform(200, 240)),
                                    float(rng.uniform(200, 240)),
                                    float(rng.uniform(-3, 3)), 2.0, 2.0))
    scen = Scenario(
        id=f"rand_{idx}", bucket="interaction", category="pre_crash",
        interactivity="dynamic_coordination", map_id=graph.map_id,
        weather=("default", "cloudy", "night", "rain")[int(rng.integers(0, 4))],
        max_duration_s=float(rng.uniform(20, 90)),
        cavs=tuple(cavs), background_actors=tuple(actors),
        static_objects=tuple(objects), lane_graph=graph)
    return scen
