"""Built-in procedural lane-graph maps and their maneuver catalogs.

Five road patterns back the scenario templates: a bidirectional straight
road, a four-way intersection, a T junction, a roundabout, and a highway
on-ramp. Each map ships a catalog mapping maneuver keys (``approach:intent``)
to lane-id paths so routes can be expanded legally from the graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polyline
from .lane_graph import Lane, LaneGraph, MapLibrary

LANE_WIDTH = 3.5
SPEED_LIMIT = 13.9  # 50 km/h

TOPOLOGIES = (
    "intersection_4way",
    "t_junction",
    "roundabout",
    "straight_2lane",
    "highway_ramp",
)


@dataclass
class MapCatalog:
    map_id: str
    topology: str
    maneuvers: dict[str, list[tuple[str, ...]]]
    # staggered spawn slots available along each maneuver's first lane
    slots_per_approach: int = 4
    features: dict = field(default_factory=dict)


def _lane(lid, pts, succ=(), pred=(), width=LANE_WIDTH, speed=SPEED_LIMIT) -> Lane:
    return Lane(lid, Polyline(pts), width, speed, tuple(succ), tuple(pred))


def _arc(center, radius, a0_deg, a1_deg, n=13) -> np.ndarray:
    ang = np.radians(np.linspace(a0_deg, a1_deg, n))
    return np.column_stack([center[0] + radius * np.cos(ang),
                            center[1] + radius * np.sin(ang)])


def _rot90(pts: np.ndarray, k: int) -> np.ndarray:
    out = np.asarray(pts, float).copy()
    for _ in range(k % 4):
        out = np.column_stack([-out[:, 1], out[:, 0]])
    return out


def route_waypoints(graph: LaneGraph, lane_path: tuple[str, ...],
                    start_s: float = 0.0, end_trim: float = 0.0) -> list[tuple[float, float]]:
    """Concatenate centerlines along a lane path.

    `start_s` trims the first lane; `end_trim` shortens the last one so that
    vehicles sharing an exit lane do not park on each other's goal.
    """
    pts: list[tuple[float, float]] = []
    for i, lid in enumerate(lane_path):
        line = graph.lanes[lid].centerline
        if i == 0 and start_s > 0.0:
            coords = line.tail_from(min(start_s, max(line.length - 1.0, 0.0))).pts
        else:
            coords = line.pts
        for x, y in coords:
            if pts and math.hypot(x - pts[-1][0], y - pts[-1][1]) < 1e-9:
                continue
            pts.append((float(x), float(y)))
    if end_trim > 0.0 and len(pts) >= 2:
        line = Polyline(pts)
        keep = max(line.length - end_trim, min(10.0, line.length * 0.5))
        out = [pts[0]]
        for x, y in pts[1:]:
            seg = math.hypot(x - out[-1][0], y - out[-1][1])
            prior = Polyline(out).length if len(out) >= 2 else 0.0
            if prior + seg >= keep:
                p = line.point_at(keep)
                out.append((float(p[0]), float(p[1])))
                break
            out.append((x, y))
        if len(out) >= 2:
            pts = out
    return pts


# ---------------------------------------------------------------------------

def build_straight_2lane(map_id: str = "straight_2lane_a") -> tuple[LaneGraph, MapCatalog]:
    x0, x1 = -150.0, 150.0
    g = LaneGraph(map_id=map_id)
    g.lanes["e0"] = _lane("e0", [(x0, -1.75), (x1, -1.75)])
    g.lanes["e1"] = _lane("e1", [(x0, -5.25), (x1, -5.25)])
    g.lanes["w0"] = _lane("w0", [(x1, 1.75), (x0, 1.75)])
    g.lanes["w1"] = _lane("w1", [(x1, 5.25), (x0, 5.25)])
    cw_x = 60.0
    g.crosswalks.append(np.array([
        (cw_x - 1.25, -7.0), (cw_x + 1.25, -7.0), (cw_x + 1.25, 7.0), (cw_x - 1.25, 7.0)]))
    catalog = MapCatalog(
        map_id=map_id,
        topology="straight_2lane",
        maneuvers={
            "east:follow": [("e0",)],
            "east_outer:follow": [("e1",)],
            "west:follow": [("w0",)],
            "west_outer:follow": [("w1",)],
        },
        slots_per_approach=6,
        features={"crosswalk_x": cw_x, "eastbound": ("e0", "e1"),
                  "westbound": ("w0", "w1"), "extent": (x0, x1)},
    )
    g.validate()
    return g, catalog


def build_intersection_4way(map_id: str = "intersection_4way_a") -> tuple[LaneGraph, MapCatalog]:
    g = LaneGraph(map_id=map_id)
    arms = ("e", "n", "w", "s")  # direction of travel of the inbound lane
    base_in = np.array([(-100.0, -1.75), (-6.0, -1.75)])
    base_out = np.array([(6.0, -1.75), (100.0, -1.75)])
    base_straight = np.array([(-6.0, -1.75), (6.0, -1.75)])
    base_left = _arc((-6.0, 6.0), 7.75, -90.0, 0.0)
    base_right = _arc((-6.0, -6.0), 4.25, 90.0, 0.0)
    for k, arm in enumerate(arms):
        g.lanes[f"{arm}_in"] = _lane(f"{arm}_in", _rot90(base_in, k))
        g.lanes[f"{arm}_out"] = _lane(f"{arm}_out", _rot90(base_out, k))
        g.lanes[f"{arm}_s"] = _lane(f"{arm}_s", _rot90(base_straight, k))
        g.lanes[f"{arm}_l"] = _lane(f"{arm}_l", _rot90(base_left, k))
        g.lanes[f"{arm}_r"] = _lane(f"{arm}_r", _rot90(base_right, k))
    linked = {}
    for k, arm in enumerate(arms):
        left_exit = arms[(k + 1) % 4]
        right_exit = arms[(k - 1) % 4]
        linked[f"{arm}_in"] = ([f"{arm}_s", f"{arm}_l", f"{arm}_r"], [])
        linked[f"{arm}_s"] = ([f"{arm}_out"], [f"{arm}_in"])
        linked[f"{arm}_l"] = ([f"{left_exit}_out"], [f"{arm}_in"])
        linked[f"{arm}_r"] = ([f"{right_exit}_out"], [f"{arm}_in"])
    for k, arm in enumerate(arms):
        preds = [f"{arm}_s"]
        preds += [f"{a}_l" for i, a in enumerate(arms) if (i + 1) % 4 == k]
        preds += [f"{a}_r" for i, a in enumerate(arms) if (i - 1) % 4 == k]
        linked[f"{arm}_out"] = ([], preds)
    for lid, (succ, pred) in linked.items():
        lane = g.lanes[lid]
        g.lanes[lid] = Lane(lid, lane.centerline, lane.width, lane.speed_limit,
                            tuple(succ), tuple(pred))
    g.crosswalks.append(np.array([(-6.0, -8.5), (6.0, -8.5), (6.0, -6.5), (-6.0, -6.5)]))
    maneuvers = {}
    for k, arm in enumerate(arms):
        left_exit = arms[(k + 1) % 4]
        right_exit = arms[(k - 1) % 4]
        maneuvers[f"{arm}:straight"] = [(f"{arm}_in", f"{arm}_s", f"{arm}_out")]
        maneuvers[f"{arm}:left_turn"] = [(f"{arm}_in", f"{arm}_l", f"{left_exit}_out")]
        maneuvers[f"{arm}:right_turn"] = [(f"{arm}_in", f"{arm}_r", f"{right_exit}_out")]
    catalog = MapCatalog(map_id, "intersection_4way", maneuvers,
                         slots_per_approach=5,
                         features={"arms": arms, "junction_half": 6.0})
    g.validate()
    return g, catalog


def build_t_junction(map_id: str = "t_junction_a") -> tuple[LaneGraph, MapCatalog]:
    g = LaneGraph(map_id=map_id)
    g.lanes["e_in"] = _lane("e_in", [(-100.0, -1.75), (-6.0, -1.75)])
    g.lanes["e_out"] = _lane("e_out", [(6.0, -1.75), (100.0, -1.75)])
    g.lanes["w_in"] = _lane("w_in", [(100.0, 1.75), (6.0, 1.75)])
    g.lanes["w_out"] = _lane("w_out", [(-6.0, 1.75), (-100.0, 1.75)])
    g.lanes["n_in"] = _lane("n_in", [(1.75, -100.0), (1.75, -6.0)])
    g.lanes["s_out"] = _lane("s_out", [(-1.75, -6.0), (-1.75, -100.0)])
    g.lanes["e_s"] = _lane("e_s", [(-6.0, -1.75), (6.0, -1.75)])
    g.lanes["w_s"] = _lane("w_s", [(6.0, 1.75), (-6.0, 1.75)])
    g.lanes["e_r"] = _lane("e_r", _arc((-6.0, -6.0), 4.25, 90.0, 0.0))
    g.lanes["w_l"] = _lane("w_l", _arc((6.0, -6.0), 7.75, 90.0, 180.0))
    g.lanes["n_r"] = _lane("n_r", _arc((6.0, -6.0), 4.25, 180.0, 90.0))
    g.lanes["n_l"] = _lane("n_l", _arc((-6.0, -6.0), 7.75, 0.0, 90.0))
    links = {
        "e_in": (["e_s", "e_r"], []),
        "w_in": (["w_s", "w_l"], []),
        "n_in": (["n_r", "n_l"], []),
        "e_s": (["e_out"], ["e_in"]),
        "w_s": (["w_out"], ["w_in"]),
        "e_r": (["s_out"], ["e_in"]),
        "w_l": (["s_out"], ["w_in"]),
        "n_r": (["e_out"], ["n_in"]),
        "n_l": (["w_out"], ["n_in"]),
        "e_out": ([], ["e_s", "n_r"]),
        "w_out": ([], ["w_s", "n_l"]),
        "s_out": ([], ["e_r", "w_l"]),
    }
    for lid, (succ, pred) in links.items():
        lane = g.lanes[lid]
        g.lanes[lid] = Lane(lid, lane.centerline, lane.width, lane.speed_limit,
                            tuple(succ), tuple(pred))
    maneuvers = {
        "e:straight": [("e_in", "e_s", "e_out")],
        "e:right_turn": [("e_in", "e_r", "s_out")],
        "w:straight": [("w_in", "w_s", "w_out")],
        "w:left_turn": [("w_in", "w_l", "s_out")],
        "n:left_turn": [("n_in", "n_l", "w_out")],
        "n:right_turn": [("n_in", "n_r", "e_out")],
    }
    catalog = MapCatalog(map_id, "t_junction", maneuvers, slots_per_approach=5,
                         features={"arms": ("e", "w", "n")})
    g.validate()
    return g, catalog


def build_roundabout(map_id: str = "roundabout_a") -> tuple[LaneGraph, MapCatalog]:
    g = LaneGraph(map_id=map_id)
    ring_r = 12.0
    arms = ("s", "e", "n", "w")  # arm positions by compass point of attachment
    base_in = np.array([(-5.0, -45.0), (-5.0, -17.0)])
    base_out = np.array([(5.0, -17.0), (5.0, -45.0)])
    base_conn_in = _arc((0.0, -17.0), 5.0, 180.0, 90.0, n=7)
    base_conn_out = _arc((0.0, -17.0), 5.0, 90.0, 0.0, n=7)
    quad_angles = {"s": (-90.0, 0.0), "e": (0.0, 90.0), "n": (90.0, 180.0), "w": (180.0, 270.0)}
    for arm, (a0, a1) in quad_angles.items():
        g.lanes[f"ring_{arm}"] = _lane(f"ring_{arm}", _arc((0.0, 0.0), ring_r, a0, a1, n=16))
    for k, arm in enumerate(arms):
        g.lanes[f"{arm}_in"] = _lane(f"{arm}_in", _rot90(base_in, k))
        g.lanes[f"{arm}_out"] = _lane(f"{arm}_out", _rot90(base_out, k))
        g.lanes[f"{arm}_enter"] = _lane(f"{arm}_enter", _rot90(base_conn_in, k))
        g.lanes[f"{arm}_exit"] = _lane(f"{arm}_exit", _rot90(base_conn_out, k))
    links = {}
    for k, arm in enumerate(arms):
        nxt = arms[(k + 1) % 4]
        links[f"{arm}_in"] = ([f"{arm}_enter"], [])
        links[f"{arm}_enter"] = ([f"ring_{arm}"], [f"{arm}_in"])
        links[f"ring_{arm}"] = ([f"ring_{nxt}", f"{nxt}_exit"], [f"{arm}_enter"])
        links[f"{arm}_exit"] = ([f"{arm}_out"], [])
        links[f"{arm}_out"] = ([f"{arm}_exit"], [])
    for k, arm in enumerate(arms):
        prev = arms[(k - 1) % 4]
        succ, pred = links[f"ring_{arm}"]
        links[f"ring_{arm}"] = (succ, pred + [f"ring_{prev}"])
        succ, pred = links[f"{arm}_exit"]
        links[f"{arm}_exit"] = (succ, [f"ring_{prev}"])
    for lid, (succ, pred) in links.items():
        lane = g.lanes[lid]
        g.lanes[lid] = Lane(lid, lane.centerline, lane.width, lane.speed_limit,
                            tuple(succ), tuple(pred))
    maneuvers = {}
    for k, arm in enumerate(arms):
        for hops in (1, 2, 3):
            exit_arm = arms[(k + hops) % 4]
            rings = tuple(f"ring_{arms[(k + j) % 4]}" for j in range(hops))
            path = (f"{arm}_in", f"{arm}_enter") + rings + (f"{exit_arm}_exit", f"{exit_arm}_out")
            maneuvers[f"{arm}:roundabout_{hops}"] = [path]
    catalog = MapCatalog(map_id, "roundabout", maneuvers, slots_per_approach=3,
                         features={"arms": arms, "ring_radius": ring_r})
    g.validate()
    return g, catalog


def build_highway_ramp(map_id: str = "highway_ramp_a") -> tuple[LaneGraph, MapCatalog]:
    g = LaneGraph(map_id=map_id)
    g.lanes["m0"] = _lane("m0", [(-60.0, -1.75), (260.0, -1.75)], speed=25.0)
    g.lanes["m1a"] = _lane("m1a", [(-60.0, -5.25), (80.0, -5.25)],
                           succ=("m1b",), speed=25.0)
    g.lanes["m1b"] = _lane("m1b", [(80.0, -5.25), (260.0, -5.25)],
                           pred=("m1a", "ramp"), speed=25.0)
    ramp_pts = [(-20.0, -30.0), (0.0, -22.0), (25.0, -14.0), (45.0, -9.5),
                (65.0, -6.5), (80.0, -5.25)]
    g.lanes["ramp"] = _lane("ramp", ramp_pts, succ=("m1b",), speed=18.0)
    maneuvers = {
        "main:follow": [("m0",)],
        "main_outer:follow": [("m1a", "m1b")],
        "ramp:merge": [("ramp", "m1b")],
    }
    catalog = MapCatalog(map_id, "highway_ramp", maneuvers, slots_per_approach=4,
                         features={"merge_x": 80.0})
    g.validate()
    return g, catalog


_BUILDERS = {
    "straight_2lane": build_straight_2lane,
    "intersection_4way": build_intersection_4way,
    "t_junction": build_t_junction,
    "roundabout": build_roundabout,
    "highway_ramp": build_highway_ramp,
}


def builtin_maps() -> tuple[MapLibrary, dict[str, MapCatalog]]:
    """All built-in maps keyed by map id, plus their maneuver catalogs."""
    library = MapLibrary()
    catalogs: dict[str, MapCatalog] = {}
    for builder in _BUILDERS.values():
        graph, catalog = builder()
        library.add(graph)
        catalogs[catalog.map_id] = catalog
    return library, catalogs


def catalogs_by_topology(catalogs: dict[str, MapCatalog]) -> dict[str, list[MapCatalog]]:
    out: dict[str, list[MapCatalog]] = {}
    for cat in catalogs.values():
        out.setdefault(cat.topology, []).append(cat)
    return out
