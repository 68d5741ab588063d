"""Lane-graph map model: polyline centerlines with topology.

Map file format, one lane per record line:

    id width speed_limit | x0 y0 x1 y1 ... | succ: id id | pred: id id
    crosswalk | x0 y0 x1 y1 ...

Coordinates in meters, one file per map id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polyline


class MapFormatError(ValueError):
    pass


class MapValidationError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: Polyline
    width: float
    speed_limit: float
    successors: tuple[str, ...] = ()
    predecessors: tuple[str, ...] = ()


@dataclass
class LaneGraph:
    map_id: str
    lanes: dict[str, Lane] = field(default_factory=dict)
    crosswalks: list[np.ndarray] = field(default_factory=list)

    def validate(self) -> None:
        if not self.lanes:
            raise MapValidationError(f"map {self.map_id}: no lanes")
        for lane in self.lanes.values():
            if lane.width <= 0:
                raise MapValidationError(f"lane {lane.id}: width must be > 0")
            if lane.speed_limit <= 0:
                raise MapValidationError(f"lane {lane.id}: speed_limit must be > 0")
            if lane.centerline.length <= 0:
                raise MapValidationError(f"lane {lane.id}: zero arc length")
            for ref in lane.successors + lane.predecessors:
                if ref not in self.lanes:
                    raise MapValidationError(f"lane {lane.id}: unresolved topology ref {ref}")

    def nearest_lane(self, p) -> tuple[str, float, float]:
        """(lane id, arc length s, signed lateral offset) of the closest lane."""
        best = None
        for lane in self.lanes.values():
            proj = lane.centerline.project(p)
            key = (proj.distance, lane.id)
            if best is None or key < best[0]:
                best = (key, lane.id, proj.s, proj.lateral)
        if best is None:
            raise MapValidationError(f"map {self.map_id}: empty graph")
        return best[1], best[2], best[3]

    def distance_to_network(self, p) -> float:
        return min(lane.centerline.project(p).distance for lane in self.lanes.values())

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for lane_id in sorted(self.lanes):
            lane = self.lanes[lane_id]
            h.update(lane_id.encode())
            h.update(np.ascontiguousarray(lane.centerline.pts).tobytes())
        return h.hexdigest()[:16]


def nearest_lane_projection(p, graph: LaneGraph) -> tuple[str, float, float]:
    """Module-level alias for the snapping primitive."""
    return graph.nearest_lane(p)


def serialize_lane_graph(graph: LaneGraph, path) -> None:
    lines = []
    for lane_id in graph.lanes:
        lane = graph.lanes[lane_id]
        coords = " ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in lane.centerline.pts)
        succ = " ".join(lane.successors)
        pred = " ".join(lane.predecessors)
        lines.append(
            f"{lane.id} {_fmt(lane.width)} {_fmt(lane.speed_limit)} | {coords}"
            f" | succ: {succ} | pred: {pred}"
        )
    for cw in graph.crosswalks:
        coords = " ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in np.asarray(cw))
        lines.append(f"crosswalk | {coords}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_lane_graph(path, map_id: str | None = None) -> LaneGraph:
    path = Path(path)
    if map_id is None:
        map_id = path.stem
    graph = LaneGraph(map_id=map_id)
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if parts[0].startswith("crosswalk"):
            coords = _parse_coords(parts[1], path, ln)
            graph.crosswalks.append(coords)
            continue
        if len(parts) < 4:
            raise MapFormatError(f"{path}:{ln}: expected 4 '|' sections")
        head = parts[0].split()
        if len(head) != 3:
            raise MapFormatError(f"{path}:{ln}: lane header needs id width speed_limit")
        lane_id, width, speed = head[0], float(head[1]), float(head[2])
        coords = _parse_coords(parts[1], path, ln)
        succ = tuple(parts[2].removeprefix("succ:").split())
        pred = tuple(parts[3].removeprefix("pred:").split())
        graph.lanes[lane_id] = Lane(
            id=lane_id,
            centerline=Polyline(coords),
            width=width,
            speed_limit=speed,
            successors=succ,
            predecessors=pred,
        )
    graph.validate()
    return graph


def _parse_coords(text: str, path, ln: int) -> np.ndarray:
    vals = [float(v) for v in text.split()]
    if len(vals) < 4 or len(vals) % 2 != 0:
        raise MapFormatError(f"{path}:{ln}: coordinate list must hold >= 2 x,y pairs")
    return np.array(vals, dtype=float).reshape(-1, 2)


class MapLibrary:
    """Resolves map ids to LaneGraphs from a directory of .lanes files."""

    def __init__(self, root=None, graphs: dict[str, LaneGraph] | None = None):
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, LaneGraph] = dict(graphs or {})

    def add(self, graph: LaneGraph) -> None:
        self._cache[graph.map_id] = graph

    def get(self, map_id: str) -> LaneGraph:
        if map_id in self._cache:
            return self._cache[map_id]
        if self.root is not None:
            candidate = self.root / f"{map_id}.lanes"
            if candidate.exists():
                graph = parse_lane_graph(candidate, map_id)
                self._cache[map_id] = graph
                return graph
        raise MapFormatError(f"map id {map_id!r} not found in library")

    def __contains__(self, map_id: str) -> bool:
        try:
            self.get(map_id)
            return True
        except MapFormatError:
            return False

    def save_all(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for map_id, graph in self._cache.items():
            serialize_lane_graph(graph, out / f"{map_id}.lanes")
