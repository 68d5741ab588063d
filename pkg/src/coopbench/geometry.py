"""Planar geometry primitives shared across the harness.

Everything is 2D, meters, radians. Polylines carry their cumulative arc
length; oriented boxes are (center, yaw, length, width) with length along
the heading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b."""
    return wrap_angle(a - b)


def lerp_angle(a: float, b: float, u: float) -> float:
    """Shortest-arc interpolation from a to b at fraction u."""
    return wrap_angle(a + angle_diff(b, a) * u)


@dataclass(frozen=True)
class Projection:
    """Foot point of a point on a polyline."""

    s: float        # arc length of the foot point
    lateral: float  # signed offset, left of travel direction positive
    distance: float
    seg_index: int


class Polyline:
    """Immutable 2D polyline with arc-length parametrization."""

    __slots__ = ("pts", "seg_len", "cum", "length")

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("polyline needs >= 2 points of shape (N, 2)")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.pts = pts
        self.seg_len = seg_len
        self.cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self.cum[-1])

    def __len__(self) -> int:
        return len(self.pts)

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        if self.seg_len[i] <= 0.0:
            return self.pts[i].copy()
        t = (s - self.cum[i]) / self.seg_len[i]
        return self.pts[i] + t * (self.pts[i + 1] - self.pts[i])

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        # skip degenerate segments
        while self.seg_len[i] <= 0.0 and i + 1 < len(self.seg_len):
            i += 1
        d = self.pts[i + 1] - self.pts[i]
        return math.atan2(d[1], d[0])

    def project(self, p) -> Projection:
        """Nearest foot point over all segments; ties go to the smaller s."""
        p = np.asarray(p, dtype=float)
        a = self.pts[:-1]
        d = self.pts[1:] - a
        len2 = np.maximum(self.seg_len**2, 1e-300)
        t = np.clip(((p - a) * d).sum(axis=1) / len2, 0.0, 1.0)
        foot = a + t[:, None] * d
        off = p - foot
        dist2 = (off**2).sum(axis=1)
        i = int(np.argmin(dist2))
        dist = math.sqrt(dist2[i])
        seg_norm = math.sqrt(max(len2[i], 1e-300))
        ux, uy = d[i, 0] / seg_norm, d[i, 1] / seg_norm
        lateral = ux * off[i, 1] - uy * off[i, 0]
        s = float(self.cum[i] + t[i] * self.seg_len[i])
        return Projection(s=s, lateral=float(lateral), distance=dist, seg_index=i)

    def headings(self) -> np.ndarray:
        d = np.diff(self.pts, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def cumulative_heading_change_deg(self) -> float:
        h = self.headings()
        if len(h) < 2:
            return 0.0
        deltas = np.array([abs(angle_diff(h[i + 1], h[i])) for i in range(len(h) - 1)])
        return float(math.degrees(deltas.sum()))

    def tail_from(self, s: float) -> "Polyline":
        """Sub-polyline from arc length s to the end (>= 2 points)."""
        s = min(max(s, 0.0), self.length)
        start = self.point_at(s)
        i = int(np.searchsorted(self.cum, s, side="right"))
        rest = self.pts[i:]
        if len(rest) == 0 or np.hypot(*(rest[0] - start)) < 1e-12:
            pts = rest if len(rest) >= 2 else self.pts[-2:]
            return Polyline(pts) if len(rest) >= 2 else Polyline([self.pts[-2], self.pts[-1]])
        return Polyline(np.vstack([start, rest]))


@dataclass(frozen=True)
class Obb:
    """Oriented bounding box, length along yaw."""

    cx: float
    cy: float
    yaw: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    @property
    def circumradius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


def _project_interval(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    proj = corners @ axis
    return float(proj.min()), float(proj.max())


def obb_overlap(a: Obb, b: Obb) -> bool:
    """Separating-axis test; positive-area overlap only (edge contact excluded)."""
    dx, dy = b.cx - a.cx, b.cy - a.cy
    if math.hypot(dx, dy) > a.circumradius + b.circumradius:
        return False
    ca, cb = a.corners(), b.corners()
    for yaw in (a.yaw, b.yaw):
        c, s = math.cos(yaw), math.sin(yaw)
        for axis in (np.array([c, s]), np.array([-s, c])):
            lo_a, hi_a = _project_interval(ca, axis)
            lo_b, hi_b = _project_interval(cb, axis)
            if min(hi_a, hi_b) - max(lo_a, lo_b) <= 1e-12:
                return False
    return True


def point_obb_distance(o: Obb, p) -> float:
    """Distance from point to the box boundary; 0 inside."""
    px, py = float(p[0]) - o.cx, float(p[1]) - o.cy
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    lx = c * px + s * py
    ly = -s * px + c * py
    dx = max(abs(lx) - 0.5 * o.length, 0.0)
    dy = max(abs(ly) - 0.5 * o.width, 0.0)
    return math.hypot(dx, dy)


def disc_obb_overlap(o: Obb, center, radius: float) -> bool:
    return point_obb_distance(o, center) < radius


def segment_point_distance(p, q, x) -> float:
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    x = np.asarray(x, float)
    d = q - p
    len2 = float(d @ d)
    if len2 <= 0.0:
        return float(np.hypot(*(x - p)))
    t = min(max(float((x - p) @ d) / len2, 0.0), 1.0)
    return float(np.hypot(*(x - (p + t * d))))


def segment_circle_intersects(p, q, center, radius: float) -> bool:
    return segment_point_distance(p, q, center) < radius


def segment_obb_intersects(p, q, o: Obb) -> bool:
    """Slab test of the segment against the box in its own frame."""
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    def to_local(pt):
        px, py = float(pt[0]) - o.cx, float(pt[1]) - o.cy
        return (c * px + s * py, -s * px + c * py)
    (x0, y0), (x1, y1) = to_local(p), to_local(q)
    hl, hw = 0.5 * o.length, 0.5 * o.width
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for d, lo, hi, start in ((dx, -hl, hl, x0), (dy, -hw, hw, y0)):
        if abs(d) < 1e-15:
            if start < lo or start > hi:
                return False
        else:
            ta, tb = (lo - start) / d, (hi - start) / d
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return False
    return True


def poly_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_clip(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of convex subject against convex clip (CCW)."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        def inside(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) >= 0.0
        def intersect(p, q):
            dx, dy = q[0] - p[0], q[1] - p[1]
            denom = ex * dy - ey * dx
            if abs(denom) < 1e-300:
                return q
            t = (ex * (a[1] - p[1]) - ey * (a[0] - p[0])) / denom
            return (p[0] + t * dx, p[1] + t * dy)
        inp = output
        output = []
        for j in range(len(inp)):
            cur, nxt = inp[j], inp[(j + 1) % len(inp)]
            if inside(cur):
                output.append(cur)
                if not inside(nxt):
                    output.append(intersect(cur, nxt))
            elif inside(nxt):
                output.append(intersect(cur, nxt))
    return np.array(output) if output else np.empty((0, 2))


def _ccw_corners(o: Obb) -> np.ndarray:
    c = o.corners()
    return c if poly_area(c) >= 0 else c[::-1]


def obb_intersection_area(a: Obb, b: Obb) -> float:
    inter = convex_clip(_ccw_corners(a), _ccw_corners(b))
    if len(inter) < 3:
        return 0.0
    return abs(poly_area(inter))


def obb_iou(a: Obb, b: Obb) -> float:
    inter = obb_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return inter / union if union > 0 else 0.0


def seg_seg_intersection(p1, p2, q1, q2):
    """Intersection point of two segments, or None. Returns (point, t, u)."""
    p1 = np.asarray(p1, float); p2 = np.asarray(p2, float)
    q1 = np.asarray(q1, float); q2 = np.asarray(q2, float)
    r = p2 - p1
    s = q2 - q1
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-15:
        return None
    qp = q1 - p1
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    if -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= u <= 1.0 + 1e-12:
        return p1 + t * r, float(t), float(u)
    return None


def polyline_intersections(a: Polyline, b: Polyline) -> list[tuple[np.ndarray, float, float]]:
    """All crossing points of two polylines as (point, s_on_a, s_on_b)."""
    hits = []
    for i in range(len(a.pts) - 1):
        pa, pb = a.pts[i], a.pts[i + 1]
        for j in range(len(b.pts) - 1):
            res = seg_seg_intersection(pa, pb, b.pts[j], b.pts[j + 1])
            if res is not None:
                pt, t, u = res
                hits.append((pt, float(a.cum[i] + t * a.seg_len[i]),
                             float(b.cum[j] + u * b.seg_len[j])))
    return hits


def discrete_frechet(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete Frechet distance between two point sequences."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    n, m = len(p), len(q)
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    ca = np.full((n, m), -1.0)
    ca[0, 0] = d[0, 0]
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, n):
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), d[i, j])
    return float(ca[n - 1, m - 1])


@dataclass(frozen=True)
class SE2:
    """Rigid 2D transform: rotate by theta about the origin, then translate."""

    theta: float
    tx: float
    ty: float

    def apply(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.tx
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.ty
        return out

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (c * x - s * y + self.tx, s * x + c * y + self.ty)

    def apply_pose(self, x: float, y: float, yaw: float) -> tuple[float, float, float]:
        nx, ny = self.apply_point(x, y)
        return nx, ny, wrap_angle(yaw + self.theta)

    def inverse(self) -> "SE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return SE2(-self.theta, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))

    def compose(self, other: "SE2") -> "SE2":
        """self applied after other."""
        x, y = self.apply_point(other.tx, other.ty)
        return SE2(wrap_angle(self.theta + other.theta), x, y)


def world_to_frame(px: float, py: float, fx: float, fy: float, fyaw: float) -> tuple[float, float]:
    """World point into the frame at (fx, fy, fyaw)."""
    c, s = math.cos(fyaw), math.sin(fyaw)
    dx, dy = px - fx, py - fy
    return (c * dx + s * dy, -s * dx + c * dy)


def frame_to_world(px: float, py: float, fx: float, fy: float, fyaw: float) -> tuple[float, float]:
    c, s = math.cos(fyaw), math.sin(fyaw)
    return (fx + c * px - s * py, fy + s * px + c * py)
