import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopbench.geometry import (Obb, Polyline, SE2, convex_clip, discrete_frechet,
                                lerp_angle, obb_iou, obb_overlap,
                                polyline_intersections, segment_obb_intersects,
                                wrap_angle)


def brute_project(pts, p):
    """Independent per-segment projection for the oracle."""
    best = None
    cum = 0.0
    for i in range(len(pts) - 1):
        a = np.array(pts[i], float)
        b = np.array(pts[i + 1], float)
        d = b - a
        L = math.hypot(*d)
        t = 0.0 if L == 0 else max(0.0, min(1.0, float(np.dot(p - a, d)) / L**2))
        foot = a + t * d
        dist = math.hypot(*(p - foot))
        if best is None or dist < best[0] - 1e-15:
            best = (dist, cum + t * L)
        cum += L
    return best


class TestPolyline:
    def test_vertex_projection(self):
        line = Polyline([(0, 0), (10, 0), (10, 10)])
        proj = line.project((10, 0))
        assert proj.distance == pytest.approx(0.0, abs=1e-12)
        assert proj.s == pytest.approx(10.0, abs=1e-12)

    def test_left_offset_positive(self):
        line = Polyline([(0, 0), (10, 0)])
        proj = line.project((5, 1.0))
        assert proj.lateral == pytest.approx(1.0, abs=1e-12)
        proj = line.project((5, -2.5))
        assert proj.lateral == pytest.approx(-2.5, abs=1e-12)

    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
                    min_size=2, max_size=8),
           st.tuples(st.floats(-60, 60), st.floats(-60, 60)))
    @settings(max_examples=120, deadline=None)
    def test_projection_matches_brute_force(self, pts, p):
        pts = [(x, y) for x, y in pts]
        for i in range(1, len(pts)):
            if math.hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]) < 1e-9:
                pts[i] = (pts[i][0] + 1.0, pts[i][1])
        line = Polyline(pts)
        proj = line.project(np.array(p))
        dist_o, s_o = brute_project(pts, np.array(p))
        assert proj.distance == pytest.approx(dist_o, abs=1e-9)

    def test_heading_change_quarter_circle(self):
        ang = np.linspace(0, math.pi / 2, 200)
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        line = Polyline(pts)
        assert line.cumulative_heading_change_deg() == pytest.approx(90.0, abs=0.5)

    def test_tail_from(self):
        line = Polyline([(0, 0), (10, 0), (20, 0)])
        tail = line.tail_from(5.0)
        assert tail.length == pytest.approx(15.0)
        assert tuple(tail.pts[0]) == (5.0, 0.0)


class TestObb:
    def test_identical_boxes_contact(self):
        a = Obb(0, 0, 0.3, 4, 2)
        assert obb_overlap(a, a)

    def test_far_boxes_no_contact(self):
        a = Obb(0, 0, 0.0, 4, 2)
        b = Obb(100, 0, 1.0, 4, 2)
        assert not obb_overlap(a, b)

    def test_iou_unit_squares_offset(self):
        a = Obb(0, 0, 0, 1, 1)
        b = Obb(0.5, 0, 0, 1, 1)
        assert obb_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_iou_exact_half(self):
        a = Obb(0, 0, 0, 3, 3)
        b = Obb(1.0, 0, 0, 3, 3)
        assert obb_iou(a, b) == 0.5

    def test_rotated_identical(self):
        a = Obb(2, 3, 0.7, 4, 2)
        assert obb_iou(a, a) == pytest.approx(1.0, abs=1e-9)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi),
           st.floats(-math.pi, math.pi))
    @settings(max_examples=80, deadline=None)
    def test_iou_vs_shapely(self, dx, dy, yaw_a, yaw_b):
        from shapely.geometry import Polygon
        a = Obb(0, 0, yaw_a, 4, 2)
        b = Obb(dx, dy, yaw_b, 3, 1.5)
        pa = Polygon(a.corners())
        pb = Polygon(b.corners())
        inter = pa.intersection(pb).area
        union = pa.area + pb.area - inter
        expected = inter / union if union > 0 else 0.0
        assert obb_iou(a, b) == pytest.approx(expected, abs=1e-9)

    def test_segment_intersects(self):
        box = Obb(5, 0, 0, 2, 2)
        assert segment_obb_intersects((0, 0), (10, 0), box)
        assert not segment_obb_intersects((0, 5), (10, 5), box)


class TestAngles:
    def test_wrap(self):
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi if wrap_angle(3 * math.pi) > 0 else -math.pi)
        assert wrap_angle(0.1) == pytest.approx(0.1)

    def test_lerp_shortest_arc_through_pi(self):
        mid = lerp_angle(3.1, -3.1, 0.5)
        assert abs(abs(mid) - math.pi) < 0.05


class TestSE2:
    @given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50),
           st.floats(-20, 20), st.floats(-20, 20))
    @settings(max_examples=60, deadline=None)
    def test_inverse_roundtrip(self, theta, tx, ty, px, py):
        T = SE2(theta, tx, ty)
        q = T.apply_point(px, py)
        back = T.inverse().apply_point(*q)
        assert back[0] == pytest.approx(px, abs=1e-9)
        assert back[1] == pytest.approx(py, abs=1e-9)


class TestFrechet:
    def test_identical(self):
        p = np.array([(0, 0), (1, 0), (2, 0)], float)
        assert discrete_frechet(p, p) == 0.0

    def test_parallel_offset(self):
        p = np.array([(0, 0), (1, 0), (2, 0)], float)
        q = p + np.array([0.0, 1.0])
        assert discrete_frechet(p, q) == pytest.approx(1.0)


def test_polyline_intersections():
    a = Polyline([(-10, 0), (10, 0)])
    b = Polyline([(0, -10), (0, 10)])
    hits = polyline_intersections(a, b)
    assert len(hits) == 1
    pt, sa, sb = hits[0]
    assert sa == pytest.approx(10.0)
    assert sb == pytest.approx(10.0)


def test_convex_clip_contained():
    outer = np.array([(-2, -2), (2, -2), (2, 2), (-2, 2)], float)
    inner = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], float)
    clipped = convex_clip(inner, outer)
    assert len(clipped) == 4
