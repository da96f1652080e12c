"""2D geometry kernels for the x-z driving plane.

Conventions: points are (x, z) float64 arrays, heading 0 points along +x,
positive heading rotates counter-clockwise in plan view, so the left normal
of a direction (dx, dz) is (-dz, dx). Segment sets are (S, 4) arrays of
(x1, z1, x2, z2); rectangle sets are (K, 5) arrays of (cx, cz, hx, hz, yaw).
"""

from __future__ import annotations

import math

import numpy as np

EMPTY_SEGMENTS = np.zeros((0, 4))
EMPTY_RECTS = np.zeros((0, 5))


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def heading_vector(heading: float) -> np.ndarray:
    return np.array([math.cos(heading), math.sin(heading)])


def left_normal(direction: np.ndarray) -> np.ndarray:
    return np.array([-direction[1], direction[0]])


def polyline_arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length per vertex, starting at 0."""
    deltas = np.diff(points, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    return np.concatenate([[0.0], np.cumsum(seg_len)])


def segment_tangents(points: np.ndarray) -> np.ndarray:
    """Unit tangent per polyline segment; raises on zero-length segments."""
    deltas = np.diff(points, axis=0)
    lengths = np.hypot(deltas[:, 0], deltas[:, 1])
    if np.any(lengths < 1e-12):
        bad = int(np.argmin(lengths))
        raise ValueError(f"degenerate polyline segment at index {bad}")
    return deltas / lengths[:, None]


def offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline perpendicular to each segment's tangent.

    Emits both endpoints of every segment shifted along that segment's left
    normal by `offset` (signed), connected in order. Every output vertex is
    therefore at exact perpendicular distance |offset| from its source
    segment; corners gain short connector segments instead of miters.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("polyline needs at least two points")
    tangents = segment_tangents(points)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    starts = points[:-1] + offset * normals
    ends = points[1:] + offset * normals
    out = np.empty((2 * len(starts), 2))
    out[0::2] = starts
    out[1::2] = ends
    return out


def polyline_to_segments(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return EMPTY_SEGMENTS.copy()
    return np.hstack([points[:-1], points[1:]])


def rect_corners(center, half, yaw: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise."""
    cx, cz = center
    hx, hz = half
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[hx, hz], [-hx, hz], [-hx, -hz], [hx, -hz]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cz])


def rects_to_segments(rects: np.ndarray) -> np.ndarray:
    """Edge segments (4 per rectangle) for a (K, 5) rectangle array."""
    rects = np.asarray(rects, dtype=float)
    if rects.size == 0:
        return EMPTY_SEGMENTS.copy()
    segs = np.empty((4 * len(rects), 4))
    for i, (cx, cz, hx, hz, yaw) in enumerate(rects):
        corners = rect_corners((cx, cz), (hx, hz), yaw)
        nxt = np.roll(corners, -1, axis=0)
        segs[4 * i:4 * i + 4] = np.hstack([corners, nxt])
    return segs


def points_in_rects(points: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """(P, K) boolean: point strictly-or-boundary inside each rectangle."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rects = np.asarray(rects, dtype=float)
    if rects.size == 0:
        return np.zeros((len(points), 0), dtype=bool)
    rel = points[:, None, :] - rects[None, :, 0:2]
    cos = np.cos(rects[:, 4])
    sin = np.sin(rects[:, 4])
    local_x = rel[:, :, 0] * cos + rel[:, :, 1] * sin
    local_z = -rel[:, :, 0] * sin + rel[:, :, 1] * cos
    return (np.abs(local_x) <= rects[:, 2]) & (np.abs(local_z) <= rects[:, 3])


def ray_segment_hits(origin: np.ndarray, direction: np.ndarray,
                     segments: np.ndarray) -> np.ndarray:
    """Ray parameter t >= 0 of the hit on each segment, inf where missed."""
    segments = np.asarray(segments, dtype=float)
    if segments.size == 0:
        return np.zeros(0)
    p = segments[:, 0:2]
    e = segments[:, 2:4] - p
    rel = p - origin
    denom = direction[0] * e[:, 1] - direction[1] * e[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
        u = (rel[:, 0] * direction[1] - rel[:, 1] * direction[0]) / denom
    hit = (np.abs(denom) > 1e-14) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    return np.where(hit, t, np.inf)


def rays_segments_min_dist(origin: np.ndarray, directions: np.ndarray,
                           segments: np.ndarray, max_range: float) -> np.ndarray:
    """Minimum hit distance per ray direction, capped at max_range."""
    directions = np.atleast_2d(directions)
    segments = np.asarray(segments, dtype=float)
    if segments.size == 0:
        return np.full(len(directions), max_range)
    p = segments[:, 0:2]
    e = segments[:, 2:4] - p
    rel = p - origin
    denom = directions[:, 0, None] * e[None, :, 1] - directions[:, 1, None] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[None, :, 0] * e[None, :, 1] - rel[None, :, 1] * e[None, :, 0]) / denom
        u = (rel[None, :, 0] * directions[:, 1, None]
             - rel[None, :, 1] * directions[:, 0, None]) / denom
    hit = (np.abs(denom) > 1e-14) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(hit, t, np.inf)
    return np.minimum(t.min(axis=1), max_range)


def segments_cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(A,) boolean: does segment a_i intersect any segment in b.

    Uses the orientation test with inclusive boundaries, so touching counts
    as crossing.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        return np.zeros(len(a), dtype=bool)

    p1 = a[:, None, 0:2]
    p2 = a[:, None, 2:4]
    q1 = b[None, :, 0:2]
    q2 = b[None, :, 2:4]

    def cross(o, u, v):
        return ((u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1])
                - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0]))

    d1 = cross(q1, q2, p1)
    d2 = cross(q1, q2, p2)
    d3 = cross(p1, p2, q1)
    d4 = cross(p1, p2, q2)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)

    def on_segment(o, u, v):
        # v collinear with o->u, check bounding box
        return ((np.minimum(o[..., 0], u[..., 0]) - 1e-12 <= v[..., 0])
                & (v[..., 0] <= np.maximum(o[..., 0], u[..., 0]) + 1e-12)
                & (np.minimum(o[..., 1], u[..., 1]) - 1e-12 <= v[..., 1])
                & (v[..., 1] <= np.maximum(o[..., 1], u[..., 1]) + 1e-12))

    touch = ((np.abs(d1) < 1e-12) & on_segment(q1, q2, p1)) \
        | ((np.abs(d2) < 1e-12) & on_segment(q1, q2, p2)) \
        | ((np.abs(d3) < 1e-12) & on_segment(p1, p2, q1)) \
        | ((np.abs(d4) < 1e-12) & on_segment(p1, p2, q2))
    return (proper | touch).any(axis=1)


def segment_crosses_any(p1, p2, segments: np.ndarray) -> bool:
    seg = np.array([[p1[0], p1[1], p2[0], p2[1]]])
    return bool(segments_cross(seg, segments)[0])


def rect_overlaps_rect(center_a, half_a, yaw_a, center_b, half_b, yaw_b) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts)."""
    corners_a = rect_corners(center_a, half_a, yaw_a)
    corners_b = rect_corners(center_b, half_b, yaw_b)
    for yaw in (yaw_a, yaw_b):
        c, s = math.cos(yaw), math.sin(yaw)
        for axis in ((c, s), (-s, c)):
            proj_a = corners_a @ axis
            proj_b = corners_b @ axis
            if proj_a.max() < proj_b.min() - 1e-12 or proj_b.max() < proj_a.min() - 1e-12:
                return False
    return True


def rect_intersects_segments(center, half, yaw: float, segments: np.ndarray) -> bool:
    """Oriented rectangle vs segment set: edge crossing or endpoint inside."""
    segments = np.asarray(segments, dtype=float)
    if segments.size == 0:
        return False
    rect = np.array([[center[0], center[1], half[0], half[1], yaw]])
    endpoints = np.vstack([segments[:, 0:2], segments[:, 2:4]])
    if points_in_rects(endpoints, rect).any():
        return True
    corners = rect_corners(center, half, yaw)
    edges = np.hstack([corners, np.roll(corners, -1, axis=0)])
    return bool(segments_cross(edges, segments).any())


def project_to_polyline(point, points: np.ndarray, cum_s: np.ndarray) -> tuple[float, float]:
    """Arc length and distance of the closest point on a polyline."""
    point = np.asarray(point, dtype=float)
    starts = points[:-1]
    deltas = points[1:] - starts
    seg_len_sq = np.einsum("ij,ij->i", deltas, deltas)
    rel = point - starts
    t = np.einsum("ij,ij->i", rel, deltas) / np.where(seg_len_sq > 0, seg_len_sq, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = starts + t[:, None] * deltas
    dist = np.hypot(point[0] - closest[:, 0], point[1] - closest[:, 1])
    best = int(np.argmin(dist))
    s = cum_s[best] + t[best] * math.sqrt(seg_len_sq[best])
    return float(s), float(dist[best])
