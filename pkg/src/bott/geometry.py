"""Box geometry in the ground plane: center distance and rotated BEV IoU."""
from __future__ import annotations

import math

from .types import Box3D


def center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centers in the xy plane."""
    return math.hypot(a.x - b.x, a.y - b.y)


def footprint(box: Box3D) -> list[tuple[float, float]]:
    """The 4 BEV corners, counter-clockwise, l along the heading axis."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    corners = []
    for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        corners.append((box.x + c * dx - s * dy, box.y + s * dx + c * dy))
    return corners


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    # shoelace; positive for counter-clockwise input
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def _clip(subject: list[tuple[float, float]], a: tuple[float, float],
          b: tuple[float, float]) -> list[tuple[float, float]]:
    # Sutherland-Hodgman step: keep the part of subject left of edge a->b.
    ex, ey = b[0] - a[0], b[1] - a[1]

    def inside(p):
        return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) >= 0.0

    def intersect(p, q):
        # line a->b with segment p->q: a + u*e = p + s*d
        dx, dy = q[0] - p[0], q[1] - p[1]
        denom = ex * dy - ey * dx
        u = ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx) / denom
        return (a[0] + u * ex, a[1] + u * ey)

    out: list[tuple[float, float]] = []
    for i in range(len(subject)):
        cur = subject[i]
        prev = subject[i - 1]
        if inside(cur):
            if not inside(prev):
                out.append(intersect(prev, cur))
            out.append(cur)
        elif inside(prev):
            out.append(intersect(prev, cur))
    return out


def convex_intersection_area(p: list[tuple[float, float]],
                             q: list[tuple[float, float]]) -> float:
    """Intersection area of two convex CCW polygons."""
    poly = p
    for i in range(len(q)):
        poly = _clip(poly, q[i], q[(i + 1) % len(q)])
        if not poly:
            return 0.0
    return abs(_polygon_area(poly))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated IoU of the two box footprints in the ground plane."""
    if a.w * a.l <= 0 or b.w * b.l <= 0:
        raise ValueError("degenerate box footprint")
    # cheap reject: circumscribed circles apart
    ra = 0.5 * math.hypot(a.w, a.l)
    rb = 0.5 * math.hypot(b.w, b.l)
    if center_distance(a, b) > ra + rb:
        return 0.0
    fa, fb = footprint(a), footprint(b)
    # shoelace areas throughout so that identical boxes give exactly 1.0
    area_a = abs(_polygon_area(fa))
    area_b = abs(_polygon_area(fb))
    inter = convex_intersection_area(fa, fb)
    union = area_a + area_b - inter
    return inter / union
