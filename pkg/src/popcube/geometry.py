"""Small planar geometry kernel: shoelace areas, point-in-polygon,
convex clipping, and a brute-force simplicity check.

Everything works on plain sequences of (x, y) tuples so it can be used in
either the local meter plane or raw lon/lat degree space.
"""

from __future__ import annotations


def polygon_area(poly) -> float:
    """Unsigned shoelace area of a ring (closing edge implied)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def point_in_polygon(x: float, y: float, poly) -> bool:
    """Even-odd ray-casting test. Points exactly on an edge are undefined."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def clip_polygon_rect(poly, xmin: float, ymin: float, xmax: float, ymax: float):
    """Clip a polygon against an axis-aligned rectangle (Sutherland-Hodgman).

    Exact for convex subjects; adequate for the convex cells used here.
    Returns the clipped ring (possibly empty).
    """
    def clip_edge(points, inside, intersect):
        out = []
        n = len(points)
        for i in range(n):
            cur = points[i]
            prv = points[i - 1]
            cin, pin = inside(cur), inside(prv)
            if cin:
                if not pin:
                    out.append(intersect(prv, cur))
                out.append(cur)
            elif pin:
                out.append(intersect(prv, cur))
        return out

    def x_cross(p, q, x0):
        t = (x0 - p[0]) / (q[0] - p[0])
        return (x0, p[1] + t * (q[1] - p[1]))

    def y_cross(p, q, y0):
        t = (y0 - p[1]) / (q[1] - p[1])
        return (p[0] + t * (q[0] - p[0]), y0)

    pts = list(poly)
    pts = clip_edge(pts, lambda p: p[0] >= xmin, lambda p, q: x_cross(p, q, xmin))
    if not pts:
        return []
    pts = clip_edge(pts, lambda p: p[0] <= xmax, lambda p, q: x_cross(p, q, xmax))
    if not pts:
        return []
    pts = clip_edge(pts, lambda p: p[1] >= ymin, lambda p, q: y_cross(p, q, ymin))
    if not pts:
        return []
    pts = clip_edge(pts, lambda p: p[1] <= ymax, lambda p, q: y_cross(p, q, ymax))
    return pts


def _segments_cross(a, b, c, d) -> bool:
    # Proper intersection only; shared endpoints do not count.
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def polygon_is_simple(poly) -> bool:
    """True when no two non-adjacent edges properly intersect. O(n^2)."""
    n = len(poly)
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True
