"""Planar polygon helpers for PQ regions (x = p, y = q)."""
from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    pass


def shoelace(poly) -> float:
    """Signed area of a polygon given as ``(k, 2)`` vertices; closure optional."""
    pts = np.asarray(poly, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, c):
    return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])


def segments_intersect(a, b, c, d, proper=False) -> bool:
    """True when closed segments ``ab`` and ``cd`` share at least one point.

    With ``proper=True`` only transversal crossings count (touching does not).
    """
    o1, o2, o3, o4 = _orient(a, b, c), _orient(a, b, d), _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0 and o2 < 0) or (o1 < 0 and o2 > 0)) and ((o3 > 0 and o4 < 0) or (o3 < 0 and o4 > 0)):
        return True
    if proper:
        return False
    return ((o1 == 0 and _on_segment(a, b, c)) or (o2 == 0 and _on_segment(a, b, d))
            or (o3 == 0 and _on_segment(c, d, a)) or (o4 == 0 and _on_segment(c, d, b)))


def self_intersections(poly) -> list[tuple[int, int]]:
    """Pairs of non-adjacent edges of the closed polygon that cross each other.

    Consecutive duplicate vertices (zero-length edges) are dropped first.
    Touching without crossing (a pinched slice with equal bounds) is allowed.
    """
    pts = [tuple(p) for p in np.asarray(poly, dtype=float)]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    clean = []
    for p in pts:
        if not clean or clean[-1] != p:
            clean.append(p)
    if len(clean) > 1 and clean[0] == clean[-1]:
        clean.pop()
    k = len(clean)
    if k < 4:
        return []
    edges = [(clean[i], clean[(i + 1) % k]) for i in range(k)]
    bad = []
    for i in range(k):
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            if segments_intersect(*edges[i], *edges[j], proper=True):
                bad.append((i, j))
    return bad


def polygon_area(poly) -> float:
    """Unsigned shoelace area; raises :class:`GeometryError` on a self-intersecting polygon."""
    bad = self_intersections(poly)
    if bad:
        raise GeometryError(f"self-intersecting polygon (edge pairs {bad[:3]})")
    return abs(shoelace(poly))


def slice_polygon(q, lo, hi) -> np.ndarray:
    """Closed boundary from per-q intervals ``[lo, hi]``.

    Upper bounds are walked with increasing q, lower bounds with decreasing q,
    then back to the first vertex.  Slices with a NaN bound are skipped.
    Returns an ``(k, 2)`` array of ``(p, q)``; empty when no slice survives.
    """
    q, lo, hi = (np.asarray(a, dtype=float) for a in (q, lo, hi))
    ok = np.isfinite(lo) & np.isfinite(hi)
    if not ok.any():
        return np.zeros((0, 2))
    q, lo, hi = q[ok], lo[ok], hi[ok]
    up = np.column_stack([hi, q])
    down = np.column_stack([lo, q])[::-1]
    return np.vstack([up, down, up[:1]])


def interval_at(q_grid, lo, hi, q):
    """Interval at ``q`` by linear interpolation between surviving neighbouring slices.

    Returns ``None`` outside the surviving span.
    """
    q_grid, lo, hi = (np.asarray(a, dtype=float) for a in (q_grid, lo, hi))
    ok = np.isfinite(lo) & np.isfinite(hi)
    if not ok.any():
        return None
    qs, los, his = q_grid[ok], lo[ok], hi[ok]
    if q < qs[0] or q > qs[-1]:
        return None
    return float(np.interp(q, qs, los)), float(np.interp(q, qs, his))
