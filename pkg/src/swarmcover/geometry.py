"""Polygonal domains and the boundary queries the swarm needs.

Points are numpy arrays of shape ``(2,)``. A :class:`Polygon` is immutable and
always stored counter-clockwise; edge ``k`` joins vertex ``k - 1`` to vertex
``k``, so edge 0 is the closing edge. Boundary points count as inside.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from swarmcover import kernels

BOUNDARY_TOL = 1e-9


class GeometryError(ValueError):
    pass


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15 and \
            min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def is_simple(vertices) -> bool:
    """O(k^2) pairwise check that no two non-adjacent edges meet."""
    v = np.asarray(vertices, dtype=float)
    k = len(v)
    edges = [(v[i - 1], v[i]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            # adjacent edges share a vertex
            if j == i + 1 or (i == 0 and j == k - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polygon vertices must be finite")
        area = _signed_area(v)
        if abs(area) <= 1e-14:
            raise GeometryError("degenerate polygon (zero area)")
        if area < 0:
            v = v[::-1].copy()
        if not is_simple(v):
            raise GeometryError("polygon is not simple")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def bounds(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]

    def edge(self, k):
        return self.vertices[k - 1], self.vertices[k]

    def to_json(self) -> str:
        return json.dumps([[float(x), float(y)] for x, y in self.vertices])

    @classmethod
    def from_json(cls, text: str) -> "Polygon":
        return cls(np.array(json.loads(text), dtype=np.float64))


@dataclass(frozen=True)
class BoundaryProjection:
    point: np.ndarray
    offset: np.ndarray
    distance: float
    inside: float  # -1 inside (boundary included), +1 outside
    edge: int
    # offset / distance; the inward edge normal when distance == 0
    direction: np.ndarray


def unit_square() -> Polygon:
    return Polygon([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def polygon_area(poly: Polygon) -> float:
    return _signed_area(poly.vertices)


def project_to_boundary(poly: Polygon, p) -> BoundaryProjection:
    pt = np.asarray(p, dtype=np.float64).reshape(1, 2)
    proj, dist, ind, edge = kernels.project_points(poly.vertices, pt)
    direction = kernels.boundary_directions(poly.vertices, pt, proj, dist, edge)[0]
    return BoundaryProjection(
        point=proj[0],
        offset=pt[0] - proj[0],
        distance=float(dist[0]),
        inside=float(ind[0]),
        edge=int(edge[0]),
        direction=direction,
    )


def contains(poly: Polygon, p) -> bool:
    return project_to_boundary(poly, p).inside < 0


def signed_distance(poly: Polygon, p) -> float:
    proj = project_to_boundary(poly, p)
    return proj.inside * proj.distance


def coverage_radius(poly: Polygon, n: int) -> float:
    if n < 1:
        raise ValueError("coverage radius needs at least one agent")
    return math.sqrt(polygon_area(poly) / n)


def ball_in_domain(poly: Polygon, center, radius: float) -> bool:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    proj = project_to_boundary(poly, center)
    return proj.inside < 0 and proj.distance >= radius - BOUNDARY_TOL


def _circle_polygon(angles, radii, area):
    pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    scale = math.sqrt(area / abs(_signed_area(pts)))
    return pts * scale


def _start_angle(sides):
    # flat bottom edge
    return -0.5 * math.pi + math.pi / sides


def make_regular_polygon(sides: int, area: float = 1.0) -> Polygon:
    if sides < 3:
        raise GeometryError("a polygon needs at least 3 sides")
    if area <= 0:
        raise GeometryError("area must be positive")
    angles = _start_angle(sides) + 2.0 * math.pi * np.arange(sides) / sides
    return Polygon(_circle_polygon(angles, np.ones(sides), area))


def make_random_polygon(seed: int, sides: int, irregularity: float = 0.5,
                        area: float = 1.0, max_retries: int = 100) -> Polygon:
    """Jitter angles and radii of a regular polygon, then rescale to ``area``.

    Angular steps are perturbed by up to ``irregularity`` of the nominal step
    and radii by up to ``irregularity`` of the unit radius, so
    ``irregularity=0`` gives back :func:`make_regular_polygon`.
    """
    if sides < 3:
        raise GeometryError("a polygon needs at least 3 sides")
    if not 0.0 <= irregularity < 1.0:
        raise GeometryError("irregularity must lie in [0, 1)")
    if area <= 0:
        raise GeometryError("area must be positive")
    if irregularity == 0.0:
        return make_regular_polygon(sides, area)
    rng = np.random.default_rng(seed)
    step = 2.0 * math.pi / sides
    for _ in range(max_retries):
        steps = step * (1.0 + irregularity * rng.uniform(-1.0, 1.0, sides))
        steps *= 2.0 * math.pi / steps.sum()
        angles = _start_angle(sides) + np.concatenate([[0.0], np.cumsum(steps[:-1])])
        radii = 1.0 + irregularity * rng.uniform(-1.0, 1.0, sides)
        pts = _circle_polygon(angles, radii, area)
        try:
            return Polygon(pts)
        except GeometryError:
            continue
    raise GeometryError(f"no simple polygon after {max_retries} attempts (seed={seed})")
