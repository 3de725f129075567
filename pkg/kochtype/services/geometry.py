"""Planar primitives, frames, cones and exact min-max line fitting."""

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import GeometryError

logger = structlog.get_logger()

PointLike = Union["Point2", Sequence[float], np.ndarray]


class Point2(NamedTuple):
    """A point of the plane."""
    x: float
    y: float


def point(x: float, y: float) -> Point2:
    """Create a point, rejecting non-finite coordinates."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise GeometryError("Point coordinates must be finite", details={"x": x, "y": y})
    return Point2(float(x), float(y))


def as_point(p: PointLike) -> Point2:
    """Coerce a pair into a validated Point2."""
    return point(float(p[0]), float(p[1]))


def as_points(points, allow_empty: bool = False) -> np.ndarray:
    """Coerce a point collection into a finite (N, 2) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        if allow_empty:
            return np.zeros((0, 2))
        raise GeometryError("Point set is empty")
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise GeometryError("Point coordinates must be finite", details={"count": int(arr.shape[0])})
    return arr


def canonical_angle(angle: float) -> float:
    """Reduce a direction angle to [0, pi)."""
    phi = math.fmod(angle, math.pi)
    if phi < 0.0:
        phi += math.pi
    if phi >= math.pi:
        phi -= math.pi
    return phi


@dataclass(frozen=True)
class Segment:
    """Closed segment with distinct endpoints."""
    a: Point2
    b: Point2

    def __post_init__(self):
        a, b = as_point(self.a), as_point(self.b)
        if a == b:
            raise GeometryError("Segment endpoints must differ", details={"a": list(a)})
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    @property
    def midpoint(self) -> Point2:
        return Point2((self.a.x + self.b.x) / 2.0, (self.a.y + self.b.y) / 2.0)

    @property
    def angle(self) -> float:
        """Direction angle of a -> b in (-pi, pi]."""
        return math.atan2(self.b.y - self.a.y, self.b.x - self.a.x)

    @property
    def direction(self) -> Tuple[float, float]:
        length = self.length
        return ((self.b.x - self.a.x) / length, (self.b.y - self.a.y) / length)


@dataclass(frozen=True)
class AffineLine:
    """Line stored canonically as (angle in [0, pi), signed offset along the left normal)."""
    angle: float
    offset: float

    @classmethod
    def from_angle(cls, through: PointLike, angle: float) -> "AffineLine":
        phi = canonical_angle(angle)
        nx, ny = -math.sin(phi), math.cos(phi)
        return cls(phi, nx * float(through[0]) + ny * float(through[1]))

    @classmethod
    def through(cls, through: PointLike, direction: PointLike) -> "AffineLine":
        dx, dy = float(direction[0]), float(direction[1])
        if dx == 0.0 and dy == 0.0:
            raise GeometryError("Line direction must be non-zero")
        return cls.from_angle(through, math.atan2(dy, dx))

    @property
    def direction(self) -> Tuple[float, float]:
        return (math.cos(self.angle), math.sin(self.angle))

    @property
    def normal(self) -> Tuple[float, float]:
        return (-math.sin(self.angle), math.cos(self.angle))

    @property
    def point(self) -> Point2:
        """Foot of the perpendicular from the origin."""
        nx, ny = self.normal
        return Point2(self.offset * nx, self.offset * ny)

    def signed_distances(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True)
        nx, ny = self.normal
        return pts[:, 0] * nx + pts[:, 1] * ny - self.offset


@dataclass(frozen=True)
class Frame:
    """Orthonormal frame: translate origin to zero, then rotate by -rotation_angle."""
    origin: Point2
    rotation_angle: float

    def apply(self, p: PointLike) -> Point2:
        q = self.apply_many([p])[0]
        return Point2(float(q[0]), float(q[1]))

    def inverse(self, q: PointLike) -> Point2:
        p = self.inverse_many([q])[0]
        return Point2(float(p[0]), float(p[1]))

    def apply_many(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True) - np.asarray(self.origin, dtype=float)
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        return np.column_stack((c * pts[:, 0] + s * pts[:, 1], -s * pts[:, 0] + c * pts[:, 1]))

    def inverse_many(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True)
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        out = np.column_stack((c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]))
        return out + np.asarray(self.origin, dtype=float)


@dataclass(frozen=True)
class AffineMap:
    """x -> matrix @ x + offset."""
    matrix: Tuple[Tuple[float, float], Tuple[float, float]]
    offset: Tuple[float, float]

    def apply_many(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True)
        return pts @ np.asarray(self.matrix, dtype=float).T + np.asarray(self.offset, dtype=float)

    @property
    def contraction(self) -> float:
        """Largest singular value of the linear part."""
        return float(np.linalg.norm(np.asarray(self.matrix, dtype=float), 2))


@dataclass(frozen=True)
class RigidMotion:
    """Optional reflection in the x-axis, then rotation, then translation."""
    rotation: float
    translation: Tuple[float, float]
    reflect: bool = False

    def apply_many(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True).copy()
        if self.reflect:
            pts[:, 1] = -pts[:, 1]
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        out = np.column_stack((c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]))
        return out + np.asarray(self.translation, dtype=float)


class FitResult(NamedTuple):
    """Best line and its min-max distance to the fitted points."""
    line: AffineLine
    width: float


def distance_to_line(p: PointLike, line: AffineLine) -> float:
    """Euclidean distance from p to the infinite line."""
    p = as_point(p)
    nx, ny = line.normal
    return abs(nx * p.x + ny * p.y - line.offset)


def frame_of_segment(s: Segment) -> Frame:
    """Frame sending the midpoint to the origin and the segment onto the x-axis."""
    return Frame(s.midpoint, s.angle)


def set_angle(s1: Segment, s2: Segment) -> float:
    """Acute angle between the lines extending two segments."""
    phi = abs(canonical_angle(s1.angle) - canonical_angle(s2.angle))
    return min(phi, math.pi - phi)


def cone_contains(apex: PointLike, axis: AffineLine, half_angle: float, p: PointLike) -> bool:
    """Check membership in the closed double cone about the axis direction at apex."""
    if not 0.0 < half_angle < math.pi / 2:
        raise GeometryError("Cone half-angle must lie in (0, pi/2)", details={"half_angle": half_angle})
    apex, p = as_point(apex), as_point(p)
    dx, dy = p.x - apex.x, p.y - apex.y
    ux, uy = axis.direction
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    return abs(across) <= math.tan(half_angle) * abs(along) + settings.geometric_tolerance


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices without collinear points (monotone chain)."""
    pts = np.unique(as_points(points), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    ordered = [tuple(p) for p in pts.tolist()]
    lower = []
    for p in ordered:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(ordered):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def minmax_fit_free(points) -> FitResult:
    """Central line of the minimum-width strip enclosing the points."""
    hull = convex_hull(points)
    if len(hull) == 1:
        return FitResult(AffineLine.from_angle(hull[0], 0.0), 0.0)
    if len(hull) == 2:
        return FitResult(AffineLine.through(hull[0], hull[1] - hull[0]), 0.0)

    m = len(hull)
    candidates = []
    j = 1
    for i in range(m):
        a, b = hull[i], hull[(i + 1) % m]
        e = b - a
        # antipodal pointer only moves forward around the hull
        while _cross(e, hull[(j + 1) % m] - a) > _cross(e, hull[j] - a):
            j = (j + 1) % m
        candidates.append((_cross(e, hull[j] - a) / math.hypot(e[0], e[1]), i))

    best = min(dist for dist, _ in candidates)
    ties = [
        (canonical_angle(math.atan2(hull[(i + 1) % m][1] - hull[i][1], hull[(i + 1) % m][0] - hull[i][0])), dist, i)
        for dist, i in candidates
        if dist <= best + settings.ball_boundary_tolerance
    ]
    _, dist, i = min(ties)
    a, b = hull[i], hull[(i + 1) % m]
    e = (b - a) / math.hypot(b[0] - a[0], b[1] - a[1])
    inward = np.array([-e[1], e[0]])
    line = AffineLine.through(a + inward * (dist / 2.0), e)
    return FitResult(line, dist / 2.0)


def minmax_fit_through(points, center: PointLike) -> FitResult:
    """Line through center minimizing the largest point distance."""
    c = np.asarray(as_point(center), dtype=float)
    offsets = as_points(points) - c
    # the optimal strip of the centrally symmetric set is centered at the origin
    symmetric = np.vstack((offsets, -offsets))
    direction = minmax_fit_free(symmetric).line.angle
    line = AffineLine.from_angle(c, direction)
    width = float(np.max(np.abs(line.signed_distances(offsets + c))))
    return FitResult(line, width)


def triangle_contains(triangle, points, slack: float = 0.0) -> np.ndarray:
    """Closed point-in-triangle test with an outward slack, vectorized over points."""
    tri = as_points(triangle)
    pts = as_points(points, allow_empty=True)
    orientation = np.sign(_cross(tri[1] - tri[0], tri[2] - tri[0]))
    if orientation == 0:
        raise GeometryError("Triangle is degenerate")
    inside = np.ones(len(pts), dtype=bool)
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        e = b - a
        signed = orientation * (e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])) / math.hypot(e[0], e[1])
        inside &= signed >= -slack
    return inside


def polyline_length_in_ball(vertices, center: PointLike, rho: float) -> float:
    """Exact length of the part of a polyline inside the closed ball B_rho(center)."""
    v = as_points(vertices)
    c = np.asarray(as_point(center), dtype=float)
    a = v[:-1] - c
    d = v[1:] - v[:-1]
    dd = np.einsum("ij,ij->i", d, d)
    ad = np.einsum("ij,ij->i", a, d)
    aa = np.einsum("ij,ij->i", a, a)
    disc = ad * ad - dd * (aa - rho * rho)
    hit = (disc > 0.0) & (dd > 0.0)
    root = np.sqrt(np.where(hit, disc, 0.0))
    safe = np.where(dd > 0.0, dd, 1.0)
    t0 = np.clip((-ad - root) / safe, 0.0, 1.0)
    t1 = np.clip((-ad + root) / safe, 0.0, 1.0)
    lengths = np.where(hit, (t1 - t0) * np.sqrt(dd), 0.0)
    return math.fsum(lengths.tolist())


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]
