"""Cap-tree construction of Koch-type sets."""

import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import shapely
import structlog
from shapely.geometry import Polygon

from kochtype.config import settings
from kochtype.exceptions import (
    ConstructionError,
    DepthLimitError,
    KochTypeException,
    ScheduleError,
)
from kochtype.models import OpenSetReport
from kochtype.services.geometry import (
    AffineMap,
    Point2,
    Segment,
    as_points,
    frame_of_segment,
    triangle_contains,
)
from kochtype.services.schedules import AEpsSchedule, AngleSchedule, check_angle

logger = structlog.get_logger()

UNIT_BASE = Segment(Point2(0.0, 0.0), Point2(1.0, 0.0))


class DyadicIndex(NamedTuple):
    """Names segment A_{n,i}, cap T_{n,i} and interval D_{n,i} at once."""
    n: int
    i: int

    @property
    def children(self) -> Tuple["DyadicIndex", "DyadicIndex"]:
        return DyadicIndex(self.n + 1, 2 * self.i), DyadicIndex(self.n + 1, 2 * self.i + 1)

    @property
    def parent(self) -> Optional["DyadicIndex"]:
        return None if self.n == 0 else DyadicIndex(self.n - 1, self.i // 2)

    def ancestor(self, stage: int) -> "DyadicIndex":
        return DyadicIndex(stage, self.i >> (self.n - stage))


def dyadic(n: int, i: int) -> DyadicIndex:
    """Create a validated dyadic index."""
    if n < 0 or not 0 <= i < 2 ** n:
        raise ConstructionError(f"Invalid dyadic index ({n}, {i})", details={"n": n, "i": i})
    return DyadicIndex(int(n), int(i))


@dataclass(frozen=True)
class Cap:
    """Isosceles triangle erected on a base segment."""
    index: DyadicIndex
    base: Segment
    apex: Point2
    theta: float
    orientation: int  # +1: apex left of base.a -> base.b, -1: right

    @property
    def height(self) -> float:
        return self.base.length / 2.0 * math.tan(self.theta)

    @property
    def triangle(self) -> np.ndarray:
        return np.array([self.base.a, self.apex, self.base.b], dtype=float)


@dataclass(frozen=True)
class Polyline:
    """Stage approximation as an ordered vertex array (2**stage + 1 rows)."""
    vertices: np.ndarray
    stage: int

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.hypot(*np.diff(self.vertices, axis=0).T)


@dataclass(frozen=True)
class EdgeBallSpec:
    """Balls removed around the ordered edge points."""
    points: np.ndarray
    radii: np.ndarray
    eps: float

    def covers(self, points) -> np.ndarray:
        """Mask of points lying in some open ball."""
        pts = as_points(points, allow_empty=True)
        hit = np.zeros(len(pts), dtype=bool)
        for center, radius in zip(self.points, self.radii):
            hit |= np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) < radius
        return hit


def root_orientation(base: Segment) -> int:
    """Side of the root apex: larger apex x wins, then larger apex y."""
    dx, dy = base.direction
    left_x, left_y = -dy, dx
    if abs(left_x) > settings.geometric_tolerance:
        return 1 if left_x > 0 else -1
    return 1 if left_y > 0 else -1


def cap_on_segment(
    base: Segment,
    theta: float,
    orientation_hint: Optional[Cap] = None,
    index: Optional[DyadicIndex] = None
) -> Cap:
    """Erect the cap of base angle theta on base, facing into the hint cap when given."""
    check_angle(theta, "cap", allow_zero=True)
    dx, dy = base.direction
    left = np.array([-dy, dx])
    if orientation_hint is None:
        orientation = root_orientation(base)
    else:
        centroid = orientation_hint.triangle.mean(axis=0)
        side = dx * (centroid[1] - base.a.y) - dy * (centroid[0] - base.a.x)
        if abs(side) > settings.geometric_tolerance * base.length:
            orientation = 1 if side > 0 else -1
        else:
            orientation = -orientation_hint.orientation
    height = base.length / 2.0 * math.tan(theta)
    apex = np.asarray(base.midpoint) + orientation * height * left
    if index is None:
        index = DyadicIndex(0, 0) if orientation_hint is None else orientation_hint.index.children[0]
    return Cap(index, base, Point2(float(apex[0]), float(apex[1])), float(theta), orientation)


class CapTree:
    """Immutable cap construction to a fixed depth, stored stage by stage."""

    def __init__(
        self,
        schedule: AngleSchedule,
        base_segment: Segment,
        depth: int,
        vertices: List[np.ndarray],
        apexes: List[np.ndarray],
        thetas: List[np.ndarray],
        orientation: int
    ):
        self.schedule = schedule
        self.base_segment = base_segment
        self.depth = depth
        self.root_orientation = orientation
        self._vertices = vertices
        self._apexes = apexes
        self._thetas = thetas
        for arr in vertices + apexes + thetas:
            arr.flags.writeable = False

    def _check_stage(self, stage: int, limit: Optional[int] = None) -> None:
        limit = self.depth if limit is None else limit
        if not 0 <= stage <= limit:
            raise ConstructionError(
                f"Stage {stage} exceeds tree depth {self.depth}",
                details={"stage": stage, "depth": self.depth}
            )

    def vertices(self, stage: int) -> np.ndarray:
        self._check_stage(stage)
        return self._vertices[stage]

    def apexes(self, stage: int) -> np.ndarray:
        self._check_stage(stage)
        return self._apexes[stage]

    def thetas(self, stage: int) -> np.ndarray:
        self._check_stage(stage)
        return self._thetas[stage]

    def orientation(self, stage: int) -> int:
        """Apex side of every stage cap relative to its own base direction."""
        return self.root_orientation * (-1) ** stage

    def cap(self, idx: DyadicIndex) -> Cap:
        n, i = idx
        self._check_stage(n)
        if not 0 <= i < 2 ** n:
            raise ConstructionError(f"Invalid dyadic index ({n}, {i})", details={"n": n, "i": i})
        v = self._vertices[n]
        base = Segment(Point2(*v[i]), Point2(*v[i + 1]))
        apex = self._apexes[n][i]
        return Cap(DyadicIndex(n, i), base, Point2(float(apex[0]), float(apex[1])), float(self._thetas[n][i]), self.orientation(n))

    @property
    def caps(self) -> "CapMapping":
        return CapMapping(self)

    @property
    def cap_count(self) -> int:
        return 2 ** (self.depth + 1) - 1

    def triangles(self, stage: int) -> np.ndarray:
        """(2**stage, 3, 2) array of cap triangles a, apex, b."""
        v = self.vertices(stage)
        return np.stack((v[:-1], self._apexes[stage], v[1:]), axis=1)


class CapMapping(Mapping):
    """Read-only DyadicIndex -> Cap view materializing caps on access."""

    def __init__(self, tree: CapTree):
        self._tree = tree

    def __getitem__(self, idx) -> Cap:
        n, i = idx
        if not (0 <= n <= self._tree.depth and 0 <= i < 2 ** n):
            raise KeyError(idx)
        return self._tree.cap(DyadicIndex(n, i))

    def __iter__(self) -> Iterator[DyadicIndex]:
        for n in range(self._tree.depth + 1):
            for i in range(2 ** n):
                yield DyadicIndex(n, i)

    def __len__(self) -> int:
        return self._tree.cap_count


def build_tree(schedule: AngleSchedule, base: Segment = UNIT_BASE, depth: int = 0) -> CapTree:
    """Build the full binary cap tree down to the given depth."""
    if depth < 0:
        raise ConstructionError("Depth must be non-negative", details={"depth": depth})
    if depth > settings.max_depth:
        raise DepthLimitError(
            f"Depth {depth} exceeds the guard of {settings.max_depth}",
            details={"depth": depth, "max_depth": settings.max_depth}
        )

    try:
        orientation = root_orientation(base)
        vertices = [np.array([base.a, base.b], dtype=float)]
        apexes: List[np.ndarray] = []
        thetas: List[np.ndarray] = []
        for n in range(depth + 1):
            stage_thetas = np.asarray(schedule.stage_thetas(n), dtype=float)
            if n > 0:
                parents = np.repeat(thetas[-1], 2)
                bad = np.flatnonzero(stage_thetas > parents + settings.angle_tolerance)
                if bad.size:
                    i = int(bad[0])
                    raise ScheduleError(
                        f"Angle at ({n}, {i}) exceeds its parent's angle",
                        details={"n": n, "i": i, "theta": float(stage_thetas[i]), "parent_theta": float(parents[i])}
                    )
            v = vertices[-1]
            d = v[1:] - v[:-1]
            lengths = np.hypot(d[:, 0], d[:, 1])
            left = np.column_stack((-d[:, 1], d[:, 0])) / lengths[:, None]
            heights = lengths / 2.0 * np.tan(stage_thetas)
            sign = orientation * (-1) ** n
            apex = (v[:-1] + v[1:]) / 2.0 + sign * heights[:, None] * left
            apexes.append(apex)
            thetas.append(stage_thetas)
            if n < depth:
                nxt = np.empty((2 * len(v) - 1, 2))
                nxt[0::2] = v
                nxt[1::2] = apex
                vertices.append(nxt)

        tree = CapTree(schedule, base, depth, vertices, apexes, thetas, orientation)
        logger.info("Built cap tree", schedule=schedule.spec, depth=depth, caps=tree.cap_count)
        return tree

    except KochTypeException:
        raise
    except Exception as e:
        logger.error("Failed to build cap tree", schedule=schedule.spec, depth=depth, error=str(e))
        raise ConstructionError(f"Failed to build cap tree: {str(e)}")


def containment_violations(tree: CapTree, slack: Optional[float] = None) -> int:
    """Count child caps not contained in their parent triangle."""
    slack = settings.containment_slack if slack is None else slack
    violations = 0
    for n in range(1, tree.depth + 1):
        parents = np.repeat(tree.triangles(n - 1), 2, axis=0)
        children = tree.triangles(n)
        ok = np.ones(len(children), dtype=bool)
        signs = np.sign(_cross(parents[:, 1] - parents[:, 0], parents[:, 2] - parents[:, 0]))
        for k in range(3):
            a, b = parents[:, k], parents[:, (k + 1) % 3]
            e = b - a
            norm = np.hypot(e[:, 0], e[:, 1])
            for vertex in range(3):
                p = children[:, vertex]
                signed = signs * _cross(e, p - a) / norm
                # flat parents have no interior; their children must stay on the segment
                ok &= np.where(signs == 0, np.abs(_cross(e, p - a)) / norm <= slack, signed >= -slack)
        violations += int(np.count_nonzero(~ok))
    return violations


def neighbour_turn_violations(tree: CapTree, stage: Optional[int] = None) -> int:
    """Count adjacent stage bases whose turn leaves [2t, 2t + t_L + t_R].

    t is the angle of the lowest common ancestor cap and t_L, t_R the angles of its
    two child caps on the way down (zero for siblings). Orientations alternate by
    stage, so the remaining angles enter as alternating sums bounded by t_L and t_R.
    """
    stages = range(1, tree.depth + 1) if stage is None else [stage]
    tol = settings.geometric_tolerance
    violations = 0
    for n in stages:
        tree._check_stage(n)
        if n == 0:
            continue
        d = np.diff(tree.vertices(n), axis=0)
        turn = np.abs(np.arctan2(_cross(d[:-1], d[1:]), np.einsum("ij,ij->i", d[:-1], d[1:])))
        i = np.arange(2 ** n - 1)
        # i ^ (i + 1) is 2**k - 1, k the number of stages up to the common ancestor
        k = np.round(np.log2((i ^ (i + 1)) + 1)).astype(np.int64)
        lower = np.empty(len(i))
        upper = np.empty(len(i))
        for kk in np.unique(k):
            sel = k == kk
            m, j = n - int(kk), i[sel] >> kk
            theta = tree.thetas(m)[j]
            below = tree.thetas(m + 1)[2 * j] + tree.thetas(m + 1)[2 * j + 1] if kk >= 2 else 0.0
            lower[sel] = 2.0 * theta
            upper[sel] = 2.0 * theta + below
        violations += int(np.count_nonzero((turn < lower - tol) | (turn > upper + tol)))
    return violations


def separation_violations(tree: CapTree, idx: DyadicIndex) -> int:
    """Count deepest-polyline vertices outside the pieces j, |i - j| <= 1, that fall in R_{n,i}.

    R_{n,i} is, in the frame of the stage-n base, the x-range of the three pieces
    times [-2 l, 2 l] with l the deepest-polyline length of piece i. Only defined
    while the root angle, the largest in the tree, stays below flat_angle_bound.
    """
    n, i = idx
    tree._check_stage(n)
    if not 0 <= i < 2 ** n:
        raise ConstructionError(f"Invalid dyadic index ({n}, {i})", details={"n": n, "i": i})
    steepest = float(tree.thetas(0).max())
    if steepest >= settings.flat_angle_bound:
        raise ConstructionError(
            "Separation rectangles need every angle below the flat angle bound",
            details={"theta": steepest, "flat_angle_bound": settings.flat_angle_bound}
        )

    vertices = tree.vertices(tree.depth)
    s = 2 ** (tree.depth - n)
    local = frame_of_segment(tree.cap(DyadicIndex(n, i)).base).apply_many(vertices)
    piece = local[i * s:(i + 1) * s + 1]
    length = float(np.hypot(*np.diff(piece, axis=0).T).sum())
    lo, hi = max(i - 1, 0) * s, min(i + 2, 2 ** n) * s
    near = local[lo:hi + 1, 0]

    tol = settings.geometric_tolerance
    inside = (local[:, 0] > near.min() + tol) & (local[:, 0] < near.max() - tol) & (np.abs(local[:, 1]) <= 2.0 * length)
    inside[lo:hi + 1] = False
    return int(np.count_nonzero(inside))


def polyline(tree: CapTree, stage: int) -> Polyline:
    """Stage polyline, ordered left to right."""
    return Polyline(tree.vertices(stage), stage)


def edge_points(tree: CapTree) -> np.ndarray:
    """Vertices of the deepest polyline in creation order: base.a, base.b, then apexes stage by stage.

    Apexes of stage-n caps are vertices of the stage n + 1 polyline, so a tree of depth d
    yields 2**d + 1 points: the root apex appears from depth 1 on and a depth-0 tree gives
    only the base endpoints.
    """
    parts = [np.array([tree.base_segment.a, tree.base_segment.b], dtype=float)]
    parts.extend(tree.apexes(n) for n in range(tree.depth))
    return np.vstack(parts)


def edge_ball_radius_bounds(eps: float, count: int) -> np.ndarray:
    """rho_k = 4**(1-k) * rho_1 with rho_1 = 2**-9 * sqrt(1 + 112 eps**2), k = 1..count."""
    rho1 = 0.25 * 2.0 ** -7 * math.sqrt(1.0 + 7.0 * 16.0 * eps ** 2)
    return rho1 * np.power(4.0, -np.arange(count, dtype=float))


def edge_ball_spec(tree: CapTree, eps: float, count: Optional[int] = None) -> EdgeBallSpec:
    """Radii min(rho_k, d(e_k, earlier polylines) / 2) around the first count edge points."""
    if not isinstance(tree.schedule, AEpsSchedule):
        raise ConstructionError("Edge balls are defined for aeps trees", details={"schedule": tree.schedule.spec})
    if abs(tree.schedule.eps - eps) > settings.geometric_tolerance:
        raise ConstructionError("eps does not match the tree's schedule", details={"eps": eps, "tree_eps": tree.schedule.eps})

    points = edge_points(tree)
    count = min(len(points), settings.edge_ball_count) if count is None else count
    if count > len(points):
        raise ConstructionError(
            f"Tree of depth {tree.depth} has only {len(points)} edge points, {count} requested",
            details={"depth": tree.depth, "available": len(points), "requested": count}
        )

    radii = edge_ball_radius_bounds(eps, count)
    # e_3 onward are apexes; the apex created at stage m sits at offset 2 + (2**m - 1)
    m = 0
    while 2 + 2 ** m - 1 < count:
        start, stop = 2 + 2 ** m - 1, min(2 + 2 ** (m + 1) - 1, count)
        apex = shapely.points(points[start:stop])
        distance = shapely.distance(shapely.LineString(tree.vertices(m)), apex)
        if m >= 1:
            distance = np.minimum(distance, shapely.distance(shapely.LineString(tree.vertices(m - 1)), apex))
        radii[start:stop] = np.minimum(radii[start:stop], distance / 2.0)
        m += 1

    logger.info("Computed edge balls", eps=eps, count=count, total_radius=float(radii.sum()))
    return EdgeBallSpec(points[:count].copy(), radii, eps)


def sample_limit_set(tree: CapTree, count: int, exclusion: Optional[EdgeBallSpec] = None) -> np.ndarray:
    """Midpoints of count evenly spread deepest segments, minus any exclusion balls."""
    total = 2 ** tree.depth
    if not 1 <= count <= total:
        raise ConstructionError(
            f"Sample size {count} must lie in [1, {total}] at depth {tree.depth}",
            details={"count": count, "segments": total}
        )
    v = tree.vertices(tree.depth)
    idx = ((np.arange(count) + 0.5) * total / count).astype(np.int64)
    points = (v[idx] + v[idx + 1]) / 2.0
    if exclusion is not None:
        points = points[~exclusion.covers(points)]
    return points


def weighted_limit_sample(tree: CapTree, exclusion: Optional[EdgeBallSpec] = None) -> Tuple[np.ndarray, np.ndarray]:
    """All deepest midpoints with the segment length each one stands for."""
    v = tree.vertices(tree.depth)
    points = (v[:-1] + v[1:]) / 2.0
    weights = np.hypot(*np.diff(v, axis=0).T)
    if exclusion is not None:
        keep = ~exclusion.covers(points)
        points, weights = points[keep], weights[keep]
    return points, weights


def densify(vertices, spacing: float) -> np.ndarray:
    """Points along a polyline no farther apart than spacing, vertices included."""
    v = as_points(vertices)
    if spacing <= 0:
        raise ConstructionError("Spacing must be positive", details={"spacing": spacing})
    d = np.diff(v, axis=0)
    pieces = np.maximum(1, np.ceil(np.hypot(d[:, 0], d[:, 1]) / spacing).astype(np.int64))
    seg = np.repeat(np.arange(len(d)), pieces)
    starts = np.repeat(np.cumsum(pieces) - pieces, pieces)
    t = (np.arange(int(pieces.sum())) - starts) / np.repeat(pieces, pieces)
    out = v[seg] + t[:, None] * d[seg]
    return np.vstack((out, v[-1:]))


def ifs_maps_gamma(eps: float) -> Tuple[AffineMap, AffineMap]:
    """Similarities S1, S2 of the constant-height family; S1 builds the right child, S2 the left."""
    if not 0.0 < eps < 0.25:
        raise ScheduleError("eps must lie in (0, 1/4)", details={"eps": eps})
    theta = math.atan(2.0 * eps)
    l = math.sqrt(0.25 + eps ** 2)
    c, s = l * math.cos(theta), l * math.sin(theta)
    # both maps reverse orientation so the image caps face into the root cap
    s1 = AffineMap(((c, -s), (-s, -c)), (0.5, eps))
    s2 = AffineMap(((c, s), (s, -c)), (0.0, 0.0))
    return s1, s2


def open_set_condition(eps: float) -> OpenSetReport:
    """Check the two maps against the kite {(0,0), (1/2, 3eps/2), (1,0), (1/2, -eps/2)} and the root cap."""
    s1, s2 = ifs_maps_gamma(eps)
    kite = np.array([(0.0, 0.0), (0.5, 1.5 * eps), (1.0, 0.0), (0.5, -0.5 * eps)])
    k1, k2 = Polygon(s1.apply_many(kite)), Polygon(s2.apply_many(kite))
    overlap = k1.intersection(k2).area

    root = np.array([(0.0, 0.0), (0.5, eps), (1.0, 0.0)])
    inside = all(
        bool(np.all(triangle_contains(root, s.apply_many(root), settings.containment_slack)))
        for s in (s1, s2)
    )
    return OpenSetReport(
        contraction=s1.contraction,
        images_inside=inside,
        overlap_area=float(overlap),
        disjoint=bool(overlap <= settings.geometric_tolerance * Polygon(kite).area)
    )


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
