"""Stage maps, dyadic tracking and stretch products of the parametrizing bijection."""

import math
from typing import List, NamedTuple, Optional, Union

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import ConstructionError, ScheduleError
from kochtype.models import CellStatus, CellVerdict, LambdaClassification, LipschitzScan
from kochtype.services.construction import CapTree, DyadicIndex
from kochtype.services.schedules import AngleSchedule, TableSchedule

logger = structlog.get_logger()


class StretchProduct(NamedTuple):
    """Length magnification of the cell's image segment."""
    index: DyadicIndex
    value: float


def log_secant(thetas) -> np.ndarray:
    """-log cos(theta), computed as log1p(tan(theta)**2) / 2 to keep small angles accurate."""
    t = np.tan(np.asarray(thetas, dtype=float))
    return 0.5 * np.log1p(t * t)


class StageMap:
    """f_n: moves each point of the stage-n polyline onto the two short sides of its cap."""

    def __init__(self, tree: CapTree, n: int):
        if not 0 <= n < tree.depth:
            raise ConstructionError(
                f"Stage map {n} needs a tree deeper than {tree.depth}",
                details={"stage": n, "depth": tree.depth}
            )
        self.tree = tree
        self.n = n
        v = tree.vertices(n)
        self._a = v[:-1]
        d = v[1:] - v[:-1]
        self._length = np.hypot(d[:, 0], d[:, 1])
        self._unit = d / self._length[:, None]
        self._mid = (v[:-1] + v[1:]) / 2.0
        self._slope = np.tan(tree.thetas(n)) * tree.orientation(n)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        rel = pts[:, None, :] - self._a[None, :, :]
        t = np.clip(np.einsum("psk,sk->ps", rel, self._unit), 0.0, self._length[None, :])
        foot = self._a[None, :, :] + t[..., None] * self._unit[None, :, :]
        dist = np.hypot(*(pts[:, None, :] - foot).transpose(2, 0, 1))
        seg = np.argmin(dist, axis=1)
        rows = np.arange(len(pts))
        if np.any(dist[rows, seg] > settings.geometric_tolerance):
            worst = int(np.argmax(dist[rows, seg]))
            raise ConstructionError(
                f"Point is not on the stage-{self.n} polyline",
                details={"point": pts[worst].tolist(), "distance": float(dist[worst, seg[worst]])}
            )
        # tent map in the segment frame: x' along the base from the midpoint, y' = tan(theta) (L/2 - |x'|)
        half = self._length[seg] / 2.0
        x_frame = t[rows, seg] - half
        y_frame = self._slope[seg] * (half - np.abs(x_frame))
        unit = self._unit[seg]
        left = np.column_stack((-unit[:, 1], unit[:, 0]))
        return self._mid[seg] + x_frame[:, None] * unit + y_frame[:, None] * left


def f_stage(tree: CapTree, n: int) -> StageMap:
    """Descriptor of the stage-n map."""
    return StageMap(tree, n)


def composite_map(tree: CapTree, x: Union[float, np.ndarray], n: int) -> np.ndarray:
    """F_n(x) = f_n o ... o f_0 of the base point at parameter x; affine on every D_{n+1,i}."""
    if not 0 <= n < tree.depth:
        raise ConstructionError(
            f"Composite map {n} needs a tree deeper than {tree.depth}",
            details={"stage": n, "depth": tree.depth}
        )
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((xs < 0.0) | (xs > 1.0)) or not np.all(np.isfinite(xs)):
        raise ConstructionError("Parameter must lie in [0, 1]", details={"x": xs[(xs < 0.0) | (xs > 1.0)][:3].tolist()})
    v = tree.vertices(n + 1)
    cells = 2 ** (n + 1)
    scaled = xs * cells
    idx = np.minimum(np.floor(scaled).astype(np.int64), cells - 1)
    frac = (scaled - idx)[:, None]
    out = v[idx] + frac * (v[idx + 1] - v[idx])
    return out[0] if np.ndim(x) == 0 else out


def composed_stage_maps(tree: CapTree, x: Union[float, np.ndarray], n: int) -> np.ndarray:
    """F_n evaluated literally as the composition of the stage maps."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    base = tree.base_segment
    pts = np.asarray(base.a) + xs[:, None] * (np.asarray(base.b) - np.asarray(base.a))
    for k in range(n + 1):
        pts = StageMap(tree, k)(pts)
    return pts[0] if np.ndim(x) == 0 else pts


def dyadic_of_point(x: float, n: int) -> DyadicIndex:
    """Cell of order n containing x; half-open cells, with x = 1 in the last one."""
    if not (math.isfinite(x) and 0.0 <= x <= 1.0):
        raise ConstructionError("Parameter must lie in [0, 1]", details={"x": x})
    if n < 0:
        raise ConstructionError("Stage must be non-negative", details={"n": n})
    cells = 2 ** n
    return DyadicIndex(n, min(int(math.floor(x * cells)), cells - 1))


def stretch_product(tree: CapTree, idx: DyadicIndex) -> StretchProduct:
    """Product of 1/cos over the caps strictly above stage idx.n on the path to idx."""
    n, i = idx
    if not (0 <= n <= tree.depth and 0 <= i < 2 ** n):
        raise ConstructionError(f"Index ({n}, {i}) is outside the tree", details={"n": n, "i": i, "depth": tree.depth})
    angles = [tree.thetas(j)[i >> (n - j)] for j in range(n)]
    return StretchProduct(DyadicIndex(n, i), math.exp(math.fsum(log_secant(angles).tolist())))


def stage_stretch_products(tree: CapTree, n: int) -> np.ndarray:
    """Stretch products of all 2**n cells at stage n, caps strictly above stage n only."""
    if not 0 <= n <= tree.depth + 1:
        raise ConstructionError(f"Stage {n} is outside the tree", details={"n": n, "depth": tree.depth})
    logs = np.zeros(1)
    for j in range(n):
        logs = np.repeat(logs + log_secant(tree.thetas(j)), 2)
    return np.exp(logs)


def stage_stretch_products_through(tree: CapTree, n: int) -> np.ndarray:
    """Stage products that also include each cell's own cap at stage n."""
    if not 0 <= n <= tree.depth:
        raise ConstructionError(f"Stage {n} is outside the tree", details={"n": n, "depth": tree.depth})
    return stage_stretch_products(tree, n) / np.cos(tree.thetas(n))


def path_stretch(schedule: AngleSchedule, n: int, i: int = 0) -> float:
    """Stretch product of cell (n, i) computed from the schedule alone."""
    if n < 0 or not 0 <= i < 2 ** n:
        raise ConstructionError(f"Invalid dyadic index ({n}, {i})", details={"n": n, "i": i})
    if schedule.stage_uniform:
        angles = schedule.thetas(np.arange(n))
    else:
        angles = np.array([schedule.angle_at(j, i >> (n - j)) for j in range(n)])
    return math.exp(math.fsum(log_secant(angles).tolist()))


def classify_lambda(tree: CapTree, depth: Optional[int] = None, bound: Optional[float] = None) -> LambdaClassification:
    """Per-cell stretch-product verdicts at a working depth (products include the cell's own cap)."""
    depth = tree.depth if depth is None else depth
    if not 0 <= depth <= tree.depth:
        raise ConstructionError(f"Working depth {depth} exceeds tree depth {tree.depth}", details={"depth": depth})

    products = stage_stretch_products_through(tree, depth)
    sums_sq = np.zeros(1)
    for j in range(depth + 1):
        sums_sq = sums_sq + tree.thetas(j) ** 2
        if j < depth:
            sums_sq = np.repeat(sums_sq, 2)

    schedule = tree.schedule
    cells: List[CellVerdict] = []
    uniform_limit = schedule.stretch_limit(0) if schedule.stage_uniform else None
    for i in range(2 ** depth):
        if schedule.stage_uniform:
            limit = uniform_limit
            status = CellStatus.BOUNDED if math.isfinite(limit) else CellStatus.DIVERGING
        else:
            status, limit = _table_cell(tree, schedule, depth, i)
        cells.append(CellVerdict(
            n=depth,
            i=i,
            partial_product=float(products[i]),
            partial_sum_sq=float(sums_sq[i]),
            verdict=status,
            limit=float(limit) if status == CellStatus.BOUNDED else None,
            within_bound=(limit <= bound + settings.geometric_tolerance) if (status == CellStatus.BOUNDED and bound is not None) else None
        ))

    result = LambdaClassification(depth=depth, requested_bound=bound, cells=cells)
    logger.info("Classified stretch products", schedule=schedule.spec, depth=depth, counts=result.counts())
    return result


def _table_cell(tree: CapTree, schedule: TableSchedule, depth: int, i: int):
    nested = any(
        m > depth and (j >> (m - depth)) == i
        for (m, j) in list(schedule.tails) + list(schedule.entries)
    )
    root = schedule.tail_root(depth, i)
    if root is None or nested:
        return CellStatus.UNDETERMINED, None
    tail = schedule.tails[root]
    if not tail.sum_sq_converges:
        return CellStatus.DIVERGING, None
    m = root[0]
    above = [tree.thetas(j)[i >> (depth - j)] for j in range(m)]
    return CellStatus.BOUNDED, math.exp(math.fsum(log_secant(above).tolist())) * tail.stretch_limit(0)


def lipschitz_ratio_scan(
    tree: CapTree,
    m: Optional[float] = None,
    pairs: int = 10_000,
    seed: Optional[int] = None
) -> LipschitzScan:
    """Largest |F(x) - F(y)| / |x - y| over random pairs drawn from cells whose stretch limit is at most m."""
    if tree.depth < 1:
        raise ConstructionError("Lipschitz scan needs depth at least 1", details={"depth": tree.depth})
    classification = classify_lambda(tree, tree.depth)
    limits = np.array([c.limit if c.limit is not None else math.inf for c in classification.cells])
    if m is None:
        finite = limits[np.isfinite(limits)]
        if finite.size == 0:
            raise ConstructionError("No cell has a bounded stretch product", details={"schedule": tree.schedule.spec})
        m = float(finite.max())
    allowed = np.flatnonzero(limits <= m + settings.geometric_tolerance)
    if allowed.size == 0:
        raise ConstructionError("No cell lies within the requested bound", details={"m": m})

    rng = np.random.default_rng(settings.seed if seed is None else seed)
    width = 2.0 ** -tree.depth
    x = (rng.choice(allowed, pairs) + rng.random(pairs)) * width
    y = (rng.choice(allowed, pairs) + rng.random(pairs)) * width
    keep = np.abs(x - y) > 1e-15
    x, y = np.clip(x[keep], 0.0, 1.0), np.clip(y[keep], 0.0, 1.0)
    stage = tree.depth - 1
    fx, fy = composite_map(tree, x, stage), composite_map(tree, y, stage)
    ratios = np.hypot(*(fx - fy).T) / np.abs(x - y)
    max_ratio = float(ratios.max()) if ratios.size else 0.0

    logger.info("Scanned stretch ratios", pairs=int(ratios.size), max_ratio=max_ratio, m=m)
    return LipschitzScan(max_ratio=max_ratio, bound=4.0 * m * m, m=m, pairs=int(ratios.size), depth=stage)


def lipschitz_graph_depth(schedule: AngleSchedule, target_lip: float) -> Optional[int]:
    """Smallest n0 with sum_{n >= n0} theta_n < atan(target_lip) / 5; None when the angle series diverges."""
    if not schedule.stage_uniform:
        raise ScheduleError("Lipschitz graph depth needs a parametric schedule", details={"schedule": schedule.spec})
    if target_lip <= 0:
        raise ScheduleError("Target Lipschitz constant must be positive", details={"target_lip": target_lip})
    if not schedule.sum_converges:
        return None
    target = math.atan(target_lip) / 5.0
    if schedule.tail_sum(0) < target:
        return 0
    lo, hi = 0, 1
    while schedule.tail_sum(hi) >= target:
        lo, hi = hi, hi * 2
        if hi > 2 ** 62:
            return None
    # tail sums decrease, so bisect on (lo, hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if schedule.tail_sum(mid) < target:
            hi = mid
        else:
            lo = mid
    return hi
