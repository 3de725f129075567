"""Quantitative engines: lengths, dimensions, quadrature, density, rectifiability, centering and spiral turning."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import (
    ConstructionError,
    KochTypeException,
    ResolutionError,
    ScheduleError,
)
from kochtype.models import (
    CellStatus,
    CenteringResult,
    DensityEntry,
    DensityProfile,
    DimensionEstimate,
    DimensionMethod,
    FitDiagnostics,
    LambdaClassification,
    LambdaSummary,
    MeasureResult,
    RectifiabilityReport,
    RectifiabilityVerdict,
    RigidMotionRecord,
    SpiralDiagnostics,
)
from kochtype.services.construction import (
    UNIT_BASE,
    CapTree,
    build_tree,
    densify,
    ifs_maps_gamma,
)
from kochtype.services.geometry import (
    RigidMotion,
    as_point,
    as_points,
    polyline_length_in_ball,
    triangle_contains,
)
from kochtype.services.parametrization import (
    classify_lambda,
    path_stretch,
    stage_stretch_products,
)
from kochtype.services.schedules import AEpsSchedule, AngleSchedule, TableSchedule

logger = structlog.get_logger()

TreeOrSchedule = Union[CapTree, AngleSchedule]


@dataclass(frozen=True)
class MoranProblem:
    """Contraction ratios of a similarity system."""
    ratios: Tuple[float, ...]

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.ratios)
        if not ratios:
            raise ConstructionError("Moran problem needs at least one ratio")
        if any(not 0.0 < r < 1.0 for r in ratios):
            raise ConstructionError("Moran ratios must lie in (0, 1)", details={"ratios": list(ratios)})
        object.__setattr__(self, "ratios", ratios)

    def residual(self, d: float) -> float:
        return math.fsum(r ** d for r in self.ratios) - 1.0


def _schedule_of(source: TreeOrSchedule) -> AngleSchedule:
    return source.schedule if isinstance(source, CapTree) else source


def total_length(tree: CapTree, n: int) -> float:
    """Sum of the stage-n segment lengths."""
    v = tree.vertices(n)
    return math.fsum(np.hypot(*np.diff(v, axis=0).T).tolist())


def length_rows(tree: CapTree) -> List[Tuple[int, float]]:
    """(stage, total_length) for every stage of the tree."""
    return [(n, total_length(tree, n)) for n in range(tree.depth + 1)]


def moran_solve(problem: Union[MoranProblem, Sequence[float]]) -> float:
    """Unique D with sum r_i**D = 1, by bisection on a doubling bracket."""
    if not isinstance(problem, MoranProblem):
        problem = MoranProblem(tuple(problem))
    tol = settings.moran_tolerance
    if abs(problem.residual(0.0)) < tol:
        return 0.0

    lo, hi = 0.0, 1.0
    while problem.residual(hi) > 0.0:
        lo, hi = hi, hi * 2.0
    while True:
        mid = (lo + hi) / 2.0
        f = problem.residual(mid)
        if abs(f) < tol or mid in (lo, hi):
            return mid
        if f > 0.0:
            lo = mid
        else:
            hi = mid


def dim_formula_ar(r: float) -> float:
    """Dimension ln 2 / ln(2 cos r) of the constant-angle construction."""
    if not (math.isfinite(r) and 0.0 <= r < math.pi / 3):
        raise ScheduleError("Angle must lie in [0, pi/3) for the closed form", details={"r": r})
    return math.log(2.0) / math.log(2.0 * math.cos(r))


def gamma_dimension(eps: float) -> float:
    """Moran dimension of the constant-height family from its two similarity ratios."""
    s1, s2 = ifs_maps_gamma(eps)
    return moran_solve([s1.contraction, s2.contraction])


def _count_boxes(points: np.ndarray, scale: float) -> int:
    keys = np.floor(points / scale).astype(np.int64)
    return int(len(np.unique(keys, axis=0)))


def box_counting_dim(
    points,
    scales: Optional[Sequence[float]] = None,
    resolution: Optional[float] = None
) -> DimensionEstimate:
    """Least-squares slope of log N(s) against log(1/s) on an origin-anchored grid."""
    scales = list(settings.box_scales if scales is None else scales)
    if len(scales) < 3:
        raise ConstructionError("Box counting needs at least three scales", details={"scales": scales})
    if any(not (math.isfinite(s) and s > 0) for s in scales):
        raise ConstructionError("Box sizes must be positive", details={"scales": scales})
    scales = sorted(scales, reverse=True)
    if resolution is not None and resolution * settings.resolution_factor > scales[-1] * (1.0 + 1e-12):
        raise ResolutionError(
            f"Sample resolution {resolution:.3g} is too coarse for box size {scales[-1]:.3g}",
            details={"resolution": resolution, "smallest_scale": scales[-1], "factor": settings.resolution_factor}
        )
    pts = as_points(points)
    if len(pts) < 1000:
        logger.warning("Box counting on a small sample", points=int(len(pts)))

    try:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            counts = list(pool.map(lambda s: _count_boxes(pts, s), scales))

        x = np.log(1.0 / np.asarray(scales))
        y = np.log(np.asarray(counts, dtype=float))
        slope, intercept = np.polyfit(x, y, 1)
        residuals = y - (slope * x + intercept)
        ss_res = float(np.sum(residuals ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
        sxx = float(np.sum((x - x.mean()) ** 2))
        stderr = math.sqrt(ss_res / (len(x) - 2) / sxx) if len(x) > 2 else 0.0

        estimate = DimensionEstimate(
            value=float(slope),
            method=DimensionMethod.BOX_COUNTING,
            ci_or_bounds=(float(slope) - 2.0 * stderr, float(slope) + 2.0 * stderr),
            fit_diagnostics=FitDiagnostics(
                scales=[float(s) for s in scales],
                counts=counts,
                residuals=residuals.tolist(),
                r_squared=r_squared,
                slope_stderr=stderr
            ),
            note="ordinary least squares on log N(s) vs log(1/s)"
        )
        logger.info("Estimated box-counting dimension", value=estimate.value, points=int(len(pts)), r_squared=r_squared)
        return estimate

    except KochTypeException:
        raise
    except Exception as e:
        logger.error("Box counting failed", error=str(e))
        raise ConstructionError(f"Box counting failed: {str(e)}")


def tree_box_counting_dim(tree: CapTree, scales: Optional[Sequence[float]] = None) -> DimensionEstimate:
    """Box-count the deepest polyline, densified to the resolution the smallest box needs."""
    scales = list(settings.box_scales if scales is None else scales)
    spacing = min(scales) / settings.resolution_factor
    points = densify(tree.vertices(tree.depth), spacing)
    return box_counting_dim(points, scales, resolution=spacing)


def _bounds(low_angle: float, high_angle: float, note: str, determined: bool = True) -> DimensionEstimate:
    low, high = dim_formula_ar(low_angle), dim_formula_ar(high_angle)
    return DimensionEstimate(
        value=low,
        method=DimensionMethod.ANGLE_BOUNDS,
        ci_or_bounds=(low, high),
        determined=determined,
        note=note
    )


def dim_bounds_koch(source: TreeOrSchedule) -> DimensionEstimate:
    """Bounds (f(gamma1), f(gamma2)) from the limit angles along paths."""
    schedule = _schedule_of(source)
    if schedule.stage_uniform:
        gamma = schedule.limit_angle
        return _bounds(gamma, gamma, f"limit angle {gamma:.17g} on every path")

    tails = schedule.outer_tails()
    if not tails or schedule.tail_coverage() < 1.0:
        deepest = _deepest_known_angle(source, schedule)
        logger.warning("Table schedule leaves paths undeclared", coverage=schedule.tail_coverage())
        return _bounds(0.0, deepest, "tails do not cover every path; bounds from the deepest known angles", determined=False)

    threshold = 2.0 ** -settings.positive_fraction_stage
    ranked = sorted(((tail.limit_angle, 2.0 ** -n) for (n, _), tail in tails), reverse=True)
    gamma2 = ranked[0][0]
    weight = 0.0
    gamma1 = 0.0
    for angle, w in ranked:
        weight += w
        if weight >= threshold:
            gamma1 = angle
            break
    return _bounds(gamma1, gamma2, f"limit angles held on a cell fraction of at least 2**-{settings.positive_fraction_stage}")


def _deepest_known_angle(source: TreeOrSchedule, schedule: TableSchedule) -> float:
    if isinstance(source, CapTree):
        return float(source.thetas(source.depth).max())
    angles = list(schedule.entries.values()) + [t.theta_n(0) for t in schedule.tails.values()]
    return max(angles)


def dyadic_cells(a: float, b: float, depth: int) -> List[Tuple[int, int]]:
    """Stage-depth cells exactly covering [a, b]; endpoints must be multiples of 2**-depth."""
    cells = 2 ** depth
    lo, hi = a * cells, b * cells
    if not (0.0 <= a < b <= 1.0) or lo != math.floor(lo) or hi != math.floor(hi):
        raise ConstructionError(
            f"[{a}, {b}] is not a union of stage-{depth} cells in [0, 1]",
            details={"a": a, "b": b, "depth": depth}
        )
    return [(depth, i) for i in range(int(lo), int(hi))]


def measure_of_image(source: TreeOrSchedule, cells: Iterable[Tuple[int, int]], depth: int) -> MeasureResult:
    """Dyadic quadrature of 2**-depth times the stretch product over the cells of B."""
    cells = [(int(n), int(i)) for n, i in cells]
    for n, i in cells:
        if not (0 <= n <= depth and 0 <= i < 2 ** n):
            raise ConstructionError(f"Cell ({n}, {i}) is outside [0, 1] at stage {depth}", details={"n": n, "i": i, "depth": depth})
    schedule = _schedule_of(source)
    base_length = source.base_segment.length if isinstance(source, CapTree) else UNIT_BASE.length

    if schedule.stage_uniform:
        weight = math.fsum(2.0 ** -n for n, _ in cells)
        value = base_length * weight * path_stretch(schedule, depth)
        diverging = not schedule.sum_sq_converges
    else:
        if not isinstance(source, CapTree) or source.depth < depth:
            raise ConstructionError("Quadrature of a table schedule needs a tree at least as deep", details={"depth": depth})
        products = stage_stretch_products(source, depth)
        parts = []
        for n, i in cells:
            width = 2 ** (depth - n)
            parts.extend(products[i * width:(i + 1) * width].tolist())
        value = base_length * 2.0 ** -depth * math.fsum(parts)
        diverging = _table_cells_diverge(schedule, cells)

    logger.info("Computed image measure", schedule=schedule.spec, depth=depth, value=value, diverging=diverging)
    return MeasureResult(value=value, depth=depth, cells=cells, diverging=diverging)


def _table_cells_diverge(schedule: TableSchedule, cells: List[Tuple[int, int]]) -> bool:
    for n, i in cells:
        for (m, j), tail in schedule.tails.items():
            inside = m >= n and (j >> (m - n)) == i
            above = m < n and (i >> (n - m)) == j
            if (inside or above) and not tail.sum_sq_converges:
                return True
    return False


def density_profile(
    vertices,
    center,
    radii: Sequence[float],
    resolution: Optional[float] = None
) -> DensityProfile:
    """Polyline length inside B_rho(center) over 2 rho, per radius."""
    v = as_points(vertices)
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii) or any(b >= a for a, b in zip(radii, radii[1:])):
        raise ConstructionError("Radius ladder must be positive and strictly decreasing", details={"radii": radii})
    if resolution is None:
        resolution = float(np.hypot(*np.diff(v, axis=0).T).max()) if len(v) > 1 else 0.0
    if resolution * settings.resolution_factor > radii[-1]:
        raise ResolutionError(
            f"Polyline resolution {resolution:.3g} is too coarse for radius {radii[-1]:.3g}",
            details={"resolution": resolution, "smallest_radius": radii[-1]}
        )

    c = as_point(center)
    entries = []
    for rho in radii:
        length = polyline_length_in_ball(v, c, rho)
        entries.append(DensityEntry(rho=rho, length=length, ratio=length / (2.0 * rho)))
    ratios = np.array([e.ratio for e in entries])
    growth = bool(len(ratios) > 1 and np.all(np.diff(ratios) >= -settings.geometric_tolerance) and ratios[-1] > ratios[0])
    return DensityProfile(center=(c.x, c.y), entries=entries, growth=growth)


def summarize_lambda(classification: LambdaClassification) -> LambdaSummary:
    """Digest of a stretch-product classification."""
    return LambdaSummary(
        depth=classification.depth,
        counts=classification.counts(),
        max_partial_product=max(c.partial_product for c in classification.cells)
    )


def rectifiability_report(
    source: TreeOrSchedule,
    variant: str = "curve",
    depth: Optional[int] = None
) -> RectifiabilityReport:
    """Rectifiability verdict from limit angles and the convergence of squared angles."""
    if variant not in ("curve", "edgeless"):
        raise ConstructionError(f"Unknown variant '{variant}'", details={"variant": variant})
    schedule = _schedule_of(source)
    if isinstance(source, CapTree) and (depth is None or depth <= source.depth):
        tree = source
    else:
        tree = build_tree(schedule, depth=min(settings.default_depth, settings.max_depth) if depth is None else depth)
    classification = classify_lambda(tree, tree.depth if depth is None else depth)
    dim = dim_bounds_koch(tree)

    if schedule.stage_uniform:
        verdict, criterion = _uniform_verdict(schedule, dim)
    else:
        verdict, criterion = _table_verdict(schedule, dim)
    if variant == "edgeless":
        criterion += "; removing the edge balls keeps the stretch behaviour of the curve"

    logger.info("Rectifiability verdict", schedule=schedule.spec, verdict=verdict.value, variant=variant)
    return RectifiabilityReport(
        verdict=verdict,
        criterion=criterion,
        variant=variant,
        lambda_summary=summarize_lambda(classification),
        dim_estimate=dim
    )


def _uniform_verdict(schedule: AngleSchedule, dim: DimensionEstimate) -> Tuple[RectifiabilityVerdict, str]:
    if schedule.limit_angle > settings.angle_tolerance:
        return RectifiabilityVerdict.NOT_RECTIFIABLE, f"dim = f₁({schedule.limit_angle:.6g}) > 1 (estimate {dim.value:.6f})"
    if schedule.sum_sq_converges:
        return RectifiabilityVerdict.RECTIFIABLE, "Σθ² < ∞ ⇒ Λ_∞ = ∅: squared angles converge, so every stretch product is bounded"
    return RectifiabilityVerdict.NOT_RECTIFIABLE, "Π̃ ≡ ∞: squared angles diverge, so the stretch product is infinite on every path"


def _table_verdict(schedule: TableSchedule, dim: DimensionEstimate) -> Tuple[RectifiabilityVerdict, str]:
    if not schedule.tails or schedule.tail_coverage() < 1.0:
        return RectifiabilityVerdict.UNDETERMINED, "declared tails do not cover every path"
    tails = schedule.outer_tails()
    if any(t.limit_angle > settings.angle_tolerance for _, t in tails):
        return RectifiabilityVerdict.NOT_RECTIFIABLE, f"dim ≥ {dim.value:.6f} > 1: a tail with positive limit angle covers a positive-measure cell"
    if not schedule.sum_sq_converges:
        return RectifiabilityVerdict.NOT_RECTIFIABLE, "Π̃ = ∞ on a positive-measure cell: a tail's squared angles diverge"
    return RectifiabilityVerdict.RECTIFIABLE, "Σθ² < ∞ on every tail ⇒ Λ_∞ = ∅: every stretch product is bounded"


def can_center(a1: CapTree, a2: CapTree, m: int) -> CenteringResult:
    """Place every stage-m cap of a1 inside the matching cap of a2 by a midpoint-centred rigid motion."""
    s1, s2 = a1.schedule, a2.schedule
    if not (s1.stage_uniform and s2.stage_uniform):
        return CenteringResult(possible=None, reason="centering is only decided for stage-uniform schedules", depth=m)
    if m > min(a1.depth, a2.depth):
        raise ConstructionError(f"Both trees must reach stage {m}", details={"m": m, "depths": [a1.depth, a2.depth]})

    tol = settings.geometric_tolerance
    if a1.base_segment.length > a2.base_segment.length + tol:
        return CenteringResult(possible=False, reason="root base of the first set is longer", depth=m)
    stages = np.arange(m + settings.tail_horizon + 1)
    worse = np.flatnonzero(s1.thetas(stages) > s2.thetas(stages) + settings.angle_tolerance)
    if worse.size:
        return CenteringResult(possible=False, reason=f"angle of the first set exceeds the second at stage {int(worse[0])}", depth=m)
    if s1.limit_angle > s2.limit_angle + settings.angle_tolerance:
        return CenteringResult(possible=False, reason="limit angle of the first set exceeds the second", depth=m)

    transforms: List[RigidMotionRecord] = []
    passed = True
    for i in range(2 ** m):
        c1, c2 = a1.cap((m, i)), a2.cap((m, i))
        reflect = c1.orientation != c2.orientation
        angle1 = -c1.base.angle if reflect else c1.base.angle
        rotation = c2.base.angle - angle1
        mid1 = np.array(c1.base.midpoint)
        if reflect:
            mid1[1] = -mid1[1]
        cos_r, sin_r = math.cos(rotation), math.sin(rotation)
        moved = np.array([cos_r * mid1[0] - sin_r * mid1[1], sin_r * mid1[0] + cos_r * mid1[1]])
        translation = np.asarray(c2.base.midpoint) - moved
        motion = RigidMotion(rotation, (float(translation[0]), float(translation[1])), reflect)
        ok = bool(np.all(triangle_contains(c2.triangle, motion.apply_many(c1.triangle), settings.containment_slack)))
        passed &= ok
        transforms.append(RigidMotionRecord(n=m, i=i, rotation=rotation, translation=motion.translation, reflect=reflect))

    logger.info("Centered caps", depth=m, caps=len(transforms), checks_passed=passed)
    return CenteringResult(
        possible=True,
        reason=f"base and angles compared through stage {m + settings.tail_horizon}",
        depth=m,
        transforms=transforms,
        checks_passed=passed
    )


def delta1_bound(eps: float) -> float:
    """Flatness lower bound (31 eps / 32) / (65 / 128) at the root apex."""
    return (31.0 * eps / 32.0) / (65.0 / 128.0)


def spiral_diagnostics(schedule: AngleSchedule, target_turn: float = 2.0 * math.pi, keep: int = 256) -> SpiralDiagnostics:
    """Cumulative angle sums and the first stage whose sum exceeds target_turn."""
    if not schedule.stage_uniform:
        raise ScheduleError("Spiral diagnostics need a parametric schedule", details={"schedule": schedule.spec})
    converges = schedule.sum_converges
    limit_sum = schedule.tail_sum(0) if converges else None
    head = np.cumsum(schedule.thetas(np.arange(keep)))

    reached: Optional[int] = None
    if not (converges and limit_sum <= target_turn):
        carry, start, chunk = 0.0, 0, 1 << 16
        while start < settings.max_spiral_stages:
            sums = carry + np.cumsum(schedule.thetas(np.arange(start, min(start + chunk, settings.max_spiral_stages))))
            over = np.flatnonzero(sums > target_turn)
            if over.size:
                reached = start + int(over[0])
                break
            carry, start = float(sums[-1]), start + chunk
        if reached is None:
            logger.warning("Spiral target not reached within the stage cap", cap=settings.max_spiral_stages, target=target_turn)

    return SpiralDiagnostics(
        partial_sums=head.tolist(),
        target_turn=target_turn,
        stage_reaching_target=reached,
        diverges=not converges,
        limit_sum=limit_sum,
        delta1_bound=delta1_bound(schedule.eps) if isinstance(schedule, AEpsSchedule) else None
    )
