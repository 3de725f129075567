"""Finite-scale checks of the eight line-approximation properties and local length finiteness."""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.spatial import KDTree

from kochtype.config import settings
from kochtype.exceptions import ConstructionError, ResolutionError, ScheduleError
from kochtype.models import (
    CenterVerdict,
    DeltaLadderReport,
    FitMode,
    FlatnessEntry,
    FlatnessProfile,
    LinePolicy,
    LineRecord,
    LocalFinitenessReport,
    LocalFinitenessRow,
    PropertyId,
    PropertyReport,
    Witness,
)
from kochtype.services.geometry import (
    AffineLine,
    as_point,
    as_points,
    minmax_fit_free,
    minmax_fit_through,
)
from kochtype.services.parametrization import path_stretch
from kochtype.services.schedules import AngleSchedule

logger = structlog.get_logger()

WEAK = {PropertyId.I, PropertyId.III, PropertyId.V}
NEIGHBOURHOOD = {PropertyId.II, PropertyId.IV}
STRONG = {PropertyId.VI, PropertyId.VIII}
UNIFORM = {PropertyId.V, PropertyId.VIII}
ALL_DELTAS = {PropertyId.III, PropertyId.IV}

CSV_HEADER = ["center_x", "center_y", "rho", "beta_through", "beta_free", "verdict"]


class BallIndex:
    """Closed-ball queries over a fixed point sample."""

    def __init__(self, points):
        self.points = as_points(points)
        self._tree = KDTree(self.points)

    def indices(self, center, rho: float) -> np.ndarray:
        found = self._tree.query_ball_point(np.asarray(center, dtype=float), rho + settings.ball_boundary_tolerance)
        return np.array(sorted(found), dtype=np.int64)

    def ball(self, center, rho: float) -> np.ndarray:
        return self.points[self.indices(center, rho)]


def _fit_mode(prop: PropertyId, fit_mode) -> FitMode:
    if prop in NEIGHBOURHOOD:
        return FitMode(fit_mode) if fit_mode is not None else FitMode.FREE
    if prop == PropertyId.VII:
        # through: L_y moved parallel onto each tested point; free: L_y itself
        return FitMode(fit_mode) if fit_mode is not None else FitMode.THROUGH
    return FitMode.THROUGH


def _check_ladder(scales: Sequence[float], resolution: Optional[float]) -> List[float]:
    ladder = [float(s) for s in scales]
    if not ladder or any(s <= 0 for s in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConstructionError("Scale ladder must be positive and strictly decreasing", details={"scales": ladder})
    if resolution is not None and resolution * settings.resolution_factor > ladder[-1] * (1.0 + 1e-12):
        raise ResolutionError(
            f"Sample resolution {resolution:.3g} is too coarse for radius {ladder[-1]:.3g}",
            details={"resolution": resolution, "smallest_radius": ladder[-1], "factor": settings.resolution_factor}
        )
    return ladder


def fixed_line_width(ball: np.ndarray, line: AffineLine) -> float:
    """Largest distance from the ball's points to a given line."""
    return float(np.max(np.abs(line.signed_distances(ball)))) if len(ball) else 0.0


def witness_beta(points, witness: Witness) -> float:
    """Recompute beta of a witness ball against the witness line."""
    index = BallIndex(points)
    line = AffineLine(witness.line_angle, witness.line_offset)
    return fixed_line_width(index.ball(witness.center, witness.rho), line) / witness.rho


def enclosing_radius(points) -> Tuple[Tuple[float, float], float]:
    """Ball around the bounding-box center containing every point."""
    pts = as_points(points)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    radius = float(np.max(np.hypot(*(pts - center).T)))
    return (float(center[0]), float(center[1])), radius


def admissible_scales(
    schedule: AngleSchedule,
    delta: float,
    depth: int,
    resolution: Optional[float] = None,
    base_length: float = 1.0
) -> List[float]:
    """Radii r = 1.5 L_n for stages n0 < n <= depth, n0 the first stage with atan(delta) > 3 theta_{n0-1} + 2 theta_{n0-2}."""
    if not schedule.stage_uniform:
        raise ScheduleError("Admissible scales need a parametric schedule", details={"schedule": schedule.spec})
    if delta <= 0:
        raise ScheduleError("delta must be positive", details={"delta": delta})
    target = math.atan(delta)
    thetas = schedule.thetas(np.arange(depth + 1))
    n0 = next((n for n in range(2, depth + 1) if target > 3.0 * thetas[n - 1] + 2.0 * thetas[n - 2]), None)
    if n0 is None:
        return []
    scales = []
    for n in range(n0 + 1, depth + 1):
        r = 1.5 * base_length * 2.0 ** -n * path_stretch(schedule, n)
        if resolution is not None and resolution * settings.resolution_factor > r:
            break
        scales.append(r)
    return scales


class PropertyService:
    """Service for line-approximation checks on point samples."""

    def flatness_profile(
        self,
        points,
        center,
        scales: Sequence[float],
        constrain_through_center: bool = True,
        resolution: Optional[float] = None,
        index: Optional[BallIndex] = None
    ) -> FlatnessProfile:
        """Through-center and free min-max widths over rho, per radius."""
        ladder = _check_ladder(scales, resolution)
        index = BallIndex(points) if index is None else index
        c = as_point(center)
        entries = []
        for rho in ladder:
            ball = index.ball(c, rho)
            if len(ball) == 0:
                entries.append(FlatnessEntry(rho=rho, point_count=0, empty=True))
                continue
            through = minmax_fit_through(ball, c)
            free = minmax_fit_free(ball)
            shown = through if constrain_through_center else free
            entries.append(FlatnessEntry(
                rho=rho,
                point_count=int(len(ball)),
                empty=False,
                beta_through=through.width / rho,
                beta_free=free.width / rho,
                line_angle=shown.line.angle,
                line_offset=shown.line.offset
            ))
        return FlatnessProfile(center=(c.x, c.y), constrained=constrain_through_center, entries=entries)

    def check_property(
        self,
        points,
        prop,
        delta: float,
        centers,
        scales: Sequence[float],
        fit_mode: Optional[FitMode] = None,
        line_policy: Optional[LinePolicy] = None,
        delta_ladder: Optional[Sequence[float]] = None,
        rho0: Optional[float] = None,
        resolution: Optional[float] = None,
        neighbor_count: Optional[int] = None
    ) -> PropertyReport:
        """Verdict per center for one property across the radius ladder."""
        prop = PropertyId(prop)
        if not (math.isfinite(delta) and delta > 0):
            raise ConstructionError("delta must be positive", details={"delta": delta})
        index = BallIndex(points)
        centers = as_points(centers)
        ladder = _check_ladder(scales, resolution)

        mode = _fit_mode(prop, fit_mode)
        policy = LinePolicy(line_policy or settings.strong_line_policy) if prop in STRONG | {PropertyId.VII} else None
        deltas = sorted({float(delta), *(float(d) for d in (delta_ladder or []))}, reverse=True) if prop in ALL_DELTAS else [float(delta)]

        contained = None
        if prop in UNIFORM:
            _, radius = enclosing_radius(index.points)
            rho0 = radius if rho0 is None else float(rho0)
            contained = radius <= rho0 + settings.geometric_tolerance
            ladder = [rho0] + [s for s in ladder if s < rho0]

        count = settings.neighbor_count if neighbor_count is None else neighbor_count

        def run(k: int) -> CenterVerdict:
            return self._check_center(index, prop, k, centers[k], ladder, deltas, mode, policy, count)

        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            verdicts = list(pool.map(run, range(len(centers))))

        report = PropertyReport(
            property=prop,
            delta=float(delta),
            delta_ladder=deltas if prop in ALL_DELTAS else None,
            fit_mode=mode,
            line_policy=policy,
            sampled_centers=len(centers),
            scales=ladder,
            tested_range=(ladder[-1], ladder[0]),
            rho0=rho0 if prop in UNIFORM else None,
            contained_in_ball=contained,
            verdicts=verdicts
        )
        logger.info(
            "Checked approximation property",
            property=prop.value,
            delta=delta,
            centers=len(centers),
            failures=len(report.failures),
            holds=report.holds
        )
        return report

    def _check_center(
        self,
        index: BallIndex,
        prop: PropertyId,
        k: int,
        center: np.ndarray,
        ladder: List[float],
        deltas: List[float],
        mode: FitMode,
        policy: Optional[LinePolicy],
        neighbor_count: int
    ) -> CenterVerdict:
        y = (float(center[0]), float(center[1]))
        smallest = deltas[-1]
        reused: Optional[LineRecord] = None
        fixed: Optional[AffineLine] = None
        if policy is not None:
            fixed, reused = self._strong_line(index, y, ladder, policy)

        anchors = [np.asarray(y)]
        if prop in NEIGHBOURHOOD or prop == PropertyId.VII:
            anchors = self._neighbours(index, y, ladder[0], neighbor_count)

        tested = 0
        for x in anchors:
            line_at_x = fixed
            if fixed is not None and mode == FitMode.THROUGH:
                line_at_x = AffineLine.from_angle(x, fixed.angle)
            for rho in ladder:
                ball = index.ball(x, rho)
                if len(ball) == 0:
                    continue
                tested += 1
                if line_at_x is not None:
                    line, width = line_at_x, fixed_line_width(ball, line_at_x)
                elif mode == FitMode.THROUGH:
                    line, width = minmax_fit_through(ball, x)
                else:
                    line, width = minmax_fit_free(ball)
                beta = width / rho
                if beta > smallest:
                    failed = max(d for d in deltas if d < beta)
                    witness = Witness(
                        center=(float(x[0]), float(x[1])),
                        rho=rho,
                        beta=beta,
                        delta=failed,
                        line_angle=line.angle,
                        line_offset=line.offset
                    )
                    return CenterVerdict(index=k, center=y, holds=False, witness=witness, reused_line=reused, tested_balls=tested)
        return CenterVerdict(index=k, center=y, holds=True, reused_line=reused, tested_balls=tested)

    def _strong_line(
        self,
        index: BallIndex,
        y: Tuple[float, float],
        ladder: List[float],
        policy: LinePolicy
    ) -> Tuple[AffineLine, LineRecord]:
        order = reversed(ladder) if policy == LinePolicy.FINEST else iter(ladder)
        for rho in order:
            ball = index.ball(y, rho)
            if len(ball) >= 2:
                fit = minmax_fit_through(ball, y)
                return fit.line, LineRecord(angle=fit.line.angle, offset=fit.line.offset, chosen_at_rho=rho)
        line = AffineLine.from_angle(y, 0.0)
        return line, LineRecord(angle=line.angle, offset=line.offset, chosen_at_rho=ladder[-1])

    def _neighbours(self, index: BallIndex, y, radius: float, count: int) -> List[np.ndarray]:
        """The center plus up to count sample points spread over B_radius(y) by distance."""
        found = index.indices(y, radius)
        if found.size == 0 or count <= 0:
            return [np.asarray(y, dtype=float)]
        pts = index.points[found]
        order = np.argsort(np.hypot(*(pts - np.asarray(y)).T), kind="stable")
        picks = np.unique(np.linspace(0, len(order) - 1, min(count, len(order))).round().astype(np.int64))
        return [np.asarray(y, dtype=float)] + [pts[order[p]] for p in picks]

    def delta_ladder_check(
        self,
        points,
        base,
        deltas: Sequence[float],
        centers,
        scales: Optional[Sequence[float]] = None,
        scale_rule: Optional[Callable[[float], Sequence[float]]] = None,
        **options
    ) -> DeltaLadderReport:
        """Run property i or ii at every threshold; an empty scale set makes that threshold vacuous."""
        base = PropertyId(base)
        if base not in (PropertyId.I, PropertyId.II):
            raise ConstructionError("Threshold ladders apply to properties i and ii", details={"base": base.value})
        deltas = [float(d) for d in deltas]
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ConstructionError("delta ladder must be strictly decreasing", details={"deltas": deltas})
        if scales is None and scale_rule is None:
            raise ConstructionError("Either scales or a scale rule is required")

        reports, vacuous = [], []
        for d in deltas:
            ladder = list(scale_rule(d)) if scale_rule is not None else list(scales)
            if not ladder:
                vacuous.append(True)
                reports.append(self._vacuous_report(base, d, centers, options.get("fit_mode")))
                continue
            vacuous.append(False)
            reports.append(self.check_property(points, base, d, centers, ladder, **options))

        holding = [d for d, r, v in zip(deltas, reports, vacuous) if r.holds and not v]
        return DeltaLadderReport(
            base_property=base,
            deltas=deltas,
            reports=reports,
            finest_holding_delta=min(holding) if holding else None,
            vacuous=vacuous
        )

    def _vacuous_report(self, prop: PropertyId, delta: float, centers, fit_mode) -> PropertyReport:
        pts = as_points(centers)
        mode = _fit_mode(prop, fit_mode)
        return PropertyReport(
            property=prop,
            delta=delta,
            fit_mode=mode,
            sampled_centers=len(pts),
            scales=[],
            verdicts=[CenterVerdict(index=k, center=(float(p[0]), float(p[1])), holds=True) for k, p in enumerate(pts)]
        )

    def local_finiteness_scan(self, points, weights, centers, scales: Sequence[float]) -> LocalFinitenessReport:
        """Weighted length inside each closed ball, with a flag when it shrinks slower than rho."""
        index = BallIndex(points)
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(index.points),) or np.any(w < 0):
            raise ConstructionError("Weights must be non-negative, one per point", details={"points": len(index.points), "weights": int(w.size)})
        ladder = _check_ladder(scales, None)
        rows: List[LocalFinitenessRow] = []
        diverging: List[bool] = []
        for k, c in enumerate(as_points(centers)):
            ratios = []
            for rho in ladder:
                length = math.fsum(w[index.indices(c, rho)].tolist())
                ratio = length / (2.0 * rho)
                ratios.append(ratio)
                rows.append(LocalFinitenessRow(center_index=k, center=(float(c[0]), float(c[1])), rho=rho, length=length, ratio=ratio))
            diverging.append(bool(ratios[-1] > (1.0 + settings.finiteness_growth_margin) * ratios[0]))
        return LocalFinitenessReport(rows=rows, diverging=diverging)

    def flatness_rows(self, points, report: PropertyReport) -> List[Dict[str, float]]:
        """Flat per-ball view of a report for plotting."""
        if not report.scales:
            return []
        index = BallIndex(points)
        rows = []
        for verdict in report.verdicts:
            profile = self.flatness_profile(index.points, verdict.center, report.scales, index=index)
            for entry in profile.entries:
                failed = verdict.witness is not None and verdict.witness.rho == entry.rho and tuple(verdict.witness.center) == tuple(verdict.center)
                rows.append({
                    "center_x": verdict.center[0],
                    "center_y": verdict.center[1],
                    "rho": entry.rho,
                    "beta_through": entry.beta_through if entry.beta_through is not None else "",
                    "beta_free": entry.beta_free if entry.beta_free is not None else "",
                    "verdict": "empty" if entry.empty else ("fail" if failed else "pass")
                })
        return rows


# Global service instance
property_service = PropertyService()
