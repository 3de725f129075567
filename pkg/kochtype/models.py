"""Pydantic models for documents and reports."""

import builtins
from typing import Any, Dict, List, Optional, Tuple
from enum import Enum
from pydantic import BaseModel, Field, ConfigDict


class ErrorResponse(BaseModel):
    """Standard error payload written to stderr by the command surface."""

    error_code: str = Field(..., description="Error code identifier")
    error_message: str = Field(..., description="Human-readable error message")


class PropertyId(str, Enum):
    """The eight plane-approximation properties."""
    I = "i"
    II = "ii"
    III = "iii"
    IV = "iv"
    V = "v"
    VI = "vi"
    VII = "vii"
    VIII = "viii"


class FitMode(str, Enum):
    """Whether approximating lines must pass through the tested point."""
    THROUGH = "through"
    FREE = "free"


class LinePolicy(str, Enum):
    """Scale at which strong variants choose their single line."""
    FINEST = "finest"
    COARSEST = "coarsest"


class DimensionMethod(str, Enum):
    """Dimension estimators."""
    MORAN = "moran"
    CLOSED_FORM = "closed_form"
    BOX_COUNTING = "box_counting"
    ANGLE_BOUNDS = "angle_bounds"


class CellStatus(str, Enum):
    """Stretch-product verdict for a dyadic cell."""
    BOUNDED = "bounded"
    DIVERGING = "diverging"
    UNDETERMINED = "undetermined"


class RectifiabilityVerdict(str, Enum):
    """Rectifiability verdicts."""
    RECTIFIABLE = "rectifiable"
    NOT_RECTIFIABLE = "not_rectifiable"
    UNDETERMINED = "undetermined"


class ScheduleEcho(BaseModel):
    """Schedule kind and parameters echoed into output documents."""

    kind: str = Field(..., description="Schedule variant name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Variant parameters")


class TableEntry(BaseModel):
    """Explicit angle of one cap."""

    n: int = Field(..., ge=0, description="Stage")
    i: int = Field(..., ge=0, description="Position within the stage")
    theta: float = Field(..., description="Base angle in radians")


class TableTail(BaseModel):
    """Stage-uniform schedule applied to a whole subtree."""

    n: int = Field(..., ge=0, description="Stage of the subtree root")
    i: int = Field(..., ge=0, description="Position of the subtree root")
    schedule: str = Field(..., min_length=1, description="Schedule spec, stages counted from the subtree root")


class TableScheduleFile(BaseModel):
    """Table schedule document."""

    entries: List[TableEntry] = Field(default_factory=list, description="Explicit angles")
    tails: List[TableTail] = Field(default_factory=list, description="Declared subtree tails")

    model_config = ConfigDict(extra="forbid")


class PolylineDocument(BaseModel):
    """Serialized stage polyline."""

    schedule: ScheduleEcho = Field(..., description="Schedule that produced the polyline")
    depth: int = Field(..., ge=0, description="Stage of the polyline")
    base: List[List[float]] = Field(..., min_length=2, max_length=2, description="Root base endpoints")
    vertices: List[List[float]] = Field(..., min_length=2, description="Ordered vertices, left to right")

    model_config = ConfigDict(extra="forbid")


class GalleryDocument(BaseModel):
    """Serialized sample of a named example set."""

    name: str = Field(..., description="Canonical set name")
    params: Dict[str, float] = Field(default_factory=dict, description="Set parameters")
    box: Optional[List[float]] = Field(default=None, description="Clipping box x0, y0, x1, y1")
    resolution: float = Field(..., ge=0, description="Largest gap between neighbouring sample points")
    points: List[List[float]] = Field(..., min_length=1, description="Sample points")
    weights: List[float] = Field(..., description="Curve length each point stands for")

    model_config = ConfigDict(extra="forbid")


class FitDiagnostics(BaseModel):
    """Least-squares diagnostics of a log-log fit."""

    scales: List[float] = Field(..., description="Box sizes, coarsest first")
    counts: List[int] = Field(..., description="Occupied boxes per scale")
    residuals: List[float] = Field(..., description="Per-scale residuals of log N")
    r_squared: float = Field(..., description="Coefficient of determination")
    slope_stderr: float = Field(..., ge=0, description="Standard error of the slope")


class DimensionEstimate(BaseModel):
    """A dimension value with provenance."""

    value: float = Field(..., description="Estimated or computed dimension")
    method: DimensionMethod = Field(..., description="Estimator used")
    ci_or_bounds: Optional[Tuple[float, float]] = Field(default=None, description="Confidence interval or (low, high) bounds")
    fit_diagnostics: Optional[FitDiagnostics] = Field(default=None, description="Regression diagnostics for box counting")
    determined: bool = Field(default=True, description="False when only partial evidence was available")
    note: Optional[str] = Field(default=None, description="How the value was obtained")


class CellVerdict(BaseModel):
    """Stretch-product evidence for one dyadic cell."""

    n: int = Field(..., ge=0, description="Stage")
    i: int = Field(..., ge=0, description="Position within the stage")
    partial_product: float = Field(..., ge=1.0, description="Stretch product at the working depth")
    partial_sum_sq: float = Field(..., ge=0.0, description="Sum of squared angles along the path")
    verdict: CellStatus = Field(..., description="Classification")
    limit: Optional[float] = Field(default=None, description="Converged stretch product for bounded cells")
    within_bound: Optional[bool] = Field(default=None, description="Whether the limit is at most the requested bound")


class LambdaClassification(BaseModel):
    """Per-cell stretch-product classification at a working depth."""

    depth: int = Field(..., ge=0, description="Working depth")
    requested_bound: Optional[float] = Field(default=None, description="Bound m queried by the caller")
    cells: List[CellVerdict] = Field(..., description="One entry per stage cell")

    def counts(self) -> Dict[str, int]:
        """Get verdict counts."""
        result = {status.value: 0 for status in CellStatus}
        for cell in self.cells:
            result[cell.verdict.value] += 1
        return result


class LambdaSummary(BaseModel):
    """Digest of a LambdaClassification for reports."""

    depth: int = Field(..., description="Working depth")
    counts: Dict[str, int] = Field(..., description="Cells per verdict")
    max_partial_product: float = Field(..., description="Largest stretch product seen")


class RectifiabilityReport(BaseModel):
    """Rectifiability verdict with its supporting evidence."""

    verdict: RectifiabilityVerdict = Field(..., description="Verdict")
    criterion: str = Field(..., description="Criterion that decided the verdict")
    variant: str = Field(default="curve", description="curve, or edgeless for the ball-removal subset")
    lambda_summary: LambdaSummary = Field(..., description="Stretch-product digest")
    dim_estimate: DimensionEstimate = Field(..., description="Dimension evidence")


class MeasureResult(BaseModel):
    """Dyadic quadrature of the image length of a union of cells."""

    value: float = Field(..., ge=0.0, description="Quadrature value")
    depth: int = Field(..., ge=0, description="Quadrature stage")
    cells: List[Tuple[int, int]] = Field(..., description="Cells making up the interval set")
    diverging: bool = Field(..., description="True when the cells carry diverging stretch products")


class LipschitzScan(BaseModel):
    """Observed stretch ratios of the stage map on sampled pairs."""

    max_ratio: float = Field(..., ge=0.0, description="Largest observed ratio")
    bound: float = Field(..., description="Bound 4 m**2")
    m: float = Field(..., description="Stretch-product bound of the scanned cells")
    pairs: int = Field(..., ge=0, description="Pairs sampled")
    depth: int = Field(..., ge=0, description="Stage of the evaluated map")


class DensityEntry(BaseModel):
    """Length inside one ball."""

    rho: float = Field(..., gt=0, description="Radius")
    length: float = Field(..., ge=0, description="Polyline length inside the closed ball")
    ratio: float = Field(..., ge=0, description="length / (2 rho)")


class DensityProfile(BaseModel):
    """Length ratios around a center across radii."""

    center: Tuple[float, float] = Field(..., description="Ball center")
    entries: List[DensityEntry] = Field(..., description="Entries by decreasing radius")
    growth: bool = Field(..., description="Ratios increase as the radius decreases")


class SpiralDiagnostics(BaseModel):
    """Cumulative turning of the base angles."""

    partial_sums: List[float] = Field(..., description="Cumulative angle sums, stage 0 onward (truncated for long runs)")
    target_turn: float = Field(..., description="Turn that must be exceeded")
    stage_reaching_target: Optional[int] = Field(default=None, description="First stage whose cumulative sum exceeds the target; None means never")
    diverges: bool = Field(..., description="Whether the angle series diverges")
    limit_sum: Optional[float] = Field(default=None, description="Series value when it converges")
    delta1_bound: Optional[float] = Field(default=None, description="Flatness lower bound at the root apex for the shrinking-angle family")


class RigidMotionRecord(BaseModel):
    """Serialized rigid motion."""

    n: int = Field(..., description="Cap stage")
    i: int = Field(..., description="Cap position")
    rotation: float = Field(..., description="Rotation angle in radians")
    translation: Tuple[float, float] = Field(..., description="Translation applied after rotation")
    reflect: bool = Field(..., description="Whether a reflection across the x-axis precedes the rotation")


class CenteringResult(BaseModel):
    """Outcome of placing one construction's caps inside another's."""

    possible: Optional[bool] = Field(..., description="None when the schedules are not stage-uniform")
    reason: str = Field(..., description="Why the answer was reached")
    depth: int = Field(..., ge=0, description="Stage whose caps were placed")
    transforms: List[RigidMotionRecord] = Field(default_factory=list, description="Per-cap rigid motions")
    checks_passed: bool = Field(default=False, description="All emitted placements verified by containment")


class OpenSetReport(BaseModel):
    """Open-set check of the two similarity maps."""

    contraction: float = Field(..., description="Common contraction ratio")
    images_inside: bool = Field(..., description="Both images of the root cap lie in the root cap")
    overlap_area: float = Field(..., ge=0, description="Area shared by the two images of the kite")
    disjoint: bool = Field(..., description="Kite images have disjoint interiors")


class FlatnessEntry(BaseModel):
    """Line-fit flatness at one radius."""

    rho: float = Field(..., gt=0, description="Radius")
    point_count: int = Field(..., ge=0, description="Sample points in the closed ball")
    empty: bool = Field(..., description="No sample points in the ball (vacuous pass)")
    beta_through: Optional[float] = Field(default=None, ge=0, description="Width of the best line through the center over rho")
    beta_free: Optional[float] = Field(default=None, ge=0, description="Width of the best unconstrained line over rho")
    line_angle: Optional[float] = Field(default=None, description="Angle of the reported best line")
    line_offset: Optional[float] = Field(default=None, description="Signed offset of the reported best line")


class FlatnessProfile(BaseModel):
    """Flatness entries around one center."""

    center: Tuple[float, float] = Field(..., description="Ball center")
    constrained: bool = Field(..., description="Best line reported is the through-center line")
    entries: List[FlatnessEntry] = Field(..., description="Entries by decreasing radius")


class Witness(BaseModel):
    """Ball in which an approximation property failed."""

    center: Tuple[float, float] = Field(..., description="Ball center (the tested point)")
    rho: float = Field(..., gt=0, description="Ball radius")
    beta: float = Field(..., ge=0, description="Measured width over rho")
    delta: float = Field(..., description="Threshold that beta exceeded")
    line_angle: float = Field(..., description="Angle of the line that was measured")
    line_offset: float = Field(..., description="Signed offset of the line that was measured")


class LineRecord(BaseModel):
    """Line reused across scales by the strong variants."""

    angle: float = Field(..., description="Canonical angle in [0, pi)")
    offset: float = Field(..., description="Signed offset")
    chosen_at_rho: float = Field(..., description="Radius at which the line was fitted")


class CenterVerdict(BaseModel):
    """Verdict at one center."""

    index: int = Field(..., ge=0, description="Center position in the request")
    center: Tuple[float, float] = Field(..., description="Center")
    holds: bool = Field(..., description="Holds at all tested scales")
    witness: Optional[Witness] = Field(default=None, description="Failing ball")
    reused_line: Optional[LineRecord] = Field(default=None, description="Single line of the strong variants")
    tested_balls: int = Field(default=0, ge=0, description="Balls examined")


class PropertyReport(BaseModel):
    """Finite-scale verdicts for one approximation property."""

    property: PropertyId = Field(..., description="Tested property")
    delta: float = Field(..., gt=0, description="Threshold")
    delta_ladder: Optional[List[float]] = Field(default=None, description="Thresholds for the all-delta variants")
    fit_mode: FitMode = Field(..., description="Line constraint used")
    line_policy: Optional[LinePolicy] = Field(default=None, description="Line choice of the strong variants")
    sampled_centers: int = Field(..., ge=0, description="Number of centers")
    scales: List[float] = Field(..., description="Radius ladder, largest first")
    tested_range: Optional[Tuple[float, float]] = Field(default=None, description="(smallest, largest) radius actually tested")
    rho0: Optional[float] = Field(default=None, description="Uniform radius of the uniform variants")
    contained_in_ball: Optional[bool] = Field(default=None, description="Sample fits in a ball of radius rho0")
    verdicts: List[CenterVerdict] = Field(..., description="Verdict per center, in request order")

    @builtins.property
    def holds(self) -> bool:
        """Check whether every center holds."""
        return (self.contained_in_ball is not False) and all(v.holds for v in self.verdicts)

    @builtins.property
    def failures(self) -> List[CenterVerdict]:
        """Get failing centers."""
        return [v for v in self.verdicts if not v.holds]


class DeltaLadderReport(BaseModel):
    """Reports of a base property across a threshold ladder."""

    base_property: PropertyId = Field(..., description="Base property, i or ii")
    deltas: List[float] = Field(..., description="Threshold ladder, decreasing")
    reports: List[PropertyReport] = Field(..., description="One report per threshold")
    finest_holding_delta: Optional[float] = Field(default=None, description="Smallest threshold that still holds")
    vacuous: List[bool] = Field(default_factory=list, description="Thresholds for which no admissible scale was testable")


class LocalFinitenessRow(BaseModel):
    """Weighted length inside one ball."""

    center_index: int = Field(..., ge=0, description="Center position")
    center: Tuple[float, float] = Field(..., description="Center")
    rho: float = Field(..., gt=0, description="Radius")
    length: float = Field(..., ge=0, description="Weighted length inside the ball")
    ratio: float = Field(..., ge=0, description="length / (2 rho)")


class LocalFinitenessReport(BaseModel):
    """Length-growth table per center."""

    rows: List[LocalFinitenessRow] = Field(..., description="Rows by center then decreasing radius")
    diverging: List[bool] = Field(..., description="Per center: length fails to shrink in proportion to rho")


class RunConfig(BaseModel):
    """Everything that determines a command's outputs."""

    command: str = Field(..., description="Command name")
    schedule: Optional[str] = Field(default=None, description="Schedule spec text")
    depth: Optional[int] = Field(default=None, ge=0, description="Construction depth")
    outputs: Dict[str, str] = Field(default_factory=dict, description="Output paths by role")
    seed: int = Field(default=0, description="Sampler seed")
    tolerance_overrides: Dict[str, float] = Field(default_factory=dict, description="Settings overrides")
