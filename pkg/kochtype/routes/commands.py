"""Command handlers for the kochtype command line."""

import math
import sys
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import MethodMismatchError, SpecParseError
from kochtype.models import DimensionEstimate, DimensionMethod, GalleryDocument, PolylineDocument
from kochtype.services.analysis import (
    box_counting_dim,
    dim_bounds_koch,
    dim_formula_ar,
    dyadic_cells,
    length_rows,
    measure_of_image,
    moran_solve,
    rectifiability_report,
    tree_box_counting_dim,
)
from kochtype.services.construction import (
    UNIT_BASE,
    build_tree,
    densify,
    weighted_limit_sample,
)
from kochtype.services.gallery import gallery
from kochtype.services.geometry import Point2, Segment
from kochtype.services.properties import CSV_HEADER, property_service
from kochtype.services.render_service import render_service
from kochtype.services.schedules import AngleSchedule, ConstantSchedule, parse_schedule_spec
from kochtype.utils.utils import (
    atomic_write,
    load_gallery_document,
    load_polyline_document,
    parse_box,
    parse_float_list,
    parse_params,
    to_json,
    write_csv,
    write_json,
)

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_PROPERTY_FAILED = 10

Sample = Tuple[np.ndarray, np.ndarray, float]


def _emit(value, out: Optional[str]) -> None:
    if out:
        write_json(out, value)
    else:
        sys.stdout.write(to_json(value))


def _base(text: Optional[str]) -> Segment:
    if not text:
        return UNIT_BASE
    x0, y0, x1, y1 = parse_box(text)
    return Segment(Point2(x0, y0), Point2(x1, y1))


def _depth(args) -> int:
    return settings.default_depth if args.depth is None else args.depth


def _midpoint_sample(vertices: np.ndarray) -> Sample:
    points = (vertices[:-1] + vertices[1:]) / 2.0
    lengths = np.hypot(*np.diff(vertices, axis=0).T)
    return points, lengths, float(lengths.max())


def _load_sample(args) -> Sample:
    """Points, per-point lengths and resolution from exactly one input option."""
    given = [name for name in ("input", "points", "gallery", "schedule") if getattr(args, name, None)]
    if len(given) != 1:
        raise SpecParseError("Give exactly one of --in, --points, --gallery or --schedule", details={"given": given})
    if args.input:
        document = load_polyline_document(args.input)
        return _midpoint_sample(np.asarray(document.vertices, dtype=float))
    if args.points:
        document = load_gallery_document(args.points)
        return np.asarray(document.points, dtype=float), np.asarray(document.weights, dtype=float), document.resolution
    if args.gallery:
        sample = gallery(args.gallery, parse_params(args.param), args.count, parse_box(args.box) if args.box else None)
        return sample.points, sample.weights, sample.resolution
    tree = build_tree(parse_schedule_spec(args.schedule), _base(args.base), _depth(args))
    points, weights = weighted_limit_sample(tree)
    return points, weights, float(weights.max())


def _pick_centers(points: np.ndarray, text: Optional[str], seed: int) -> np.ndarray:
    """Explicit 'x,y;x,y' centers, or a seeded choice of K sample points."""
    text = text or "16"
    if ";" in text or "," in text:
        rows = [parse_float_list(part, "center") for part in text.split(";") if part.strip()]
        if any(len(r) != 2 for r in rows):
            raise SpecParseError(f"Centers '{text}' must look like x,y;x,y", details={"centers": text})
        return np.asarray(rows, dtype=float)
    try:
        count = int(text)
    except ValueError:
        raise SpecParseError(f"Centers '{text}' must be a count or a list of points", details={"centers": text})
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(points), size=min(count, len(points)), replace=False)
    return points[np.sort(chosen)]


def cmd_build(args) -> int:
    """Build a cap tree and write its deepest polyline."""
    schedule = parse_schedule_spec(args.schedule)
    base = _base(args.base)
    depth = _depth(args)
    tree = build_tree(schedule, base, depth)
    document = PolylineDocument(
        schedule=schedule.echo(),
        depth=depth,
        base=[[base.a.x, base.a.y], [base.b.x, base.b.y]],
        vertices=tree.vertices(depth).tolist()
    )
    write_json(args.out, document)
    logger.info("Wrote polyline", path=args.out, vertices=len(document.vertices))
    return EXIT_OK


def cmd_render(args) -> int:
    """Render a polyline file as SVG."""
    document = load_polyline_document(args.input)
    svg = render_service.render_svg(document.vertices, args.width)
    atomic_write(args.out, svg)
    return EXIT_OK


def _schedule_or_none(args) -> Optional[AngleSchedule]:
    return parse_schedule_spec(args.schedule) if getattr(args, "schedule", None) else None


def cmd_dim(args) -> int:
    """Dimension by Moran equation, closed form, box counting or angle bounds."""
    schedule = _schedule_or_none(args)
    method = args.method
    rows: List[Tuple[float, int]] = []

    if method == "moran":
        if args.ratios:
            ratios = parse_float_list(args.ratios, "ratios")
        elif isinstance(schedule, ConstantSchedule):
            ratios = [1.0 / (2.0 * math.cos(schedule.theta))] * 2
        else:
            raise MethodMismatchError("Moran needs --ratios or a const schedule", details={"schedule": getattr(schedule, "spec", None)})
        estimate = DimensionEstimate(value=moran_solve(ratios), method=DimensionMethod.MORAN, note=f"ratios {ratios}")
    elif method == "formula":
        if schedule is None or not schedule.stage_uniform:
            raise MethodMismatchError("The closed form needs a parametric schedule", details={"schedule": getattr(schedule, "spec", None)})
        r = schedule.limit_angle
        estimate = DimensionEstimate(value=dim_formula_ar(r), method=DimensionMethod.CLOSED_FORM, note=f"limit angle {r!r}")
    elif method == "box":
        scales = parse_float_list(args.scales, "scales") if args.scales else None
        if args.input:
            document = load_polyline_document(args.input)
            scales = scales or settings.box_scales
            spacing = min(scales) / settings.resolution_factor
            estimate = box_counting_dim(densify(document.vertices, spacing), scales, resolution=spacing)
        elif schedule is not None:
            estimate = tree_box_counting_dim(build_tree(schedule, _base(args.base), _depth(args)), scales)
        else:
            raise SpecParseError("Box counting needs --in or --schedule")
        rows = list(zip(estimate.fit_diagnostics.scales, estimate.fit_diagnostics.counts))
    elif method == "bounds":
        if schedule is None:
            raise MethodMismatchError("Angle bounds need a schedule")
        estimate = dim_bounds_koch(schedule)
    else:
        raise MethodMismatchError(f"Unknown method '{method}'", details={"method": method})

    _emit(estimate, args.out)
    if args.csv and rows:
        write_csv(args.csv, ["scale", "box_count"], rows)
    return EXIT_OK


def cmd_measure(args) -> int:
    """Stage lengths as CSV, and optionally the quadrature over an interval."""
    schedule = parse_schedule_spec(args.schedule)
    depth = _depth(args)
    tree = build_tree(schedule, _base(args.base), depth)
    write_csv(args.out, ["stage", "total_length"], length_rows(tree))
    if args.interval:
        a, b = parse_float_list(args.interval, "interval")[:2]
        _emit(measure_of_image(tree, dyadic_cells(a, b, depth), depth), args.json)
    return EXIT_OK


def cmd_report(args) -> int:
    """Rectifiability verdict as JSON."""
    schedule = parse_schedule_spec(args.schedule)
    _emit(rectifiability_report(schedule, args.variant, args.depth), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    """Check one approximation property; exit 10 when any center fails."""
    points, _, resolution = _load_sample(args)
    centers = _pick_centers(points, args.centers, args.seed)
    scales = parse_float_list(args.scales, "scales") if args.scales else settings.radius_ladder
    report = property_service.check_property(
        points,
        args.property,
        args.delta,
        centers,
        scales,
        fit_mode=args.fit_mode,
        line_policy=args.line_policy,
        delta_ladder=parse_float_list(args.delta_ladder, "delta ladder") if args.delta_ladder else None,
        rho0=args.rho0,
        resolution=resolution
    )
    _emit(report, args.out)
    if args.csv:
        rows = property_service.flatness_rows(points, report)
        write_csv(args.csv, CSV_HEADER, ([row[k] for k in CSV_HEADER] for row in rows))
    return EXIT_OK if report.holds else EXIT_PROPERTY_FAILED


def cmd_gallery(args) -> int:
    """Sample a named set and write it as JSON."""
    box = parse_box(args.box) if args.box else None
    sample = gallery(args.name, parse_params(args.param), args.count, box)
    document = GalleryDocument(
        name=sample.name,
        params={k: float(v) for k, v in sample.params.items()},
        box=list(sample.box) if sample.box else None,
        resolution=sample.resolution,
        points=sample.points.tolist(),
        weights=sample.weights.tolist()
    )
    write_json(args.out, document)
    return EXIT_OK


COMMANDS: Dict[str, Callable] = {
    "build": cmd_build,
    "render": cmd_render,
    "dim": cmd_dim,
    "measure": cmd_measure,
    "report": cmd_report,
    "check": cmd_check,
    "gallery": cmd_gallery,
}


def add_command_parsers(subparsers) -> None:
    """Register every command's arguments."""
    p = subparsers.add_parser("build", help="Build a polyline from a schedule")
    p.add_argument("--schedule", required=True, help="Schedule spec, e.g. aeps:eps=0.01")
    p.add_argument("--depth", type=int, help="Construction depth")
    p.add_argument("--base", help="Root base x0,y0,x1,y1 (default 0,0,1,0)")
    p.add_argument("--out", required=True, help="Polyline JSON output")

    p = subparsers.add_parser("render", help="Render a polyline JSON file as SVG")
    p.add_argument("--in", dest="input", required=True, help="Polyline JSON input")
    p.add_argument("--out", required=True, help="SVG output")
    p.add_argument("--width", type=int, help="Width in pixels")

    p = subparsers.add_parser("dim", help="Dimension estimates")
    p.add_argument("--method", required=True, choices=["moran", "formula", "box", "bounds"])
    p.add_argument("--schedule", help="Schedule spec")
    p.add_argument("--in", dest="input", help="Polyline JSON input for box counting")
    p.add_argument("--ratios", help="Comma-separated Moran ratios")
    p.add_argument("--depth", type=int, help="Construction depth for box counting")
    p.add_argument("--base", help="Root base x0,y0,x1,y1")
    p.add_argument("--scales", help="Comma-separated box sizes")
    p.add_argument("--out", help="Estimate JSON output (stdout when omitted)")
    p.add_argument("--csv", help="(scale, box_count) CSV output")

    p = subparsers.add_parser("measure", help="Stage lengths and image measure")
    p.add_argument("--schedule", required=True)
    p.add_argument("--depth", type=int)
    p.add_argument("--base", help="Root base x0,y0,x1,y1")
    p.add_argument("--out", required=True, help="(stage, total_length) CSV output")
    p.add_argument("--interval", help="a,b with dyadic endpoints at the given depth")
    p.add_argument("--json", help="Measure JSON output (stdout when omitted)")

    p = subparsers.add_parser("report", help="Rectifiability report")
    p.add_argument("--schedule", required=True)
    p.add_argument("--depth", type=int, help="Working depth of the stretch classification")
    p.add_argument("--variant", default="curve", choices=["curve", "edgeless"])
    p.add_argument("--out", help="Report JSON output (stdout when omitted)")

    p = subparsers.add_parser("check", help="Check an approximation property")
    p.add_argument("--in", dest="input", help="Polyline JSON input")
    p.add_argument("--points", help="Gallery JSON input")
    p.add_argument("--gallery", help="Gallery set name")
    p.add_argument("--schedule", help="Schedule spec")
    p.add_argument("--param", action="append", help="Gallery parameter key=value")
    p.add_argument("--box", help="Gallery box x0,y0,x1,y1")
    p.add_argument("--count", type=int, help="Gallery sample size")
    p.add_argument("--depth", type=int)
    p.add_argument("--base", help="Root base x0,y0,x1,y1")
    p.add_argument("--property", required=True, choices=["i", "ii", "iii", "iv", "v", "vi", "vii", "viii"])
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--delta-ladder", help="Extra thresholds for properties iii and iv")
    p.add_argument("--centers", help="Center count, or explicit x,y;x,y")
    p.add_argument("--scales", help="Comma-separated radii, largest first")
    p.add_argument("--rho0", type=float, help="Uniform radius for properties v and viii")
    p.add_argument("--fit-mode", choices=["through", "free"], help="Line constraint for properties ii, iv and vii")
    p.add_argument("--line-policy", choices=["finest", "coarsest"], help="Line choice of the strong variants")
    p.add_argument("--out", help="Report JSON output (stdout when omitted)")
    p.add_argument("--csv", help="Per-ball flatness CSV output")

    p = subparsers.add_parser("gallery", help="Sample a named example set")
    p.add_argument("--name", required=True)
    p.add_argument("--param", action="append", help="Parameter key=value")
    p.add_argument("--box", help="Clipping box x0,y0,x1,y1")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)

    for name, sub in subparsers.choices.items():
        sub.set_defaults(handler=COMMANDS[name])
