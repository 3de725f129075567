"""Deterministic samples of the named example sets."""

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import ConstructionError
from kochtype.services.construction import (
    build_tree,
    edge_ball_spec,
    sample_limit_set,
)
from kochtype.services.schedules import AEpsSchedule, ConstantSchedule

logger = structlog.get_logger()

Box = Tuple[float, float, float, float]

_ALIASES = {
    "n": "N",
    "lambdadelta": "lambda-delta",
    "lambdasq": "lambda-sq",
    "lambda2": "lambda-sq",
    "gamma": "gamma",
    "gammaeps": "gamma",
    "aeps": "aeps",
    "scriptaeps": "script-aeps",
}


@dataclass(frozen=True)
class GallerySample:
    """Points of a named set, with the curve length each point stands for."""
    name: str
    params: Dict[str, Any]
    points: np.ndarray
    weights: np.ndarray
    box: Optional[Box] = None
    resolution: float = field(default=0.0)


def canonical_name(name: str) -> str:
    """Normalize a gallery name (case and punctuation insensitive)."""
    key = re.sub(r"[^a-z0-9]", "", name.lower())
    if key not in _ALIASES:
        raise ConstructionError(f"Unknown gallery set '{name}'", details={"name": name, "known": sorted(set(_ALIASES.values()))})
    return _ALIASES[key]


def gallery(
    name: str,
    params: Optional[Dict[str, float]] = None,
    count: Optional[int] = None,
    box: Optional[Box] = None
) -> GallerySample:
    """Sample a named set; line families are clipped to the box."""
    params = dict(params or {})
    count = settings.gallery_points if count is None else count
    if count < 1:
        raise ConstructionError("Gallery sample size must be positive", details={"count": count})
    key = canonical_name(name)

    if key == "N":
        sample = _line_family(key, params, count, box, lambda n, x: np.full_like(x, 1.0 / n), lambda n, x: np.zeros_like(x), lambda n, xmax: 1.0 / (n * (n + 1)), signs=(1.0,))
    elif key == "lambda-delta":
        delta = _param(params, "delta")
        sample = _line_family(key, params, count, box, lambda n, x: delta * x / n, lambda n, x: np.full_like(x, delta / n), lambda n, xmax: delta * xmax / (n * (n + 1)))
    elif key == "lambda-sq":
        sample = _line_family(key, params, count, box, lambda n, x: x * x / n, lambda n, x: 2.0 * x / n, lambda n, xmax: xmax * xmax / (n * (n + 1)))
    else:
        sample = _tree_set(key, params, count)

    logger.info("Sampled gallery set", name=key, params=params, points=int(len(sample.points)))
    return sample


def _param(params: Dict[str, float], key: str) -> float:
    if key not in params:
        raise ConstructionError(f"Gallery parameter '{key}' is required", details={"params": params})
    value = float(params[key])
    if not (math.isfinite(value) and value > 0):
        raise ConstructionError(f"Gallery parameter '{key}' must be positive", details={"params": params})
    return value


def _line_family(
    key: str,
    params: Dict[str, float],
    count: int,
    box: Optional[Box],
    curve: Callable[[int, np.ndarray], np.ndarray],
    slope: Callable[[int, np.ndarray], np.ndarray],
    gap: Callable[[int, float], float],
    signs: Tuple[float, ...] = (1.0, -1.0)
) -> GallerySample:
    if box is None:
        raise ConstructionError(f"Gallery set '{key}' needs a bounding box", details={"name": key})
    x0, y0, x1, y1 = map(float, box)
    if not (x0 < x1 and y0 < y1):
        raise ConstructionError("Bounding box must have positive extent", details={"box": list(box)})
    xmax = max(abs(x0), abs(x1))

    # gap(n, xmax) is the largest distance inside the box between lines n and n + 1
    n_max = 1
    while gap(n_max, xmax) > settings.gallery_line_gap:
        n_max += 1
    lines = n_max * len(signs)
    per_line = max(2, count // lines)
    x = np.linspace(x0, x1, per_line)
    if x0 < 0.0 < x1:
        x = np.union1d(x, [0.0])
    spacing = np.diff(x)
    # each point stands for half of each neighbouring gap
    base_weight = np.concatenate(([spacing[0] / 2.0], (spacing[:-1] + spacing[1:]) / 2.0, [spacing[-1] / 2.0]))

    points, weights = [], []
    for n in range(1, n_max + 1):
        for sign in signs:
            y = sign * curve(n, x)
            keep = (y >= y0) & (y <= y1)
            if not np.any(keep):
                continue
            points.append(np.column_stack((x[keep], y[keep])))
            weights.append(base_weight[keep] * np.sqrt(1.0 + slope(n, x[keep]) ** 2))
    if not points:
        raise ConstructionError(f"Gallery set '{key}' has no points in the box", details={"box": list(box)})
    return GallerySample(key, params, np.vstack(points), np.concatenate(weights), (x0, y0, x1, y1), float(spacing.max()))


def _tree_set(key: str, params: Dict[str, float], count: int) -> GallerySample:
    eps = _param(params, "eps")
    depth = int(params.get("depth", settings.gallery_depth))
    schedule = ConstantSchedule(math.atan(2.0 * eps)) if key == "gamma" else AEpsSchedule(eps)
    tree = build_tree(schedule, depth=depth)
    exclusion = edge_ball_spec(tree, eps) if key == "script-aeps" else None
    points = sample_limit_set(tree, min(count, 2 ** depth), exclusion)
    lengths = np.hypot(*np.diff(tree.vertices(depth), axis=0).T)
    weight = float(lengths.sum()) / len(points)
    return GallerySample(key, params, points, np.full(len(points), weight), None, float(lengths.max()) * 2 ** depth / min(count, 2 ** depth))
