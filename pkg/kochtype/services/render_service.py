"""SVG rendering of stage polylines."""

from typing import Optional

import numpy as np
import structlog

from kochtype.config import settings
from kochtype.exceptions import GeometryError
from kochtype.services.geometry import as_points

logger = structlog.get_logger()


def _num(value: float) -> str:
    text = format(float(value), ".12g")
    return "0" if text == "-0" else text


class RenderService:
    """Service for writing polylines as single-path SVG documents."""

    def render_svg(self, vertices, width_px: Optional[int] = None, margin: Optional[float] = None) -> str:
        """SVG 1.1 text with one path, y pointing up, 1px non-scaling stroke."""
        v = as_points(vertices)
        if len(v) < 2:
            raise GeometryError("A polyline needs at least two vertices", details={"vertices": int(len(v))})
        width_px = settings.svg_width if width_px is None else int(width_px)
        margin = settings.svg_margin if margin is None else float(margin)
        if width_px <= 0:
            raise GeometryError("SVG width must be positive", details={"width_px": width_px})

        flipped = np.column_stack((v[:, 0], -v[:, 1]))
        lo, hi = flipped.min(axis=0), flipped.max(axis=0)
        extent = hi - lo
        span = float(extent.max())
        if span == 0.0:
            raise GeometryError("Polyline collapses to a point")
        # thin drawings get the margin of their long side on both axes
        pad = margin * span
        x0, y0 = lo - pad
        w, h = extent + 2.0 * pad
        height_px = max(1, int(round(width_px * h / w)))

        path = "M " + " L ".join(f"{_num(x)} {_num(y)}" for x, y in flipped)
        svg = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width_px}" height="{height_px}" '
            f'viewBox="{_num(x0)} {_num(y0)} {_num(w)} {_num(h)}">\n'
            f'  <path d="{path}" fill="none" stroke="black" stroke-width="1" vector-effect="non-scaling-stroke"/>\n'
            '</svg>\n'
        )
        logger.info("Rendered polyline", vertices=int(len(v)), width_px=width_px, height_px=height_px)
        return svg


# Global service instance
render_service = RenderService()
