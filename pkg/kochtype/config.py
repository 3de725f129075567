"""Configuration management for the kochtype toolkit."""

import math
from typing import List
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables (prefix KOCHTYPE_)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="KOCHTYPE_",
        case_sensitive=False,
        extra="ignore"  # Ignore extra fields from environment variables
    )

    # Logging
    log_level: str = Field(default="WARNING", description="Logging level")

    # Numerical tolerances
    geometric_tolerance: float = Field(default=1e-9, description="Absolute tolerance for geometric equality")
    ball_boundary_tolerance: float = Field(default=1e-12, description="Points this close to a ball boundary count as inside")
    containment_slack: float = Field(default=1e-9, description="Slack for triangle containment checks")
    angle_tolerance: float = Field(default=1e-9, description="Inclusive tolerance on schedule angle bounds; covers 10-digit literals of pi/6")
    moran_tolerance: float = Field(default=1e-13, description="Residual tolerance for the Moran equation solver")
    product_increment_tolerance: float = Field(default=1e-15, description="Stop infinite products once log-increments drop below this")

    # Construction
    max_depth: int = Field(default=30, description="Hard guard on tree depth")
    default_depth: int = Field(default=12, description="Depth used when a command does not specify one")
    max_base_angle: float = Field(default=math.pi / 6, description="Largest accepted base angle (the classic Koch angle)")
    flat_angle_bound: float = Field(default=math.pi / 32, description="Angle regime in which the neighbour-angle and separation bounds hold")
    edge_ball_count: int = Field(default=256, description="Edge balls computed by default; later radii underflow")

    # Analysis
    box_scale_min_exponent: int = Field(default=3, description="Coarsest box size is 2**-min_exponent")
    box_scale_max_exponent: int = Field(default=9, description="Finest box size is 2**-max_exponent")
    resolution_factor: float = Field(default=4.0, description="Sample resolution must be this many times finer than the smallest scale")
    positive_fraction_stage: int = Field(default=4, description="Cell fractions below 2**-n0 count as negligible in dimension bounds")
    tail_horizon: int = Field(default=4096, description="Stages compared beyond the requested depth when centering")
    max_spiral_stages: int = Field(default=10_000_000, description="Summation cap for spiral diagnostics")
    stretch_exact_terms: int = Field(default=10_000, description="Terms summed exactly before a Power tail switches to zeta estimates")

    # Property checks
    neighbor_count: int = Field(default=8, description="Neighbour points tested around each center for properties ii, iv and vii")
    strong_line_policy: str = Field(default="finest", description="Scale at which strong variants pick L_y: finest or coarsest")
    radius_max_exponent: int = Field(default=1, description="Coarsest default radius is 2**-exponent")
    radius_min_exponent: int = Field(default=6, description="Finest default radius is 2**-exponent")
    finiteness_growth_margin: float = Field(default=0.05, description="Relative growth of length/(2 rho) that flags a center as diverging")

    # Gallery
    gallery_depth: int = Field(default=12, description="Depth used for gallery sets built from cap trees")
    gallery_points: int = Field(default=20000, description="Default gallery sample size")
    gallery_line_gap: float = Field(default=1e-6, description="Line families stop at the first line whose gap to the next line inside the box is at most this")

    # Execution
    workers: int = Field(default=4, description="Thread pool size for per-scale and per-center work")
    seed: int = Field(default=0, description="Seed for every sampler")

    # Output
    json_significant_digits: int = Field(default=17, description="Significant digits for JSON numbers")
    svg_width: int = Field(default=800, description="Default SVG width in pixels")
    svg_margin: float = Field(default=0.05, description="Relative SVG margin around the bounding box")

    @property
    def box_scales(self) -> List[float]:
        """Get the default box-size ladder, coarsest first."""
        return [2.0 ** -k for k in range(self.box_scale_min_exponent, self.box_scale_max_exponent + 1)]

    @property
    def radius_ladder(self) -> List[float]:
        """Get the default radius ladder, largest first."""
        return [2.0 ** -k for k in range(self.radius_max_exponent, self.radius_min_exponent + 1)]


# Global settings instance
settings = Settings()
