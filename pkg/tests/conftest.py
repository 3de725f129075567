"""Shared fixtures and the dense-angle oracle for the line fitters."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from kochtype.services.construction import build_tree
from kochtype.services.schedules import AEpsSchedule, ConstantSchedule, GeometricSchedule

ORACLE_ANGLES = 100_000


def _through_width(points: np.ndarray, center: np.ndarray, phi) -> np.ndarray:
    phi = np.atleast_1d(phi)
    normals = np.column_stack((-np.sin(phi), np.cos(phi)))
    return np.abs((points - center) @ normals.T).max(axis=0)


def _free_width(points: np.ndarray, phi) -> np.ndarray:
    phi = np.atleast_1d(phi)
    normals = np.column_stack((-np.sin(phi), np.cos(phi)))
    proj = points @ normals.T
    return (proj.max(axis=0) - proj.min(axis=0)) / 2.0


def _oracle(width, refine: int = 5) -> float:
    """Grid minimum over [0, pi), polished by bounded scalar minimization around the best cells."""
    grid = np.linspace(0.0, math.pi, ORACLE_ANGLES, endpoint=False)
    values = width(grid)
    best = float(values.min())
    step = math.pi / ORACLE_ANGLES
    for k in np.argsort(values)[:refine]:
        res = minimize_scalar(
            lambda phi: float(width(phi)[0]),
            bounds=(grid[k] - step, grid[k] + step),
            method="bounded",
            options={"xatol": 1e-12}
        )
        best = min(best, float(res.fun))
    return best


def oracle_through(points, center) -> float:
    pts, c = np.asarray(points, dtype=float), np.asarray(center, dtype=float)
    return _oracle(lambda phi: _through_width(pts, c, phi))


def oracle_free(points) -> float:
    pts = np.asarray(points, dtype=float)
    return _oracle(lambda phi: _free_width(pts, phi))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def line_points():
    """10**4 points on the segment from (0, 0) to (1, 0)."""
    x = np.linspace(0.0, 1.0, 10_000)
    return np.column_stack((x, np.zeros_like(x)))


@pytest.fixture
def aeps_tree():
    return build_tree(AEpsSchedule(0.01), depth=10)


@pytest.fixture
def geometric_tree():
    return build_tree(GeometricSchedule(0.1, 0.5), depth=10)


@pytest.fixture
def koch_tree():
    return build_tree(ConstantSchedule(math.pi / 6), depth=8)
