"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InsufficientInputError, InvalidInputError
from .geometry import Assembly, PointCloud, Primitive

MIN_POINTS = 4


def check_point_cloud(cloud, min_points=MIN_POINTS, name="point cloud"):
    """Return ``cloud`` as a finite ``(N, 3)`` float array."""
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError(f"{name} contains NaN or infinite coordinates")
    if len(pts) < min_points:
        raise InsufficientInputError(f"{name} needs at least {min_points} points, got {len(pts)}")
    return pts


def check_point_clouds(clouds, min_points=MIN_POINTS):
    if isinstance(clouds, np.ndarray) and clouds.ndim == 2:
        raise InvalidInputError("expected a collection of point clouds, got a single (N, 3) array")
    out = [check_point_cloud(c, min_points, name=f"point cloud {i}") for i, c in enumerate(clouds)]
    if not out:
        raise InvalidInputError("no point clouds given")
    return out


def check_assembly(a, allow_empty=False, name="assembly"):
    if isinstance(a, Assembly):
        prims = a.primitives
    else:
        prims = tuple(a)
    for i, p in enumerate(prims):
        if not isinstance(p, Primitive):
            raise InvalidInputError(f"{name} item {i} is not a Primitive")
    if not prims and not allow_empty:
        raise InvalidInputError(f"{name} is empty")
    return Assembly(tuple(prims))


def check_consistent_length(x, y):
    if len(x) != len(y):
        raise InvalidInputError(f"got {len(x)} point clouds but {len(y)} assemblies")


def check_seed(seed):
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise InvalidInputError(f"seed must be a nonnegative integer, got {seed!r}")
    return int(seed)
