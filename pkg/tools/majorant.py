"""
Discrete smallest concave majorant

The least concave function lying above a sampled curve is the upper convex
hull of its points, interpolated linearly between hull vertices.
"""
from typing import Sequence, Tuple

import numpy as np

from tools.errors import InputError


def _cross(o: Tuple[float, float], a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def upper_hull_indices(y: Sequence[float], h: Sequence[float]) -> np.ndarray:
    """Indices of the vertices of the upper hull of (y_i, h_i), left to right"""
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    if y.ndim != 1 or y.shape != h.shape:
        raise InputError("abscissae and values must be 1-d arrays of equal length")
    if len(y) < 2:
        raise InputError("need at least two points for a majorant")
    if not np.all(np.diff(y) > 0):
        raise InputError("abscissae must be strictly increasing")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(h))):
        raise InputError("abscissae and values must be finite")

    hull = []
    for i in range(len(y)):
        p = (y[i], h[i])
        # pop while the last vertex lies on or below the chord to p
        while len(hull) >= 2 and _cross((y[hull[-2]], h[hull[-2]]), (y[hull[-1]], h[hull[-1]]), p) >= 0:
            hull.pop()
        hull.append(i)
    return np.array(hull, dtype=int)


def discrete_concave_majorant(y: Sequence[float], h: Sequence[float]) -> np.ndarray:
    """Values of the smallest concave majorant of the points on the same grid"""
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    idx = upper_hull_indices(y, h)
    w = np.interp(y, y[idx], h[idx])
    # on hull vertices the majorant is the point itself
    w[idx] = h[idx]
    return np.maximum(w, h)
