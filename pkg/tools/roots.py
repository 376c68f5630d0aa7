"""
Bracketed root finding

Brackets are grown by doubling the search width away from a fixed anchor
until the residual changes sign; the root is then polished with Brent's
method (inverse quadratic / secant steps safeguarded by bisection).
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from tools.errors import SolverError

logger = logging.getLogger(__name__)

XTOL = 1e-12
MAX_DOUBLINGS = 60


def _sign(value: float) -> int:
    value = float(value)
    if math.isnan(value):
        raise SolverError("residual evaluated to NaN")
    return int(value > 0) - int(value < 0)


def expand_bracket(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    direction: str = "up",
    limit: Optional[float] = None,
) -> Tuple[float, float]:
    """Grow [lo, hi] until func changes sign across it.

    direction "up" walks the bracket upward with doubling steps, "down"
    walks it downward. The step width never exceeds limit.
    """
    if hi <= lo:
        raise SolverError("empty initial bracket", (lo, hi))
    if direction not in ("up", "down"):
        raise ValueError(f"unknown direction {direction!r}")
    width = hi - lo
    f_lo, f_hi = func(lo), func(hi)
    for _ in range(MAX_DOUBLINGS):
        if _sign(f_lo) * _sign(f_hi) <= 0:
            return lo, hi
        width *= 2.0
        if limit is not None and width > limit:
            break
        if direction == "up":
            lo, f_lo = hi, f_hi
            hi = hi + width
            f_hi = func(hi)
        else:
            hi, f_hi = lo, f_lo
            lo = lo - width
            f_lo = func(lo)
    raise SolverError(f"no sign change found moving {direction}", (lo, hi), f_hi if direction == "up" else f_lo)


def find_root(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float = XTOL,
    name: str = "root",
) -> float:
    """Brent's method on a bracket known to contain a sign change"""
    f_lo, f_hi = func(lo), func(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if _sign(f_lo) * _sign(f_hi) > 0:
        raise SolverError(f"{name}: bracket does not straddle a root", (lo, hi), min(abs(f_lo), abs(f_hi)))
    try:
        root, info = brentq(func, lo, hi, xtol=xtol, maxiter=200, full_output=True)
    except (ValueError, RuntimeError) as e:
        raise SolverError(f"{name}: {e}", (lo, hi)) from e
    if not info.converged:
        raise SolverError(f"{name}: Brent iteration did not converge", (lo, hi))
    logger.debug(f"{name}: root {root:.12g} after {info.iterations} iterations")
    return root


def sign_changes(func: Callable[[float], float], xs: Sequence[float]) -> List[Tuple[float, float, int]]:
    """Scan a grid and list (left, right, sign_of_left) for every sign change"""
    values = [float(func(float(x))) for x in xs]
    found = []
    for i in range(len(xs) - 1):
        s0, s1 = _sign(values[i]), _sign(values[i + 1])
        if s0 != 0 and s0 * s1 <= 0:
            found.append((float(xs[i]), float(xs[i + 1]), s0))
    return found
