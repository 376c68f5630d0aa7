"""
Optimal entry and exit with a stop-loss level L

The exit value is V_L(x) = C F(x) + D G(x) between L and the threshold b_L,
and x - c outside. Once V_L is known the entry value is
    J_L(x) = P F_hat(x)          x < a_L
             V_L(x) - x - c_hat  a_L <= x <= d_L
             Q G_hat(x)          x > d_L
so entry happens only on the interval [a_L, d_L] strictly above L.

The relative variant sets the stop at the entry price minus ell, which ties
the exit problem to the entry level; it is solved on a price grid through
the discrete concave majorant.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.optimize import minimize_scalar

from solvers.double_stopping import BRACKET_LIMIT, DiscountSpec, l_star, resolvents
from tools.errors import ConsistencyError, InputError, ResolutionError, SolverError
from tools.majorant import discrete_concave_majorant
from tools.roots import expand_bracket, find_root, sign_changes
from tools.special_fn import DEFAULT_QUADRATURE, ModelParams, QuadratureConfig, Resolvent, make_resolvent

logger = logging.getLogger(__name__)

DEGENERACY_GAP = 1e-6
SCAN_POINTS = 401
CONTACT_RTOL = 1e-10


class StopLossSolution(BaseModel):
    """Exit and entry boundaries under a stop-loss at L"""

    model_config = ConfigDict(frozen=True)

    L: float
    L_star: float
    b_L: float
    C: float = 0.0
    D: float = 0.0
    degenerate_exit: bool = False
    a_L: Optional[float] = None
    d_L: Optional[float] = None
    P: float = 0.0
    Q: float = 0.0
    trivial_entry: Optional[bool] = None

    @property
    def entry_solved(self) -> bool:
        return self.trivial_entry is not None

    def to_report(self) -> dict:
        return self.model_dump()


class RelativeStopLossSpec(BaseModel):
    """Stop placed ell below the entry price, evaluated on a price grid"""

    model_config = ConfigDict(frozen=True)

    ell: float = Field(gt=0)
    x_grid: Tuple[float, ...]

    @field_validator("x_grid")
    @classmethod
    def _increasing(cls, grid: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(grid) < 3:
            raise ValueError("relative stop-loss grid needs at least 3 points")
        if not all(b > a for a, b in zip(grid, grid[1:])):
            raise ValueError("relative stop-loss grid must be strictly increasing")
        return grid

    @classmethod
    def around(cls, p: ModelParams, ell: float, n: int = 1001, width: float = 4.0) -> "RelativeStopLossSpec":
        """n points over theta +/- width stationary standard deviations"""
        sd = p.stationary_sd
        grid = np.linspace(p.theta - width * sd, p.theta + width * sd, n)
        return cls(ell=ell, x_grid=tuple(float(x) for x in grid))


class RelativeStopLossResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    ell: float
    x: List[float]
    V_rel: List[float]
    reward: List[float]
    J_rel: List[float]
    d_star: float
    b_star: float
    effective_stop: float
    exit: StopLossSolution

    def to_report(self) -> dict:
        return {
            "ell": self.ell,
            "d_star": self.d_star,
            "b_star": self.b_star,
            "effective_stop": self.effective_stop,
            "exit": self.exit.to_report(),
        }


# exit side


def _exit_residual(b: float, L: float, res: Resolvent, c: float) -> float:
    """Smooth-pasting equation for b_L, divided by F(b) G(L)"""
    g = res.G_ratio(b, L)
    f = res.F_ratio(L, b)
    rho_F = res.dlog_F(b)
    rho_G = res.dlog_G(b)
    return ((L - c) * g - (b - c)) * rho_F + ((b - c) * f - (L - c)) * rho_G * g - (g * f - 1.0)


def exit_coefficients(L: float, b: float, res: Resolvent, c: float) -> Tuple[float, float]:
    """C and D with C F + D G = x - c at both x = L and x = b"""
    FL, Fb, GL, Gb = res.F(L), res.F(b), res.G(L), res.G(b)
    det = Fb * GL - FL * Gb
    C = ((b - c) * GL - (L - c) * Gb) / det
    D = ((L - c) * Fb - (b - c) * FL) / det
    return C, D


def solve_exit_stoploss(
    L: float, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> StopLossSolution:
    critical = l_star(p, d)
    if critical - L < DEGENERACY_GAP:
        logger.debug(f"L={L:.6g} at or above L*={critical:.6g}: immediate exit everywhere")
        return StopLossSolution(L=L, L_star=critical, b_L=L, degenerate_exit=True)

    res = make_resolvent(p, d.r, q)
    sd = p.stationary_sd

    def residual(b: float) -> float:
        return _exit_residual(b, L, res, d.c)

    lo, hi = expand_bracket(residual, critical, critical + sd, direction="up", limit=BRACKET_LIMIT * sd)
    b_L = find_root(residual, lo, hi, name="b_L")
    C, D = exit_coefficients(L, b_L, res, d.c)
    logger.debug(f"stop-loss exit: L={L:.6g} b_L={b_L:.6f}")
    return StopLossSolution(L=L, L_star=critical, b_L=b_L, C=C, D=D)


def value_VL(x: float, sol: StopLossSolution, res: Resolvent, c: float) -> float:
    if sol.degenerate_exit or x <= sol.L or x >= sol.b_L:
        return x - c
    return sol.C * res.F(x) + sol.D * res.G(x)


def value_VL_d1(x: float, sol: StopLossSolution, res: Resolvent, c: float) -> float:
    """Right derivative at L, left derivative at b_L"""
    if sol.degenerate_exit or x < sol.L or x >= sol.b_L:
        return 1.0
    return sol.C * res.dF(x) + sol.D * res.dG(x)


def entry_reward_L(x: float, sol: StopLossSolution, res: Resolvent, d: DiscountSpec) -> float:
    """h_hat_L(x) = V_L(x) - x - c_hat"""
    return value_VL(x, sol, res, d.c) - x - d.c_hat


# entry side


def entry_reward_max(
    sol: StopLossSolution, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> Tuple[float, float]:
    """(argmax, max) of h_hat_L over (L, b_L): grid scan, then golden section"""
    if sol.degenerate_exit:
        return sol.L, -(d.c + d.c_hat)
    res = make_resolvent(p, d.r, q)
    xs = np.linspace(sol.L, sol.b_L, SCAN_POINTS)[1:-1]
    hs = np.fromiter((entry_reward_L(float(x), sol, res, d) for x in xs), dtype=float)
    i = int(np.argmax(hs))
    if 0 < i < len(xs) - 1:
        try:
            found = minimize_scalar(
                lambda x: -entry_reward_L(x, sol, res, d),
                bracket=(float(xs[i - 1]), float(xs[i]), float(xs[i + 1])),
                method="golden",
                tol=1e-10,
            )
        except ValueError as e:
            # flat top on the scan grid; the grid maximum stands
            logger.debug(f"golden section skipped: {e}")
        else:
            if -found.fun >= hs[i]:
                return float(found.x), float(-found.fun)
    return float(xs[i]), float(hs[i])


def check_entry_nontrivial(
    sol: StopLossSolution, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> bool:
    """True when V_L(x) - x - c_hat is positive somewhere"""
    _, top = entry_reward_max(sol, p, d, q)
    return top > 0.0


def solve_entry_stoploss(
    sol: StopLossSolution, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> StopLossSolution:
    if not check_entry_nontrivial(sol, p, d, q):
        logger.info(f"entry never optimal with stop-loss L={sol.L:.6g}")
        return sol.model_copy(update={"trivial_entry": True, "a_L": None, "d_L": None, "P": 0.0, "Q": 0.0})

    res, res_hat = resolvents(p, d, q)
    eps = 1e-6 * p.stationary_sd

    def d_residual(x: float) -> float:
        # G_hat(V_L' - 1) - G_hat' h_hat_L over G_hat: the sign of H_hat_L'
        return value_VL_d1(x, sol, res, d.c) - 1.0 - res_hat.dlog_G(x) * entry_reward_L(x, sol, res, d)

    def a_residual(x: float) -> float:
        return value_VL_d1(x, sol, res, d.c) - 1.0 - res_hat.dlog_F(x) * entry_reward_L(x, sol, res, d)

    scan = np.linspace(sol.L + eps, sol.b_L - eps, SCAN_POINTS)
    falling = [(lo, hi) for lo, hi, sign in sign_changes(d_residual, scan) if sign > 0]
    if not falling:
        raise SolverError("no stationary point of the transformed entry reward inside (L, b_L)", (sol.L, sol.b_L))

    def transformed(x: float) -> float:
        return entry_reward_L(x, sol, res, d) / res_hat.G(x)

    # the tangency point is the local maximum with the largest transformed reward
    d_L = max((find_root(d_residual, lo, hi, name="d_L") for lo, hi in falling), key=transformed)
    if not transformed(d_L) > 0.0:
        raise SolverError("transformed entry reward is not positive at its maximum", (sol.L, sol.b_L), transformed(d_L))
    a_L = find_root(a_residual, sol.L + eps, d_L, name="a_L")

    if not sol.L < a_L < d_L < sol.b_L:
        raise ConsistencyError(
            f"entry interval out of order: L={sol.L:.6g} a_L={a_L:.6g} d_L={d_L:.6g} b_L={sol.b_L:.6g}"
        )
    P = entry_reward_L(a_L, sol, res, d) / res_hat.F(a_L)
    Q = entry_reward_L(d_L, sol, res, d) / res_hat.G(d_L)
    logger.info(f"stop-loss entry interval [{a_L:.6f}, {d_L:.6f}] with L={sol.L:.6g}, b_L={sol.b_L:.6f}")
    return sol.model_copy(update={"a_L": a_L, "d_L": d_L, "P": P, "Q": Q, "trivial_entry": False})


def solve_stoploss(
    L: float, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> StopLossSolution:
    """Exit then entry with a fixed stop-loss level"""
    return solve_entry_stoploss(solve_exit_stoploss(L, p, d, q), p, d, q)


def value_JL(x: float, sol: StopLossSolution, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    if not sol.entry_solved:
        raise ValueError("entry problem not solved")
    if sol.trivial_entry:
        return 0.0
    if x < sol.a_L:
        return entry_reward_L(sol.a_L, sol, res, d) * res_hat.F_ratio(x, sol.a_L)
    if x > sol.d_L:
        return entry_reward_L(sol.d_L, sol, res, d) * res_hat.G_ratio(x, sol.d_L)
    return entry_reward_L(x, sol, res, d)


def value_JL_d1(x: float, sol: StopLossSolution, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    if sol.trivial_entry:
        return 0.0
    if x < sol.a_L:
        return value_JL(x, sol, res, res_hat, d) * res_hat.dlog_F(x)
    if x > sol.d_L:
        return value_JL(x, sol, res, res_hat, d) * res_hat.dlog_G(x)
    return value_VL_d1(x, sol, res, d.c) - 1.0


def transform_H_hat_L(y: float, sol: StopLossSolution, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    """h_hat_L(x) / G_hat(x) at x = psi_hat^{-1}(y)"""
    x = res_hat.psi_inverse(y)
    return entry_reward_L(x, sol, res, d) / res_hat.G(x)


def value_grid_L(
    xs: Sequence[float], sol: StopLossSolution, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> Dict[str, np.ndarray]:
    res, res_hat = resolvents(p, d, q)
    xs = np.asarray(xs, dtype=float)
    V = np.fromiter((value_VL(float(x), sol, res, d.c) for x in xs), dtype=float)
    J = np.fromiter((value_JL(float(x), sol, res, res_hat, d) for x in xs), dtype=float)
    return {"x": xs, "V_L": V, "J_L": J}


# sweeps


def _exit_point(args) -> Tuple[float, float]:
    L, p, d, q = args
    try:
        return L, solve_exit_stoploss(L, p, d, q).b_L
    except SolverError as e:
        logger.warning(f"sweep point L={L:.6g} failed: {e}")
        return L, math.nan


def _map(func, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [func(job) for job in jobs]


def sweep_L(
    L_grid: Sequence[float],
    p: ModelParams,
    d: DiscountSpec,
    q: QuadratureConfig = DEFAULT_QUADRATURE,
    workers: int = 1,
) -> List[Tuple[float, float]]:
    """(L, b_L) for every L on the grid, closed by the point (L*, L*).

    Failed points are kept as NaN so the curve lines up with the grid.
    """
    critical = l_star(p, d)
    grid = sorted(float(L) for L in L_grid)
    above = [L for L in grid if L > critical]
    if above:
        raise InputError(f"stop-loss grid must not exceed L*={critical:.6g}; offending values {above[:5]}")
    if not grid:
        return []
    curve = _map(_exit_point, [(L, p, d, q) for L in grid], workers)
    if critical - grid[-1] >= DEGENERACY_GAP:
        curve.append((critical, critical))
    return curve


def sweep_L_multi(
    thetas: Sequence[float],
    L_offsets: Sequence[float],
    p: ModelParams,
    d: DiscountSpec,
    q: QuadratureConfig = DEFAULT_QUADRATURE,
    workers: int = 1,
) -> Dict[float, List[Tuple[float, float]]]:
    """One sweep per long-run mean; L_offsets are measured down from each L*"""
    if any(off < 0 for off in L_offsets):
        raise InputError("stop-loss offsets below L* must be non-negative")
    curves = {}
    for theta in thetas:
        shifted = p.model_copy(update={"theta": float(theta)})
        critical = l_star(shifted, d)
        curves[float(theta)] = sweep_L([critical - off for off in L_offsets], shifted, d, q, workers)
    return curves


# relative stop-loss


def _relative_point(args) -> float:
    x, ell, p, d, q = args
    sol = solve_exit_stoploss(x - ell, p, d, q)
    return value_VL(x, sol, make_resolvent(p, d.r, q), d.c)


def solve_relative_stoploss(
    spec: RelativeStopLossSpec,
    p: ModelParams,
    d: DiscountSpec,
    q: QuadratureConfig = DEFAULT_QUADRATURE,
    workers: int = 1,
) -> RelativeStopLossResult:
    """Entry level when the stop is placed ell below the entry price.

    The exit value seen at entry is V_{x - ell}(x). Its transformed reward
    (V_{x - ell}(x) - x - c_hat) / G_hat(x), plotted against psi_hat(x), is
    majorised on the grid together with the origin and a flat right tail at
    the maximum, which makes the majorant non-negative and non-decreasing.
    """
    x = np.asarray(spec.x_grid, dtype=float)
    res_hat = make_resolvent(p, d.r_hat, q)
    jobs = [(float(xi), spec.ell, p, d, q) for xi in x]
    V_rel = np.array(_map(_relative_point, jobs, workers))
    reward = V_rel - x - d.c_hat

    y = res_hat.on_grid("psi", x)
    G_hat = res_hat.on_grid("G", x)
    H = reward / G_hat
    top = float(H.max())
    ys = np.concatenate(([0.0], y, [2.0 * y[-1]]))
    hs = np.concatenate(([0.0], H, [max(top, 0.0)]))
    W = discrete_concave_majorant(ys, hs)[1:-1]

    scale = max(1.0, float(np.max(np.abs(H))))
    contact = np.flatnonzero(W - H <= CONTACT_RTOL * scale)
    if top <= 0.0:
        raise ResolutionError(f"transformed reward is never positive on the {len(x)}-point grid")
    if len(contact) == 0:
        raise ResolutionError(
            f"majorant never touches the transformed reward on {len(x)} grid points; refine the grid"
        )
    i = int(contact[-1])
    d_star = float(x[i])
    stop = d_star - spec.ell
    exit_sol = solve_exit_stoploss(stop, p, d, q)
    J_rel = G_hat * W
    logger.info(f"relative stop-loss ell={spec.ell:.4g}: enter at {d_star:.6f}, stop {stop:.6f}, exit {exit_sol.b_L:.6f}")
    return RelativeStopLossResult(
        ell=spec.ell,
        x=x.tolist(),
        V_rel=V_rel.tolist(),
        reward=reward.tolist(),
        J_rel=J_rel.tolist(),
        d_star=d_star,
        b_star=exit_sol.b_L,
        effective_stop=stop,
        exit=exit_sol,
    )

