"""
Optimal entry and exit without stop-loss

Exit: V(x) = sup_tau E_x[e^{-r tau}(X_tau - c)] is solved by the threshold
b* where F(b) = (b - c) F'(b). Entry: J(x) = sup_nu E_x[e^{-r_hat nu}
(V(X_nu) - X_nu - c_hat)] is solved by the threshold d* where
G_hat(d)(V'(d) - 1) = G_hat'(d)(V(d) - d - c_hat). Hatted quantities use
the entry discount rate r_hat.
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tools.errors import ConsistencyError
from tools.majorant import discrete_concave_majorant
from tools.roots import expand_bracket, find_root
from tools.special_fn import DEFAULT_QUADRATURE, ModelParams, QuadratureConfig, Resolvent, make_resolvent

logger = logging.getLogger(__name__)

# multiples of the stationary standard deviation
BRACKET_LIMIT = 50.0
KINK_EXCLUSION = 2


class DiscountSpec(BaseModel):
    """Discount rates and transaction costs for the entry and the exit"""

    model_config = ConfigDict(frozen=True)

    r: float = Field(gt=0)
    r_hat: float = Field(gt=0)
    c: float
    c_hat: float

    @model_validator(mode="after")
    def _check(self) -> "DiscountSpec":
        for name in ("r", "r_hat", "c", "c_hat"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.r_hat > self.r:
            raise ValueError(f"entry rate r_hat={self.r_hat} must not exceed exit rate r={self.r}")
        if not self.c + self.c_hat > 0:
            raise ValueError(f"total transaction cost c + c_hat must be positive, got {self.c + self.c_hat}")
        return self

    def shifted(self, k: float) -> "DiscountSpec":
        """Exit cost shifted by k, entry cost by -k (round-trip cost unchanged)"""
        return self.model_copy(update={"c": self.c + k, "c_hat": self.c_hat - k})


class ThresholdSolution(BaseModel):
    """Free boundaries of the problem without stop-loss and the roots that bound them"""

    model_config = ConfigDict(frozen=True)

    b_star: float
    d_star: float
    L_star: float
    x_star: float
    d_bar: float
    b_under: float

    def to_report(self) -> Dict[str, float]:
        return self.model_dump()


def resolvents(
    p: ModelParams, d: DiscountSpec, q: Optional[QuadratureConfig] = None
) -> Tuple[Resolvent, Resolvent]:
    """(exit resolvent at r, entry resolvent at r_hat)"""
    return make_resolvent(p, d.r, q), make_resolvent(p, d.r_hat, q)


def l_star(p: ModelParams, d: DiscountSpec) -> float:
    """(mu theta + r c) / (mu + r)"""
    return (p.mu * p.theta + d.r * d.c) / (p.mu + d.r)


def solve_exit_threshold(p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    res = make_resolvent(p, d.r, q)
    sd = p.stationary_sd
    floor = max(l_star(p, d), d.c)

    def residual(b: float) -> float:
        # F(b) - (b - c) F'(b), divided by F(b) > 0
        return 1.0 - (b - d.c) * res.dlog_F(b)

    lo = floor + 1e-9 * sd
    lo, hi = expand_bracket(residual, lo, lo + sd, direction="up", limit=BRACKET_LIMIT * sd)
    b_star = find_root(residual, lo, hi, name="b*")
    logger.info(f"exit threshold b* = {b_star:.6f} (floor max(L*, c) = {floor:.6f})")
    return b_star


def value_V(x: float, b_star: float, res: Resolvent, c: float) -> float:
    if x >= b_star:
        return x - c
    return (b_star - c) * res.F_ratio(x, b_star)


def value_V_d1(x: float, b_star: float, res: Resolvent, c: float) -> float:
    if x >= b_star:
        return 1.0
    return (b_star - c) * res.dlog_F(x) * res.F_ratio(x, b_star)


def value_V_d2(x: float, b_star: float, res: Resolvent, c: float) -> float:
    if x >= b_star:
        return 0.0
    return (b_star - c) * res.d2F(x) / res.F(b_star)


def entry_reward(x: float, b_star: float, res: Resolvent, d: DiscountSpec) -> float:
    """h_hat(x) = V(x) - x - c_hat"""
    return value_V(x, b_star, res, d.c) - x - d.c_hat


def solve_entry_threshold(
    p: ModelParams,
    d: DiscountSpec,
    q: QuadratureConfig = DEFAULT_QUADRATURE,
    b_star: Optional[float] = None,
    d_bar: Optional[float] = None,
) -> float:
    res, res_hat = resolvents(p, d, q)
    if b_star is None:
        b_star = solve_exit_threshold(p, d, q)
    if d_bar is None:
        d_bar = solve_break_even(p, d, q, b_star)
    sd = p.stationary_sd

    def residual(x: float) -> float:
        # G_hat(V' - 1) - G_hat' h_hat, divided by G_hat > 0
        return value_V_d1(x, b_star, res, d.c) - 1.0 - res_hat.dlog_G(x) * entry_reward(x, b_star, res, d)

    hi = d_bar - 1e-9 * sd
    lo, hi = expand_bracket(residual, hi - sd, hi, direction="down", limit=BRACKET_LIMIT * sd)
    d_star = find_root(residual, lo, hi, name="d*")
    logger.info(f"entry threshold d* = {d_star:.6f}")
    return d_star


def value_J(x: float, sol: ThresholdSolution, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    if x <= sol.d_star:
        return entry_reward(x, sol.b_star, res, d)
    return entry_reward(sol.d_star, sol.b_star, res, d) * res_hat.G_ratio(x, sol.d_star)


def value_J_d1(x: float, sol: ThresholdSolution, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    if x <= sol.d_star:
        return value_V_d1(x, sol.b_star, res, d.c) - 1.0
    scale = entry_reward(sol.d_star, sol.b_star, res, d)
    return scale * res_hat.dlog_G(x) * res_hat.G_ratio(x, sol.d_star)


def solve_x_star(p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Root of G(x) - (x - c) G'(x), where H turns from decreasing to increasing"""
    res = make_resolvent(p, d.r, q)
    sd = p.stationary_sd
    hi = min(d.c, l_star(p, d))

    def residual(x: float) -> float:
        return 1.0 - (x - d.c) * res.dlog_G(x)

    lo, hi = expand_bracket(residual, hi - sd, hi, direction="down", limit=BRACKET_LIMIT * sd)
    return find_root(residual, lo, hi, name="x*")


def solve_break_even(p: ModelParams, d: DiscountSpec, q: QuadratureConfig, b_star: float) -> float:
    """Root of h_hat(x) = V(x) - x - c_hat below b*"""
    res = make_resolvent(p, d.r, q)
    sd = p.stationary_sd

    def residual(x: float) -> float:
        return entry_reward(x, b_star, res, d)

    lo, hi = expand_bracket(residual, b_star - sd, b_star, direction="down", limit=BRACKET_LIMIT * sd)
    return find_root(residual, lo, hi, name="d_bar")


def entry_generator(x: float, b_star: float, res: Resolvent, p: ModelParams, d: DiscountSpec) -> float:
    """(A - r_hat) h_hat(x) for the OU generator A; below b* it acts on V as A V = r V"""
    V = value_V(x, b_star, res, d.c)
    if x < b_star:
        return (d.r - d.r_hat) * V + (p.mu + d.r_hat) * x - p.mu * p.theta + d.r_hat * d.c_hat
    # h_hat is the constant -(c + c_hat) in the exit region
    return d.r_hat * (d.c + d.c_hat)


def solve_inflection(p: ModelParams, d: DiscountSpec, q: QuadratureConfig, b_star: float) -> float:
    """Root of (A - r_hat) h_hat = 0 below b*"""
    res = make_resolvent(p, d.r, q)
    sd = p.stationary_sd
    hi = min(l_star(p, d), b_star)

    def residual(x: float) -> float:
        return entry_generator(x, b_star, res, p, d)

    lo, hi = expand_bracket(residual, hi - sd, hi, direction="down", limit=BRACKET_LIMIT * sd)
    return find_root(residual, lo, hi, name="b_under")


def lemma_roots(
    p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE, b_star: Optional[float] = None
) -> Tuple[float, float, float]:
    """(x*, d_bar, b_under)"""
    if b_star is None:
        b_star = solve_exit_threshold(p, d, q)
    return solve_x_star(p, d, q), solve_break_even(p, d, q, b_star), solve_inflection(p, d, q, b_star)


def check_ordering(sol: ThresholdSolution, c: float) -> None:
    failures = []
    if not sol.b_star >= max(sol.L_star, c):
        failures.append(f"b*={sol.b_star:.6g} below max(L*, c)={max(sol.L_star, c):.6g}")
    if not sol.x_star < min(c, sol.L_star):
        failures.append(f"x*={sol.x_star:.6g} not below min(c, L*)")
    if not sol.d_star < sol.d_bar < sol.b_star:
        failures.append(f"expected d* < d_bar < b*, got {sol.d_star:.6g}, {sol.d_bar:.6g}, {sol.b_star:.6g}")
    if not sol.b_under < sol.L_star:
        failures.append(f"b_under={sol.b_under:.6g} not below L*={sol.L_star:.6g}")
    if failures:
        raise ConsistencyError("; ".join(failures))


def solve_no_stoploss(p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE) -> ThresholdSolution:
    """Exit threshold, entry threshold and the supporting roots in one call"""
    b_star = solve_exit_threshold(p, d, q)
    x_star, d_bar, b_under = lemma_roots(p, d, q, b_star)
    d_star = solve_entry_threshold(p, d, q, b_star, d_bar)
    sol = ThresholdSolution(
        b_star=b_star, d_star=d_star, L_star=l_star(p, d), x_star=x_star, d_bar=d_bar, b_under=b_under
    )
    check_ordering(sol, d.c)
    return sol


def brownian_thresholds(sigma: float, d: DiscountSpec) -> Tuple[float, float]:
    """(b*, d*) when the spread is a driftless Brownian motion"""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gain = math.sqrt(2.0 * d.r) / sigma
    b_star = d.c + 1.0 / gain
    ratio = 1.0 + math.sqrt(d.r_hat / d.r)
    slope = math.sqrt(2.0 * d.r_hat) / sigma

    def residual(x: float) -> float:
        return ratio * math.exp(gain * (x - b_star)) - slope * (x + d.c_hat) - 1.0

    width = 1.0 / gain
    lo, hi = expand_bracket(residual, b_star - width, b_star, direction="down")
    d_star = find_root(residual, lo, hi, name="brownian d*")
    return b_star, d_star


def interval_reward(x: float, a: float, b: float, res: Resolvent, c: float) -> float:
    """E_x[e^{-r tau}(X_tau - c)] with tau the first exit from (a, b)"""
    if not a < b:
        raise ValueError(f"empty interval ({a}, {b})")
    if x <= a or x >= b:
        return x - c
    Fa, Fb, Fx = res.F(a), res.F(b), res.F(x)
    Ga, Gb, Gx = res.G(a), res.G(b), res.G(x)
    det = Fa * Gb - Fb * Ga
    return ((a - c) * (Fx * Gb - Fb * Gx) + (b - c) * (Fa * Gx - Fx * Ga)) / det


def transformed_curve(
    reward: Callable[[float], float], res: Resolvent, xs: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """(psi(x), reward(x) / G(x)) on a price grid"""
    y = res.on_grid("psi", xs)
    h = np.fromiter((reward(float(x)) / res.G(float(x)) for x in xs), dtype=float)
    return y, h


def transform_H(y: float, res: Resolvent, c: float) -> float:
    """H(y) = (x - c) / G(x) at x = psi^{-1}(y)"""
    x = res.psi_inverse(y)
    return (x - c) / res.G(x)


def transform_H_hat(y: float, b_star: float, res: Resolvent, res_hat: Resolvent, d: DiscountSpec) -> float:
    """H_hat(y) = h_hat(x) / G_hat(x) at x = psi_hat^{-1}(y)"""
    x = res_hat.psi_inverse(y)
    return entry_reward(x, b_star, res, d) / res_hat.G(x)


def analytic_W(y: float, b_star: float, res: Resolvent, c: float) -> float:
    """Smallest concave majorant of H: linear through the origin up to psi(b*)"""
    if y <= 0:
        return 0.0
    if math.log(y) < res.log_psi(b_star):
        return y * (b_star - c) / res.F(b_star)
    return transform_H(y, res, c)


def value_grid(
    xs: Sequence[float], sol: ThresholdSolution, p: ModelParams, d: DiscountSpec, q: QuadratureConfig = DEFAULT_QUADRATURE
) -> Dict[str, np.ndarray]:
    res, res_hat = resolvents(p, d, q)
    xs = np.asarray(xs, dtype=float)
    V = np.fromiter((value_V(float(x), sol.b_star, res, d.c) for x in xs), dtype=float)
    J = np.fromiter((value_J(float(x), sol, res, res_hat, d) for x in xs), dtype=float)
    return {"x": xs, "V": V, "J": J}


class ViResidualReport(BaseModel):
    """Pointwise variational inequality terms on a price grid"""

    x: list
    exit_generator: list
    exit_obstacle: list
    entry_generator: list
    entry_obstacle: list
    scale: float
    max_violation_exit: float
    max_violation_entry: float
    excluded: int

    @property
    def max_violation(self) -> float:
        return max(self.max_violation_exit, self.max_violation_entry)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_violation <= tol


def _derivatives(x: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """First and second three-point differences on a possibly uneven grid"""
    first = np.gradient(v, x)
    second = np.full_like(v, np.nan)
    h_minus = x[1:-1] - x[:-2]
    h_plus = x[2:] - x[1:-1]
    second[1:-1] = 2.0 * ((v[2:] - v[1:-1]) / h_plus - (v[1:-1] - v[:-2]) / h_minus) / (h_plus + h_minus)
    return first, second


def _kink_mask(x: np.ndarray, kinks: Sequence[float]) -> np.ndarray:
    keep = np.ones(len(x), dtype=bool)
    keep[:KINK_EXCLUSION] = False
    keep[-KINK_EXCLUSION:] = False
    for k in kinks:
        i = int(np.searchsorted(x, k))
        keep[max(0, i - KINK_EXCLUSION):i + KINK_EXCLUSION] = False
    return keep


def _violation(generator: np.ndarray, obstacle: np.ndarray, keep: np.ndarray, scale: float) -> float:
    g, o = generator[keep] / scale, obstacle[keep] / scale
    if len(g) == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(g, o))))


def vi_residuals(
    xs: Sequence[float],
    sol: ThresholdSolution,
    p: ModelParams,
    d: DiscountSpec,
    q: QuadratureConfig = DEFAULT_QUADRATURE,
    b_star: Optional[float] = None,
) -> ViResidualReport:
    """min{(r - A) V, V - (x - c)} and min{(r_hat - A) J, J - h_hat} on a grid.

    A is the OU generator, applied through three-point differences. V and J
    are evaluated with a tightened quadrature since second differences
    amplify integration noise by 1/h^2.

    b_star overrides the exit threshold used to build V and J, which lets a
    caller measure how far a perturbed threshold is from solving the
    inequalities.
    """
    x = np.asarray(xs, dtype=float)
    if x.ndim != 1 or len(x) < 2 * KINK_EXCLUSION + 3 or not np.all(np.diff(x) > 0):
        raise ValueError("grid must be strictly increasing with enough points")
    if b_star is not None:
        sol = sol.model_copy(update={"b_star": b_star})
    grid = value_grid(x, sol, p, d, q.tightened())
    V, J = grid["V"], grid["J"]
    drift = p.mu * (p.theta - x)
    half_var = 0.5 * p.sigma ** 2

    dV, d2V = _derivatives(x, V)
    exit_generator = d.r * V - half_var * d2V - drift * dV
    exit_obstacle = V - (x - d.c)

    dJ, d2J = _derivatives(x, J)
    h_hat = V - x - d.c_hat
    entry_generator = d.r_hat * J - half_var * d2J - drift * dJ
    entry_obstacle = J - h_hat

    scale = max(1.0, float(np.max(np.abs(V))))
    keep_exit = _kink_mask(x, [sol.b_star])
    keep_entry = _kink_mask(x, [sol.d_star, sol.b_star])
    report = ViResidualReport(
        x=x.tolist(),
        exit_generator=exit_generator.tolist(),
        exit_obstacle=exit_obstacle.tolist(),
        entry_generator=entry_generator.tolist(),
        entry_obstacle=entry_obstacle.tolist(),
        scale=scale,
        max_violation_exit=_violation(exit_generator, exit_obstacle, keep_exit, scale),
        max_violation_entry=_violation(entry_generator, entry_obstacle, keep_entry, scale),
        excluded=int((~keep_entry).sum()),
    )
    logger.debug(f"vi residuals: exit {report.max_violation_exit:.3e}, entry {report.max_violation_entry:.3e}")
    return report


def default_grid(p: ModelParams, n: int = 2001, width: float = 6.0) -> np.ndarray:
    """n points over theta +/- width stationary standard deviations"""
    sd = p.stationary_sd
    return np.linspace(p.theta - width * sd, p.theta + width * sd, n)


__all__ = [
    "DiscountSpec",
    "ThresholdSolution",
    "ViResidualReport",
    "analytic_W",
    "brownian_thresholds",
    "default_grid",
    "discrete_concave_majorant",
    "entry_reward",
    "interval_reward",
    "l_star",
    "lemma_roots",
    "resolvents",
    "solve_entry_threshold",
    "solve_exit_threshold",
    "solve_no_stoploss",
    "transform_H",
    "transform_H_hat",
    "transformed_curve",
    "value_J",
    "value_J_d1",
    "value_V",
    "value_V_d1",
    "value_V_d2",
    "value_grid",
    "vi_residuals",
]
