"""
OU process: exact simulation, likelihood and calibration

The transition law over a step dt is Gaussian,
    X_{i} | X_{i-1} ~ N(theta + (X_{i-1} - theta) e^{-mu dt}, s2)
    s2 = sigma^2 (1 - e^{-2 mu dt}) / (2 mu),
so the conditional likelihood is that of a Gaussian AR(1) and its maximiser
is available from a linear regression of x_i on x_{i-1}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize_scalar

from config.settings import get_settings
from tools.errors import AlignmentError, CalibrationError, DegenerateLikelihoodError, InputError
from tools.io import read_table
from tools.special_fn import ModelParams

logger = logging.getLogger(__name__)

SPACING_RTOL = 1e-9
TRADING_DAYS = 252
# business days a holiday cluster may add to one step
HOLIDAY_SLACK = 2


@dataclass(frozen=True)
class PriceSeries:
    """Uniformly spaced observations of a spread or an asset price"""

    timestamps: np.ndarray
    values: np.ndarray
    dt: float
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        xs = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", xs)
        if ts.ndim != 1 or ts.shape != xs.shape:
            raise InputError("timestamps and values must be 1-d and of equal length")
        if len(xs) < 2:
            raise InputError("a price series needs at least 2 observations")
        if not self.dt > 0:
            raise InputError(f"time step must be positive, got {self.dt}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ts))):
            raise InputError("price series contains missing or non-finite values")
        steps = np.diff(ts)
        if not np.allclose(steps, self.dt, rtol=SPACING_RTOL, atol=SPACING_RTOL * self.dt):
            raise InputError("price series is not uniformly spaced")

    @property
    def n(self) -> int:
        """Number of transitions"""
        return len(self.values) - 1

    @classmethod
    def from_values(cls, values: Sequence[float], dt: float, labels: Optional[Sequence[str]] = None) -> "PriceSeries":
        values = np.asarray(values, dtype=float)
        return cls(
            timestamps=np.arange(len(values)) * dt,
            values=values,
            dt=dt,
            labels=tuple(labels) if labels is not None else None,
        )

    def shifted(self, k: float) -> "PriceSeries":
        return PriceSeries(self.timestamps, self.values + k, self.dt, self.labels)


@dataclass(frozen=True)
class PairSpec:
    """Two aligned price legs and the candidate short cash amounts"""

    series_1: PriceSeries
    series_2: PriceSeries
    A: float = 1.0
    B_grid: Tuple[float, ...] = field(default_factory=lambda: default_b_grid(1.0))

    def __post_init__(self):
        check_aligned(self.series_1, self.series_2)
        if not (np.all(self.series_1.values > 0) and np.all(self.series_2.values > 0)):
            raise InputError("pair legs must have positive prices")
        if not self.A > 0:
            raise InputError(f"cash in leg 1 must be positive, got {self.A}")
        grid = tuple(float(b) for b in self.B_grid)
        if not grid:
            raise InputError("B grid is empty")
        bad = [b for b in grid if not 0 < b <= self.A]
        if bad:
            raise InputError(f"B grid values must lie in (0, A]; offending values {bad[:5]}")
        object.__setattr__(self, "B_grid", grid)


class CalibrationResult(BaseModel):
    """Fitted OU parameters and the attained average log-likelihood"""

    model_config = ConfigDict(frozen=True)

    params: ModelParams
    avg_loglik: float
    beta_star: Optional[float] = None
    converged: bool = True
    n: int
    dt: float

    def to_report(self) -> dict:
        return {
            "theta": self.params.theta,
            "mu": self.params.mu,
            "sigma": self.params.sigma,
            "avg_loglik": self.avg_loglik,
            "beta_star": self.beta_star,
            "n": self.n,
            "dt": self.dt,
        }


def default_b_grid(A: float = 1.0) -> Tuple[float, ...]:
    """B/A = 0.001, 0.002, ..., 1"""
    return tuple(A * i / 1000.0 for i in range(1, 1001))


def check_aligned(s1: PriceSeries, s2: PriceSeries) -> None:
    if len(s1.values) != len(s2.values):
        raise AlignmentError(f"series lengths differ: {len(s1.values)} vs {len(s2.values)}")
    if not math.isclose(s1.dt, s2.dt, rel_tol=SPACING_RTOL):
        raise AlignmentError(f"series spacings differ: {s1.dt} vs {s2.dt}")
    if not np.allclose(s1.timestamps, s2.timestamps, rtol=0, atol=SPACING_RTOL * s1.dt):
        raise AlignmentError("series timestamps are not aligned")


def _transition(p: ModelParams, dt: float) -> Tuple[float, float]:
    """(e^{-mu dt}, conditional standard deviation)"""
    decay = math.exp(-p.mu * dt)
    var = p.sigma ** 2 * -math.expm1(-2.0 * p.mu * dt) / (2.0 * p.mu)
    return decay, math.sqrt(var)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def simulate_exact(p: ModelParams, x0: float, dt: float, n: int, seed: int) -> PriceSeries:
    """One path of n exact OU transitions starting at x0"""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    decay, sd = _transition(p, dt)
    z = _rng(seed).standard_normal(n)
    x = np.empty(n + 1)
    x[0] = x0
    for i in range(1, n + 1):
        x[i] = p.theta + (x[i - 1] - p.theta) * decay + sd * z[i - 1]
    return PriceSeries.from_values(x, dt)


def simulate_paths(p: ModelParams, x0: float, dt: float, n: int, n_paths: int, seed: int) -> np.ndarray:
    """Matrix (n_paths, n + 1) of exact OU paths.

    Path j draws its noise from the j-th child of SeedSequence(seed), so a
    path is the same whatever the number of paths or the evaluation order.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    decay, sd = _transition(p, dt)
    children = np.random.SeedSequence(seed).spawn(n_paths)
    z = np.stack([np.random.Generator(np.random.PCG64(c)).standard_normal(n) for c in children]) if n_paths else np.empty((0, n))
    paths = np.empty((n_paths, n + 1))
    paths[:, 0] = x0
    for i in range(1, n + 1):
        paths[:, i] = p.theta + (paths[:, i - 1] - p.theta) * decay + sd * z[:, i - 1]
    return paths


def avg_log_likelihood(p: ModelParams, s: PriceSeries) -> float:
    """Average conditional Gaussian log-likelihood of the transitions"""
    decay, sd = _transition(p, s.dt)
    if not (sd > 0 and math.isfinite(sd)) or sd < 1e-300:
        raise DegenerateLikelihoodError(
            "transition standard deviation underflowed",
            {"mu": p.mu, "sigma": p.sigma, "dt": s.dt, "sd": sd},
        )
    x = s.values
    resid = x[1:] - x[:-1] * decay - p.theta * (1.0 - decay)
    n = len(resid)
    value = -0.5 * math.log(2.0 * math.pi) - math.log(sd) - float(np.dot(resid, resid)) / (2.0 * n * sd * sd)
    if not math.isfinite(value):
        raise DegenerateLikelihoodError("log-likelihood is not finite", {"value": value})
    return value


def _profile(x: np.ndarray, decay: float) -> Tuple[float, float]:
    """theta and residual variance maximising the likelihood for a fixed e^{-mu dt}"""
    prev, nxt = x[:-1], x[1:]
    theta = float(np.mean(nxt - decay * prev)) / (1.0 - decay)
    resid = nxt - decay * prev - theta * (1.0 - decay)
    return theta, float(np.mean(resid * resid))


def _params_from(decay: float, theta: float, var: float, dt: float) -> ModelParams:
    mu = -math.log(decay) / dt
    sigma = math.sqrt(var * 2.0 * mu / -math.expm1(-2.0 * mu * dt))
    return ModelParams(theta=theta, mu=mu, sigma=sigma)


def closed_form_estimate(s: PriceSeries) -> ModelParams:
    """Conditional least squares: regress x_i on x_{i-1}"""
    prev, nxt = s.values[:-1], s.values[1:]
    dev = prev - prev.mean()
    denom = float(np.dot(dev, dev))
    if denom <= 0:
        raise CalibrationError("series is constant; no mean reversion to estimate", {"n": s.n})
    slope = float(np.dot(dev, nxt - nxt.mean())) / denom
    diagnostics = {"slope": slope, "n": s.n, "dt": s.dt}
    if slope >= 1.0:
        raise CalibrationError(f"regression slope {slope:.6f} >= 1: series is not mean reverting", diagnostics)
    if slope <= 0.0:
        raise CalibrationError(f"regression slope {slope:.6f} <= 0: no OU representation", diagnostics)
    theta, var = _profile(s.values, slope)
    if var <= 0.0:
        raise DegenerateLikelihoodError("zero residual variance", diagnostics)
    return _params_from(slope, theta, var, s.dt)


def fit_mle(s: PriceSeries, init: Optional[ModelParams] = None) -> CalibrationResult:
    """Maximise the average log-likelihood over (theta, mu, sigma).

    The closed-form regression estimate is the starting point; mu is then
    refined by maximising the profile likelihood in one dimension and the
    better of the two fits is returned.
    """
    if s.n < 9:
        raise InputError(f"calibration needs at least 10 observations, got {s.n + 1}")
    closed = closed_form_estimate(s)
    closed_ll = avg_log_likelihood(closed, s)

    x = s.values
    center = init.mu if init is not None else closed.mu

    def neg_profile(log_mu: float) -> float:
        decay = math.exp(-math.exp(log_mu) * s.dt)
        if not 0.0 < decay < 1.0:
            return math.inf
        theta, var = _profile(x, decay)
        if var <= 0.0:
            return math.inf
        try:
            return -avg_log_likelihood(_params_from(decay, theta, var, s.dt), s)
        except (DegenerateLikelihoodError, ValueError):
            return math.inf

    best, best_ll, converged = closed, closed_ll, True
    try:
        res = minimize_scalar(
            neg_profile,
            bounds=(math.log(center) - 3.0, math.log(center) + 3.0),
            method="bounded",
            options={"xatol": 1e-10},
        )
        converged = bool(res.success)
        if res.success and -res.fun > closed_ll:
            decay = math.exp(-math.exp(res.x) * s.dt)
            theta, var = _profile(x, decay)
            best = _params_from(decay, theta, var, s.dt)
            best_ll = avg_log_likelihood(best, s)
    except (ValueError, FloatingPointError) as e:
        logger.warning(f"profile refinement failed, keeping closed-form fit: {e}")
        converged = False

    logger.debug(f"fit_mle: theta={best.theta:.6g} mu={best.mu:.6g} sigma={best.sigma:.6g} ll={best_ll:.6f}")
    return CalibrationResult(params=best, avg_loglik=best_ll, converged=converged, n=s.n, dt=s.dt)


def build_spread(pair: PairSpec, B: float) -> PriceSeries:
    """Portfolio long A dollars of leg 1 and short B dollars of leg 2"""
    check_aligned(pair.series_1, pair.series_2)
    s1, s2 = pair.series_1.values, pair.series_2.values
    alpha = pair.A / s1[0]
    beta = B / s2[0]
    return PriceSeries(pair.series_1.timestamps, alpha * s1 - beta * s2, pair.series_1.dt)


def scan_beta_grid(pair: PairSpec) -> List[Tuple[float, Optional[CalibrationResult]]]:
    """Fit every B on the grid (ascending); failed fits are kept as None"""
    curve = []
    for B in sorted(set(pair.B_grid)):
        try:
            curve.append((B, fit_mle(build_spread(pair, B))))
        except CalibrationError as e:
            logger.warning(f"calibration failed at B={B:.4g}: {e}")
            curve.append((B, None))
    return curve


def pick_beta_star(curve: Sequence[Tuple[float, Optional[CalibrationResult]]]) -> CalibrationResult:
    """Best fit on an already scanned likelihood curve"""
    fitted = [(B, fit) for B, fit in curve if fit is not None]
    if not fitted:
        raise CalibrationError(
            "calibration failed for every B on the grid",
            {"grid_size": len(curve), "grid_min": curve[0][0] if curve else None, "grid_max": curve[-1][0] if curve else None},
        )
    # strict comparison on an ascending grid keeps the smallest B on ties
    best_B, best_fit = fitted[0]
    for B, fit in fitted[1:]:
        if fit.avg_loglik > best_fit.avg_loglik:
            best_B, best_fit = B, fit
    logger.info(f"B* = {best_B:.4g} with average log-likelihood {best_fit.avg_loglik:.4f}")
    return best_fit.model_copy(update={"beta_star": best_B})


def select_beta_star(pair: PairSpec) -> CalibrationResult:
    """Cash amount B whose spread attains the highest fitted likelihood"""
    return pick_beta_star(scan_beta_grid(pair))


def stationary_moments(p: ModelParams, x0: float, t: float) -> Tuple[float, float]:
    """Mean and variance of X_t given X_0 = x0"""
    mean = p.theta + (x0 - p.theta) * math.exp(-p.mu * t)
    var = p.sigma ** 2 * -math.expm1(-2.0 * p.mu * t) / (2.0 * p.mu)
    return mean, var


def _times(n_rows: int, dt: float) -> np.ndarray:
    # rows are successive observations dt apart once _check_calendar has passed
    return np.arange(n_rows) * dt


def _check_calendar(path, dates, dt: float) -> None:
    """Reject date steps that skip more trading days than dt and holidays allow"""
    days = dates.to_numpy().astype("datetime64[D]")
    expected = max(1, round(dt * TRADING_DAYS))
    gaps = np.busday_count(days[:-1], days[1:])
    wide = np.flatnonzero(gaps > expected + HOLIDAY_SLACK)
    if len(wide):
        i = int(wide[0])
        raise InputError(
            f"{path}: {int(gaps[i])} trading days between {days[i]} and {days[i + 1]}, "
            f"expected about {expected} for dt={dt:.6g}; fill or drop the gap",
            line=i + 3,
        )


def load_price_csv(path, dt: Optional[float] = None) -> PriceSeries:
    """Read a `date,price` file into a PriceSeries"""
    dt = dt or get_settings().default_dt
    frame = read_table(path, ["date", "price"])
    if len(frame) < 2:
        raise InputError(f"{path}: need at least 2 rows, got {len(frame)}")
    _check_calendar(path, frame["date"], dt)
    labels = tuple(d.date().isoformat() for d in frame["date"])
    return PriceSeries(_times(len(frame), dt), frame["price"].to_numpy(), dt, labels)


def load_pair_csv(
    path,
    A: float = 1.0,
    B_grid: Optional[Sequence[float]] = None,
    dt: Optional[float] = None,
) -> PairSpec:
    """Read a `date,price1,price2` file into a PairSpec"""
    dt = dt or get_settings().default_dt
    frame = read_table(path, ["date", "price1", "price2"])
    if len(frame) < 2:
        raise InputError(f"{path}: need at least 2 rows, got {len(frame)}")
    _check_calendar(path, frame["date"], dt)
    for column in ("price1", "price2"):
        bad = np.flatnonzero(frame[column].to_numpy() <= 0)
        if len(bad):
            raise InputError(f"{path}: column {column!r} must be positive", line=int(bad[0]) + 2)
    labels = tuple(d.date().isoformat() for d in frame["date"])
    t = _times(len(frame), dt)
    s1 = PriceSeries(t, frame["price1"].to_numpy(), dt, labels)
    s2 = PriceSeries(t, frame["price2"].to_numpy(), dt, labels)
    grid = tuple(B_grid) if B_grid is not None else default_b_grid(A)
    return PairSpec(s1, s2, A=A, B_grid=grid)
