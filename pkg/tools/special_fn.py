"""
Fundamental solutions of the OU resolvent equation

F and G are the increasing and decreasing positive solutions of
    (sigma^2 / 2) u'' + mu (theta - x) u' = r u,
given by the integrals
    F(x) = int_0^inf u^(r/mu - 1) exp( k (x - theta) u - u^2 / 2) du
    G(x) = int_0^inf u^(r/mu - 1) exp( k (theta - x) u - u^2 / 2) du
with k = sqrt(2 mu / sigma^2). Derivatives are taken under the integral
sign. Every evaluation goes through a log-space kernel so far-out queries
do not overflow.
"""
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import integrate

from tools.errors import OutOfRangeError, QuadratureError
from tools.roots import expand_bracket, find_root

logger = logging.getLogger(__name__)

FINE_REL_TOL = 1e-12
FINE_ABS_TOL = 1e-14
FINE_LIMIT = 400


class ModelParams(BaseModel):
    """OU dynamics dX = mu (theta - X) dt + sigma dB"""

    model_config = ConfigDict(frozen=True)

    theta: float
    mu: float = Field(gt=0)
    sigma: float = Field(gt=0)

    @field_validator("theta", "mu", "sigma")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @property
    def scale(self) -> float:
        """k = sqrt(2 mu) / sigma, the coefficient of (x - theta) in the integrals"""
        return math.sqrt(2.0 * self.mu) / self.sigma

    @property
    def stationary_sd(self) -> float:
        return self.sigma / math.sqrt(2.0 * self.mu)

    def shifted(self, k: float) -> "ModelParams":
        return self.model_copy(update={"theta": self.theta + k})


class QuadratureConfig(BaseModel):
    """Tolerances for the F/G integrals"""

    model_config = ConfigDict(frozen=True)

    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=1e-10, gt=0)
    limit: int = Field(default=200, ge=10)

    def tightened(self) -> "QuadratureConfig":
        """Tolerances fine enough for second derivatives and finite differences"""
        return QuadratureConfig(
            rel_tol=min(self.rel_tol, FINE_REL_TOL), abs_tol=min(self.abs_tol, FINE_ABS_TOL), limit=max(self.limit, FINE_LIMIT)
        )

    def upper_cutoff(self, a: float, power: float) -> float:
        """Truncation point of the u-integral.

        After shifting by the peak value the integrand is bounded by
        u^power * exp(-(u - max(a, 0))^2 / 2), so the tail past the cutoff
        stays below abs_tol.
        """
        base = max(a, 0.0)
        log_tol = math.log(1.0 / self.abs_tol)
        t = math.sqrt(2.0 * log_tol)
        if power > 0:
            t = math.sqrt(2.0 * (log_tol + power * math.log(base + t + 1.0)))
        return base + t + 1.0


DEFAULT_QUADRATURE = QuadratureConfig()


def _quad(func, lo: float, hi: float, q: QuadratureConfig, points=None) -> float:
    result = integrate.quad(
        func,
        lo,
        hi,
        epsabs=q.abs_tol,
        epsrel=q.rel_tol,
        limit=q.limit,
        points=points,
        full_output=1,
    )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        # quadpack flagged the panel; accept only if the estimate is still close
        bound = 10.0 * max(q.abs_tol, q.rel_tol * abs(value))
        if abserr > bound or not math.isfinite(value):
            raise QuadratureError(f"quadrature on [{lo:.4g}, {hi:.4g}] did not converge", abserr)
        logger.debug(f"quadpack warning accepted: abserr={abserr:.3e} value={value:.6g}")
    return value


@lru_cache(maxsize=1 << 16)
def _log_moment(a: float, s: float, order: int, rel_tol: float, abs_tol: float, limit: int) -> float:
    """log of int_0^inf u^(s - 1 + order) exp(a u - u^2 / 2) du"""
    q = QuadratureConfig(rel_tol=rel_tol, abs_tol=abs_tol, limit=limit)
    power = s - 1.0 + order
    shift = 0.5 * a * a if a > 0 else 0.0
    u_max = q.upper_cutoff(a, power)

    def shifted(u: float) -> float:
        return u ** power * math.exp(a * u - 0.5 * u * u - shift)

    if power >= 0.0:
        points = [a] if 0.0 < a < u_max else None
        value = _quad(shifted, 0.0, u_max, q, points)
        return shift + math.log(value)

    # u^(s-1) is singular at 0 (only possible for order 0): integrate
    # u^(s-1) * (e^phi - 1) on [0, head] and add the exact head^s / s.
    head = min(1.0, u_max)

    def regular(u: float) -> float:
        return u ** power * math.expm1(a * u - 0.5 * u * u)

    head_value = (_quad(regular, 0.0, head, q) + head ** s / s) * math.exp(-shift)
    tail_value = 0.0
    if u_max > head:
        points = [a] if head < a < u_max else None
        tail_value = _quad(shifted, head, u_max, q, points)
    return shift + math.log(head_value + tail_value)


def _check_rate(r: float) -> None:
    if not r > 0:
        raise ValueError(f"discount rate must be positive, got {r}")


def _moment(p: ModelParams, r: float, q: QuadratureConfig, a: float, order: int) -> float:
    _check_rate(r)
    return _log_moment(float(a), r / p.mu, order, q.rel_tol, q.abs_tol, q.limit)


def log_F(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return _moment(p, r, q, p.scale * (x - p.theta), 0)


def log_G(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return _moment(p, r, q, p.scale * (p.theta - x), 0)


def eval_F(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return math.exp(log_F(x, r, p, q))


def eval_G(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return math.exp(log_G(x, r, p, q))


def eval_F_d1(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return p.scale * math.exp(_moment(p, r, q, p.scale * (x - p.theta), 1))


def eval_F_d2(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return p.scale ** 2 * math.exp(_moment(p, r, q, p.scale * (x - p.theta), 2))


def eval_G_d1(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return -p.scale * math.exp(_moment(p, r, q, p.scale * (p.theta - x), 1))


def eval_G_d2(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return p.scale ** 2 * math.exp(_moment(p, r, q, p.scale * (p.theta - x), 2))


def log_psi(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return log_F(x, r, p, q) - log_G(x, r, p, q)


def psi(x: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    return math.exp(log_psi(x, r, p, q))


def psi_inverse(y: float, r: float, p: ModelParams, q: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Price x with psi(x) = y, by bracketed root finding on log psi"""
    if not (y > 0 and math.isfinite(y)):
        raise OutOfRangeError(f"psi_inverse needs a positive finite argument, got {y}")
    target = math.log(y)
    if target == 0.0:
        return p.theta

    def residual(x: float) -> float:
        return log_psi(x, r, p, q) - target

    sd = p.stationary_sd
    if target > 0:
        lo, hi = p.theta, p.theta + sd
        direction = "up"
    else:
        lo, hi = p.theta - sd, p.theta
        direction = "down"
    try:
        lo, hi = expand_bracket(residual, lo, hi, direction=direction, limit=60.0 * sd)
    except Exception as e:
        raise OutOfRangeError(f"psi_inverse({y:.6g}) is outside the representable range: {e}") from e
    return find_root(residual, lo, hi, name="psi_inverse")


@dataclass(frozen=True)
class Resolvent:
    """F, G and psi for one (params, r) pair"""

    params: ModelParams
    r: float
    quad: QuadratureConfig = DEFAULT_QUADRATURE

    def __post_init__(self):
        _check_rate(self.r)

    def F(self, x: float) -> float:
        return eval_F(x, self.r, self.params, self.quad)

    def G(self, x: float) -> float:
        return eval_G(x, self.r, self.params, self.quad)

    def dF(self, x: float) -> float:
        return eval_F_d1(x, self.r, self.params, self.quad)

    def dG(self, x: float) -> float:
        return eval_G_d1(x, self.r, self.params, self.quad)

    def d2F(self, x: float) -> float:
        return eval_F_d2(x, self.r, self.params, self.quad)

    def d2G(self, x: float) -> float:
        return eval_G_d2(x, self.r, self.params, self.quad)

    def log_F(self, x: float) -> float:
        return log_F(x, self.r, self.params, self.quad)

    def log_G(self, x: float) -> float:
        return log_G(x, self.r, self.params, self.quad)

    def F_ratio(self, x: float, ref: float) -> float:
        """F(x) / F(ref) without forming either"""
        return math.exp(self.log_F(x) - self.log_F(ref))

    def G_ratio(self, x: float, ref: float) -> float:
        return math.exp(self.log_G(x) - self.log_G(ref))

    def dlog_F(self, x: float) -> float:
        """F'(x) / F(x)"""
        k = self.params.scale
        a = k * (x - self.params.theta)
        return k * math.exp(_moment(self.params, self.r, self.quad, a, 1) - _moment(self.params, self.r, self.quad, a, 0))

    def dlog_G(self, x: float) -> float:
        """G'(x) / G(x), negative"""
        k = self.params.scale
        a = k * (self.params.theta - x)
        return -k * math.exp(_moment(self.params, self.r, self.quad, a, 1) - _moment(self.params, self.r, self.quad, a, 0))

    def psi(self, x: float) -> float:
        return psi(x, self.r, self.params, self.quad)

    def log_psi(self, x: float) -> float:
        return log_psi(x, self.r, self.params, self.quad)

    def psi_inverse(self, y: float) -> float:
        return psi_inverse(y, self.r, self.params, self.quad)

    def tightened(self) -> "Resolvent":
        return replace(self, quad=self.quad.tightened())

    def ode_residual(self, x: float) -> float:
        """Largest of |(sigma^2 / 2) u'' + mu (theta - x) u' - r u| / (r u) over u = F, G"""
        p = self.params
        worst = 0.0
        for u, du, d2u in ((self.F, self.dF, self.d2F), (self.G, self.dG, self.d2G)):
            value = u(x)
            residual = 0.5 * p.sigma ** 2 * d2u(x) + p.mu * (p.theta - x) * du(x) - self.r * value
            worst = max(worst, abs(residual) / (self.r * value))
        return worst

    def on_grid(self, name: str, xs: Iterable[float]) -> np.ndarray:
        """Evaluate one of the methods above on every point of a grid"""
        method = getattr(self, name)
        return np.fromiter((method(float(x)) for x in xs), dtype=float)


def make_resolvent(p: ModelParams, r: float, q: Optional[QuadratureConfig] = None) -> Resolvent:
    return Resolvent(params=p, r=r, quad=q or DEFAULT_QUADRATURE)
