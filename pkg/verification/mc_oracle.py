"""
Monte Carlo oracle for threshold policies

Paths follow the exact OU transition on a fixed step. Paths are simulated
in blocks; block k draws from the k-th child of SeedSequence(seed), and
every step draws the same amount of randomness whatever the policy, so two
runs with the same seed share their noise (common random numbers).
Candidate thresholds of a grid search are stacked into one run on shared
paths, and blocks can be spread over a process pool.

Barrier crossings are detected on the grid and, when bridge_correction is
on, also between grid points: given both endpoints on the same side of a
level, the path is taken to have touched it with the Brownian-bridge
probability exp(-2 (x - level)(x' - level) / (sigma^2 dt)).
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from solvers.double_stopping import DiscountSpec
from tools.errors import InputError
from tools.special_fn import ModelParams

logger = logging.getLogger(__name__)

WAITING, HOLDING, DONE = 0, 1, 2
# None when the barrier is absent, an array when copies are stacked
Level = Union[float, np.ndarray, None]


class PolicySpec(BaseModel):
    """Enter on [entry_lower, entry_upper], then exit at exit_upper or stop_loss"""

    model_config = ConfigDict(frozen=True)

    entry_lower: Optional[float] = None
    entry_upper: Optional[float] = None
    exit_upper: float
    stop_loss: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self) -> "PolicySpec":
        if self.stop_loss is not None and self.stop_loss > self.exit_upper:
            raise ValueError(f"stop_loss {self.stop_loss} above exit_upper {self.exit_upper}")
        if self.entry_lower is not None and self.entry_upper is None:
            raise ValueError("entry_lower needs entry_upper")
        if self.entry_upper is not None:
            if not self.entry_upper < self.exit_upper:
                raise ValueError(f"entry_upper {self.entry_upper} must lie below exit_upper {self.exit_upper}")
            if self.entry_lower is not None and not self.entry_lower <= self.entry_upper:
                raise ValueError("entry interval is empty")
            if self.stop_loss is not None and self.entry_upper <= self.stop_loss:
                raise ValueError("entry level must lie above the stop-loss")
        return self

    @property
    def has_entry(self) -> bool:
        return self.entry_upper is not None


class McConfig(BaseModel):
    """Path count, time step and horizon of the oracle"""

    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(default=100_000, ge=0)
    dt: Optional[float] = Field(default=None, gt=0)
    horizon_eps: float = Field(default=1e-6, gt=0, lt=1)
    seed: int = Field(default=20150601, ge=0)
    bridge_correction: bool = True
    max_steps: Optional[int] = Field(default=None, ge=1)
    block_size: int = Field(default=4096, ge=1)
    workers: int = Field(default=1, ge=1)

    def step(self, p: ModelParams) -> float:
        """dt, defaulting to 1/(20 mu); coarser steps are rejected"""
        limit = 1.0 / (20.0 * p.mu)
        if self.dt is None:
            return limit
        if self.dt > limit * (1.0 + 1e-9):
            raise InputError(f"time step {self.dt:.4g} exceeds 1/(20 mu) = {limit:.4g}")
        return self.dt

    def horizon(self, p: ModelParams, rate: float) -> Tuple[float, int]:
        """(T, steps) with exp(-rate T) below horizon_eps, capped by max_steps"""
        dt = self.step(p)
        steps = int(math.ceil(math.log(1.0 / self.horizon_eps) / rate / dt))
        if self.max_steps is not None and steps > self.max_steps:
            steps = self.max_steps
        return steps * dt, steps


class McReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float
    std_error: float
    n_paths: int
    dt: float
    bias_bound: float
    horizon: float
    n_truncated: int = 0
    seed: int
    bridge_correction: bool

    def within(self, target: float, n_se: float = 3.0) -> bool:
        """Agreement with target up to n_se standard errors plus the truncation bias"""
        return abs(self.estimate - target) <= n_se * self.std_error + self.bias_bound + 1e-12


@dataclass(frozen=True)
class _Plan:
    """Barrier levels and payoff rule of one simulation"""

    entry_lower: Level
    entry_upper: Level
    upper: Level
    lower: Level
    r_entry: float
    r_exit: float
    c: float = 0.0
    c_hat: float = 0.0
    unit: bool = False

    @property
    def has_entry(self) -> bool:
        return self.entry_upper is not None

    def in_entry_region(self, x: float) -> bool:
        lower = -math.inf if self.entry_lower is None else self.entry_lower
        return lower <= x <= self.entry_upper

    def in_exit_region(self, x: float) -> bool:
        return (self.upper is not None and x >= self.upper) or (self.lower is not None and x <= self.lower)

    def pay(self, level):
        return 1.0 if self.unit else level - self.c


def _bridge_hit(x: np.ndarray, x_new: np.ndarray, level: np.ndarray, u: np.ndarray, var: float, mask: np.ndarray) -> np.ndarray:
    hit = np.zeros_like(mask)
    idx = np.flatnonzero(mask)
    if len(idx):
        gap = (x[idx] - level[idx]) * (x_new[idx] - level[idx])
        hit[idx] = u[idx] < np.exp(-2.0 * gap / var)
    return hit


def _rows(level, m: int, copies: int) -> Optional[np.ndarray]:
    """Per-row barrier: copy k owns rows k*m .. (k+1)*m - 1"""
    if level is None:
        return None
    return np.repeat(np.broadcast_to(np.asarray(level, dtype=float), (copies,)), m)


def _run_block(
    x0: float,
    plan: _Plan,
    p: ModelParams,
    dt: float,
    n_steps: int,
    rng: np.random.Generator,
    m: int,
    bridge: bool,
    copies: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Discounted payoff and truncation-bias bound for m paths.

    With copies > 1 the plan's levels are arrays with one entry per copy and
    every copy runs on the same m noise paths.
    """
    decay = math.exp(-p.mu * dt)
    sd = p.sigma * math.sqrt(-math.expm1(-2.0 * p.mu * dt) / (2.0 * p.mu))
    var = p.sigma ** 2 * dt
    rows = m * copies
    entry_lower = _rows(plan.entry_lower, m, copies)
    entry_upper = _rows(plan.entry_upper, m, copies)
    upper = _rows(plan.upper, m, copies)
    lower = _rows(plan.lower, m, copies)

    x = np.full(rows, float(x0))
    value = np.zeros(rows)
    entry_disc = np.ones(rows)
    entry_time = np.zeros(rows)
    phase = np.full(rows, HOLDING, dtype=np.int8)

    if entry_upper is not None:
        inside = x <= entry_upper
        if entry_lower is not None:
            inside &= x >= entry_lower
        value[inside] -= x0 + plan.c_hat
        phase[~inside] = WAITING
    at_exit = np.zeros(rows, dtype=bool)
    if upper is not None:
        at_exit |= x >= upper
    if lower is not None:
        at_exit |= x <= lower
    at_exit &= phase == HOLDING
    if at_exit.any():
        value[at_exit] += plan.pay(x[at_exit])
        phase[at_exit] = DONE

    # noise path of each row; only rows still open are advanced
    lane = np.tile(np.arange(m), copies)
    t = 0.0
    for k in range(n_steps):
        live = np.flatnonzero(phase != DONE)
        if not len(live):
            break
        z_all = rng.standard_normal(m)
        u_all = rng.random((2, m))
        z = z_all[lane[live]]
        u = u_all[:, lane[live]]
        x_old = x[live]
        x_new = p.theta + (x_old - p.theta) * decay + sd * z
        state = phase[live]
        t = (k + 1) * dt

        waiting = state == WAITING
        entered = np.zeros(len(live), dtype=bool)
        if waiting.any():
            upper_entry = entry_upper[live]
            level = np.zeros(len(live))
            above = waiting & (x_old > upper_entry)
            down = above & (x_new <= upper_entry)
            if bridge:
                down |= _bridge_hit(x_old, x_new, upper_entry, u[1], var, above & ~down)
            level[down] = upper_entry[down]
            entered |= down
            if entry_lower is not None:
                lower_entry = entry_lower[live]
                below = waiting & (x_old < lower_entry)
                up = below & (x_new >= lower_entry)
                if bridge:
                    up |= _bridge_hit(x_old, x_new, lower_entry, u[0], var, below & ~up)
                level[up] = lower_entry[up]
                entered |= up
            if entered.any():
                disc = math.exp(-plan.r_entry * t)
                rows_in = live[entered]
                entry_disc[rows_in] = disc
                entry_time[rows_in] = t
                value[rows_in] -= disc * (level[entered] + plan.c_hat)
                state[entered] = HOLDING

        holding = state == HOLDING
        if holding.any():
            settled = holding & ~entered
            stop = lower[live] if lower is not None else None
            target = upper[live] if upper is not None else None
            hit_low = np.zeros(len(live), dtype=bool)
            if stop is not None:
                hit_low = holding & (x_new <= stop)
                if bridge:
                    hit_low |= _bridge_hit(x_old, x_new, stop, u[1], var, settled & ~hit_low)
            hit_up = np.zeros(len(live), dtype=bool)
            if target is not None:
                hit_up = holding & ~hit_low & (x_new >= target)
                if bridge:
                    hit_up |= _bridge_hit(x_old, x_new, target, u[0], var, settled & ~hit_low & ~hit_up)
            for hit, level in ((hit_low, stop), (hit_up, target)):
                if hit.any():
                    rows_out = live[hit]
                    disc = entry_disc[rows_out] * np.exp(-plan.r_exit * (t - entry_time[rows_out]))
                    value[rows_out] += disc * plan.pay(level[hit])
                    state[hit] = DONE
        phase[live] = state
        x[live] = x_new

    bias = np.zeros(rows)
    open_hold = phase == HOLDING
    if open_hold.any():
        disc = entry_disc[open_hold] * np.exp(-plan.r_exit * (t - entry_time[open_hold]))
        if not plan.unit:
            # liquidate what is still held at the horizon
            value[open_hold] += disc * (x[open_hold] - plan.c)
        bias[open_hold] = disc * (1.0 if plan.unit else np.abs(x[open_hold]) + abs(plan.c) + abs(plan.c_hat))
    open_wait = phase == WAITING
    if open_wait.any():
        bias[open_wait] = math.exp(-plan.r_entry * t) * (np.abs(x[open_wait]) + abs(plan.c) + abs(plan.c_hat))
    return value, bias


def _block(job: tuple) -> Tuple[np.ndarray, np.ndarray]:
    x0, plan, p, dt, n_steps, seed_seq, m, bridge, copies = job
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    return _run_block(x0, plan, p, dt, n_steps, rng, m, bridge, copies)


def _simulate_rows(
    x0: float, plan: _Plan, p: ModelParams, cfg: McConfig, copies: int = 1
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """(values, bias bounds) shaped (copies, n_paths), then dt and the horizon"""
    dt = cfg.step(p)
    horizon, n_steps = cfg.horizon(p, min(plan.r_entry, plan.r_exit))
    n = cfg.n_paths
    if n == 0:
        return np.empty((copies, 0)), np.empty((copies, 0)), dt, horizon
    n_blocks = int(math.ceil(n / cfg.block_size))
    children = np.random.SeedSequence(cfg.seed).spawn(n_blocks)
    jobs = [
        (x0, plan, p, dt, n_steps, child, min(cfg.block_size, n - i * cfg.block_size), cfg.bridge_correction, copies)
        for i, child in enumerate(children)
    ]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            blocks = list(pool.map(_block, jobs))
    else:
        blocks = [_block(job) for job in jobs]
    values = np.concatenate([v.reshape(copies, -1) for v, _ in blocks], axis=1)
    biases = np.concatenate([b.reshape(copies, -1) for _, b in blocks], axis=1)
    return values, biases, dt, horizon


def _report(v: np.ndarray, b: np.ndarray, dt: float, horizon: float, cfg: McConfig) -> McReport:
    n = len(v)
    if n == 0:
        return McReport(
            estimate=math.nan, std_error=math.nan, n_paths=0, dt=dt, bias_bound=0.0,
            horizon=horizon, seed=cfg.seed, bridge_correction=cfg.bridge_correction,
        )
    mean = math.fsum(v) / n
    se = math.sqrt(math.fsum((v - mean) ** 2) / (n - 1) / n) if n > 1 else 0.0
    return McReport(
        estimate=mean,
        std_error=se,
        n_paths=n,
        dt=dt,
        bias_bound=math.fsum(b) / n,
        horizon=horizon,
        n_truncated=int(np.count_nonzero(b)),
        seed=cfg.seed,
        bridge_correction=cfg.bridge_correction,
    )


def _simulate(x0: float, plan: _Plan, p: ModelParams, cfg: McConfig) -> McReport:
    values, biases, dt, horizon = _simulate_rows(x0, plan, p, cfg)
    report = _report(values[0], biases[0], dt, horizon, cfg)
    logger.debug(f"mc: x0={x0:.6g} estimate={report.estimate:.6g} se={report.std_error:.2e} truncated={report.n_truncated}")
    return report


def estimate_hitting_laplace(x0: float, kappa: float, r: float, p: ModelParams, cfg: McConfig) -> McReport:
    """E_x0[exp(-r tau_kappa)] for the first passage to kappa"""
    if not r > 0:
        raise ValueError(f"discount rate must be positive, got {r}")
    if x0 <= kappa:
        plan = _Plan(None, None, upper=kappa, lower=None, r_entry=r, r_exit=r, unit=True)
    else:
        plan = _Plan(None, None, upper=None, lower=kappa, r_entry=r, r_exit=r, unit=True)
    return _simulate(x0, plan, p, cfg)


def _plan(policy: PolicySpec, d: DiscountSpec) -> _Plan:
    return _Plan(
        entry_lower=policy.entry_lower,
        entry_upper=policy.entry_upper,
        upper=policy.exit_upper,
        lower=policy.stop_loss,
        r_entry=d.r_hat,
        r_exit=d.r,
        c=d.c,
        c_hat=d.c_hat,
    )


def estimate_policy_value(x0: float, policy: PolicySpec, d: DiscountSpec, p: ModelParams, cfg: McConfig) -> McReport:
    """Discounted value of following policy from x0"""
    return _simulate(x0, _plan(policy, d), p, cfg)


def _stack(plans: Sequence[_Plan]) -> _Plan:
    """One plan whose barrier levels are arrays over the given plans"""

    def column(name: str) -> Optional[np.ndarray]:
        values = [getattr(plan, name) for plan in plans]
        return None if values[0] is None else np.array(values, dtype=float)

    return replace(
        plans[0],
        entry_lower=column("entry_lower"),
        entry_upper=column("entry_upper"),
        upper=column("upper"),
        lower=column("lower"),
    )


def estimate_policy_values(
    x0: float, policies: Sequence[PolicySpec], d: DiscountSpec, p: ModelParams, cfg: McConfig
) -> List[McReport]:
    """Values of several policies of the same shape, simulated on one set of paths.

    Each report equals what estimate_policy_value gives for that policy
    with the same config; the paths are simply drawn once.
    """
    if not policies:
        return []
    shapes = {(pol.entry_lower is None, pol.entry_upper is None, pol.stop_loss is None) for pol in policies}
    if len(shapes) > 1:
        raise ValueError("policies must share which barriers they set")
    plan = _stack([_plan(pol, d) for pol in policies])
    values, biases, dt, horizon = _simulate_rows(x0, plan, p, cfg, copies=len(policies))
    return [_report(values[k], biases[k], dt, horizon, cfg) for k in range(len(policies))]


class GridCheck(BaseModel):
    """Policy values across candidate thresholds on common random numbers"""

    mode: str
    levels: List[float]
    estimates: List[float]
    std_errors: List[float]
    best: float
    analytic: Optional[float] = None
    analytic_estimate: Optional[float] = None
    step: float
    passed: Optional[bool] = None


MODES = ("exit", "entry", "exit_stoploss")


def _candidate_policy(level: float, mode: str, exit_upper, stop_loss, entry_lower) -> PolicySpec:
    if mode == "exit":
        return PolicySpec(exit_upper=level)
    if mode == "exit_stoploss":
        return PolicySpec(exit_upper=level, stop_loss=stop_loss)
    return PolicySpec(entry_lower=entry_lower, entry_upper=level, exit_upper=exit_upper, stop_loss=stop_loss)


def grid_argmax_check(
    x0: float,
    candidate_grid: Sequence[float],
    d: DiscountSpec,
    p: ModelParams,
    cfg: McConfig,
    mode: str = "exit",
    exit_upper: Optional[float] = None,
    stop_loss: Optional[float] = None,
    entry_lower: Optional[float] = None,
    analytic: Optional[float] = None,
) -> GridCheck:
    """Brute-force the best threshold on a grid.

    exit varies the take-profit level, exit_stoploss does the same under
    stop_loss, entry varies the entry level with the exit fixed at
    exit_upper. With an analytic threshold the check passes when it lies
    within one grid step of the argmax, or when its own estimate is within
    two standard errors of the grid maximum.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "exit_stoploss" and stop_loss is None:
        raise ValueError("exit_stoploss mode needs stop_loss")
    if mode == "entry" and exit_upper is None:
        raise ValueError("entry mode needs exit_upper")
    levels = sorted(float(g) for g in candidate_grid)
    if not levels:
        raise ValueError("empty candidate grid")

    policies = [_candidate_policy(g, mode, exit_upper, stop_loss, entry_lower) for g in levels]
    if analytic is not None:
        policies.append(_candidate_policy(analytic, mode, exit_upper, stop_loss, entry_lower))
    reports = estimate_policy_values(x0, policies, d, p, cfg)
    at_analytic = reports.pop() if analytic is not None else None
    estimates = [rep.estimate for rep in reports]
    i = int(np.argmax(estimates))
    step = float(np.min(np.diff(levels))) if len(levels) > 1 else 0.0
    check = GridCheck(
        mode=mode,
        levels=levels,
        estimates=estimates,
        std_errors=[rep.std_error for rep in reports],
        best=levels[i],
        step=step,
    )
    if at_analytic is None:
        return check
    close = abs(analytic - levels[i]) <= step + 1e-12
    competitive = estimates[i] - at_analytic.estimate <= 2.0 * reports[i].std_error
    logger.info(
        f"grid check ({mode}): argmax {levels[i]:.4f}, analytic {analytic:.4f}, "
        f"gap {estimates[i] - at_analytic.estimate:.2e} vs se {reports[i].std_error:.2e}"
    )
    return check.model_copy(
        update={"analytic": analytic, "analytic_estimate": at_analytic.estimate, "passed": bool(close or competitive)}
    )


def sample_policy_paths(
    x0: float,
    policy: PolicySpec,
    p: ModelParams,
    cfg: McConfig,
    n_paths: int = 5,
    max_steps: int = 5000,
) -> List[Dict[str, object]]:
    """Rows (path, t, x, event) of a few paths with their exercise times marked.

    Events are read off the grid: entry, exit, stop_loss, or horizon when a
    path is still open after max_steps. Recording stops at the exit.
    """
    dt = cfg.step(p)
    decay = math.exp(-p.mu * dt)
    sd = p.sigma * math.sqrt(-math.expm1(-2.0 * p.mu * dt) / (2.0 * p.mu))
    plan = _Plan(policy.entry_lower, policy.entry_upper, policy.exit_upper, policy.stop_loss, 1.0, 1.0)
    rows = []
    for j, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(n_paths)):
        rng = np.random.Generator(np.random.PCG64(child))
        x = float(x0)
        holding = not plan.has_entry
        for k in range(max_steps + 1):
            event = ""
            if not holding and plan.in_entry_region(x):
                holding = True
                event = "entry"
            if holding and plan.in_exit_region(x):
                event = "stop_loss" if plan.lower is not None and x <= plan.lower else "exit"
            if k == max_steps and event not in ("exit", "stop_loss"):
                event = "horizon"
            rows.append({"path": j, "t": k * dt, "x": x, "event": event})
            if event in ("exit", "stop_loss", "horizon"):
                break
            x = p.theta + (x - p.theta) * decay + sd * float(rng.standard_normal())
    logger.info(f"sampled {n_paths} paths, {len(rows)} rows")
    return rows
