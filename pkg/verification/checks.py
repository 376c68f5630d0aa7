"""
Cross-module verification suite

Each check measures one residual against a tolerance and is reported as
pass, fail or skipped. A check that raises is a failure carrying the error
text.
"""
import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.special import gamma

from config.run_config import RunConfig
from solvers.double_stopping import (
    ThresholdSolution,
    analytic_W,
    brownian_thresholds,
    default_grid,
    discrete_concave_majorant,
    entry_reward,
    l_star,
    resolvents,
    solve_exit_threshold,
    solve_no_stoploss,
    transformed_curve,
    value_grid,
    value_J,
    value_V,
    value_V_d1,
    vi_residuals,
)
from solvers.stoploss import (
    StopLossSolution,
    entry_reward_L,
    solve_exit_stoploss,
    solve_stoploss,
    value_grid_L,
    value_JL,
    value_VL,
    value_VL_d1,
)
from tools.errors import OUTimingError
from tools.special_fn import ModelParams, make_resolvent
from verification.mc_oracle import PolicySpec, estimate_hitting_laplace, estimate_policy_value, grid_argmax_check

logger = logging.getLogger(__name__)

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"
ARGMAX_STEP = 0.002
ARGMAX_HALF_WIDTH = 5
# stationary standard deviations from the threshold
MC_SPOTS = (0.25, 0.5, 1.0, 2.0, 3.0)
RICHARDSON_SE = 3.0


class CheckResult(BaseModel):
    name: str
    status: str
    measured: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


class VerifyReport(BaseModel):
    checks: List[CheckResult]
    b_star_perturbation: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.status != FAIL for check in self.checks)

    def counts(self) -> dict:
        return {status: sum(1 for c in self.checks if c.status == status) for status in (PASS, FAIL, SKIPPED)}

    def to_report(self) -> dict:
        return {
            "passed": self.passed,
            "counts": self.counts(),
            "b_star_perturbation": self.b_star_perturbation,
            "checks": [c.model_dump() for c in self.checks],
        }


def _measure(name: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    ok = math.isfinite(measured) and measured <= tolerance
    return CheckResult(name=name, status=PASS if ok else FAIL, measured=measured, tolerance=tolerance, detail=detail)


def _skip(name: str, why: str) -> CheckResult:
    return CheckResult(name=name, status=SKIPPED, detail=why)


def _mc_gap(name: str, report, target: float) -> CheckResult:
    """|estimate - target| in standard errors, net of the truncation bias"""
    se = max(report.std_error, 1e-15)
    gap = max(0.0, abs(report.estimate - target) - report.bias_bound) / se
    return _measure(name, gap, 3.0, f"estimate {report.estimate:.6g} vs analytic {target:.6g}")


class Verifier:
    """Runs the suite for one configuration"""

    def __init__(self, cfg: RunConfig, b_star_perturbation: float = 0.0):
        self.cfg = cfg
        self.p = cfg.model
        self.d = cfg.discount
        self.q = cfg.quadrature
        self.perturbation = b_star_perturbation
        self.res, self.res_hat = resolvents(self.p, self.d, self.q)
        self._solution: Optional[ThresholdSolution] = None
        self._stoploss: Optional[StopLossSolution] = None
        self._variants: Optional[List[Tuple[str, ModelParams, ThresholdSolution]]] = None

    @property
    def solution(self) -> ThresholdSolution:
        """No-stop-loss solution with b* scaled by (1 + perturbation)"""
        if self._solution is None:
            sol = solve_no_stoploss(self.p, self.d, self.q)
            if self.perturbation:
                sol = sol.model_copy(update={"b_star": sol.b_star * (1.0 + self.perturbation)})
            self._solution = sol
        return self._solution

    @property
    def stoploss(self) -> Optional[StopLossSolution]:
        if self.cfg.stop_loss is None:
            return None
        if self._stoploss is None:
            self._stoploss = solve_stoploss(self.cfg.stop_loss, self.p, self.d, self.q)
        return self._stoploss

    def grid(self) -> np.ndarray:
        return default_grid(self.p, self.cfg.value_grid_points)

    # analytic checks

    def closed_forms(self) -> List[CheckResult]:
        p, d = self.p, self.d
        expected = (p.mu * p.theta + d.r * d.c) / (p.mu + d.r)
        s = d.r / p.mu
        gamma_value = 2.0 ** (s / 2.0 - 1.0) * gamma(s / 2.0)
        b_brown, _ = brownian_thresholds(p.sigma, d)
        return [
            _measure("l_star_closed_form", abs(l_star(p, d) - expected), 1e-12),
            _measure("F_theta_gamma_identity", abs(self.res.F(p.theta) / gamma_value - 1.0), 1e-8),
            _measure(
                "brownian_b_star",
                abs(b_brown - (d.c + p.sigma / math.sqrt(2.0 * d.r))),
                1e-12,
            ),
        ]

    def special_functions(self) -> List[CheckResult]:
        p, res = self.p, self.res
        xs = default_grid(p, 41)
        reflection = max(abs(res.G(x) / res.F(2.0 * p.theta - x) - 1.0) for x in xs)
        fine = res.tightened()
        ode = max(fine.ode_residual(x) for x in xs)
        return [
            _measure("reflection_identity", reflection, 1e-8),
            _measure("resolvent_ode_residual", ode, 1e-6),
        ]

    def smooth_pasting(self) -> List[CheckResult]:
        sol, d = self.solution, self.d
        left = value_V_d1(float(np.nextafter(sol.b_star, -np.inf)), sol.b_star, self.res, d.c)
        checks = [_measure("exit_smooth_pasting", abs(left - 1.0), 1e-5, f"V'(b*-) = {left:.8f}")]

        left_J = value_V_d1(sol.d_star, sol.b_star, self.res, d.c) - 1.0
        right_J = entry_reward(sol.d_star, sol.b_star, self.res, d) * self.res_hat.dlog_G(sol.d_star)
        checks.append(_measure("entry_smooth_pasting", abs(left_J - right_J), 1e-5))

        sl = self.stoploss
        if sl is None or sl.degenerate_exit:
            checks.append(_skip("stoploss_exit_smooth_pasting", "no stop-loss or degenerate exit"))
        else:
            slope = value_VL_d1(float(np.nextafter(sl.b_L, -np.inf)), sl, self.res, d.c)
            checks.append(_measure("stoploss_exit_smooth_pasting", abs(slope - 1.0), 1e-5))
            kink = value_VL_d1(sl.L, sl, self.res, d.c) - 1.0
            checks.append(_measure("stoploss_kink_at_L", -abs(kink), -1e-8, f"V_L'(L+) - 1 = {kink:.3e}"))
        if sl is None or not sl.entry_solved or sl.trivial_entry:
            checks.append(_skip("stoploss_entry_smooth_pasting", "no nontrivial stop-loss entry"))
        else:
            gaps = []
            for level, dlog in ((sl.a_L, self.res_hat.dlog_F), (sl.d_L, self.res_hat.dlog_G)):
                inner = value_VL_d1(level, sl, self.res, d.c) - 1.0
                outer = entry_reward_L(level, sl, self.res, d) * dlog(level)
                gaps.append(abs(inner - outer))
            checks.append(_measure("stoploss_entry_smooth_pasting", max(gaps), 1e-5))
        return checks

    def variational_inequalities(self) -> List[CheckResult]:
        report = vi_residuals(self.grid(), self.solution, self.p, self.d, self.q)
        return [
            _measure("vi_exit", report.max_violation_exit, 1e-4),
            _measure("vi_entry", report.max_violation_entry, 1e-4),
        ]

    def sandwiches(self) -> List[CheckResult]:
        xs = self.grid()
        base = value_grid(xs, self.solution, self.p, self.d, self.q)
        V, J = base["V"], base["J"]
        h_hat = V - xs - self.d.c_hat
        checks = [
            _measure("V_above_payoff", float(np.max((xs - self.d.c) - V)), 1e-12),
            _measure("J_nonnegative", float(np.max(-J)), 1e-12),
            _measure("J_above_entry_reward", float(np.max(h_hat - J)), 1e-10),
        ]
        sl = self.stoploss
        if sl is None or not sl.entry_solved:
            checks.append(_skip("stoploss_sandwich", "no stop-loss configured"))
            return checks
        with_stop = value_grid_L(xs, sl, self.p, self.d, self.q)
        V_L, J_L = with_stop["V_L"], with_stop["J_L"]
        violation = max(
            float(np.max((xs - self.d.c) - V_L)),
            float(np.max(V_L - V)),
            float(np.max(-J_L)),
            float(np.max(J_L - J)),
        )
        checks.append(_measure("stoploss_sandwich", violation, 1e-10))
        return checks

    def majorant(self) -> List[CheckResult]:
        sol = self.solution
        xs = default_grid(self.p, self.cfg.value_grid_points)
        y, H = transformed_curve(lambda x: x - self.d.c, self.res, xs)
        ys = np.concatenate(([0.0], y))
        W_grid = discrete_concave_majorant(ys, np.concatenate(([0.0], H)))[1:]
        W = np.array([analytic_W(float(v), sol.b_star, self.res, self.d.c) for v in y])
        error = float(np.max(np.abs(W_grid - W)) / max(float(np.max(np.abs(W))), 1e-300))
        return [_measure("concave_majorant_vs_analytic", error, 1e-3)]

    def monotonicity(self, n: int = 20) -> List[CheckResult]:
        p, d, q = self.p, self.d, self.q
        # cost shifts of up to half the round-trip cost keep c + c_hat positive
        shifts = np.linspace(-0.5, 0.5, n) * (d.c + d.c_hat)
        costs = d.c + shifts
        b_values = [solve_exit_threshold(p, d.model_copy(update={"c": float(c)}), q) for c in costs]
        entry_costs = d.c_hat + shifts
        d_values = [
            solve_no_stoploss(p, d.model_copy(update={"c_hat": float(c)}), q).d_star for c in entry_costs
        ]
        checks = [
            _measure("b_star_increasing_in_c", float(np.max(-np.diff(b_values))), -1e-12),
            _measure("d_star_nonincreasing_in_c_hat", float(np.max(np.diff(d_values))), 1e-10),
        ]
        critical = l_star(p, d)
        levels = np.linspace(critical - 4.0 * p.stationary_sd, critical - 0.05 * p.stationary_sd, n)
        b_L = [solve_exit_stoploss(float(L), p, d, q).b_L for L in levels]
        checks.append(_measure("b_L_decreasing_in_L", float(np.max(np.diff(b_L))), -1e-12))
        return checks

    def translation(self, k: float = 0.1) -> List[CheckResult]:
        p, d, q = self.p, self.d, self.q
        L = self.cfg.stop_loss if self.cfg.stop_loss is not None else l_star(p, d) - p.stationary_sd
        base = solve_exit_stoploss(L, p, d, q)
        shifted_p = p.shifted(k)
        shifted_d = d.model_copy(update={"c": d.c + k})
        moved = solve_exit_stoploss(L + k, shifted_p, shifted_d, q)
        res_moved, _ = resolvents(shifted_p, shifted_d, q)
        xs = np.linspace(L, base.b_L, 11)
        value_gap = max(
            abs(value_VL(float(x), base, self.res, d.c) - value_VL(float(x) + k, moved, res_moved, d.c + k))
            for x in xs
        )
        return [
            _measure("translation_b_L", abs((moved.b_L - (p.theta + k)) - (base.b_L - p.theta)), 1e-8),
            _measure("translation_V_L", value_gap, 1e-8),
        ]

    # Monte Carlo checks

    def hitting_laplace(self) -> List[CheckResult]:
        p, mc = self.p, self.cfg.mc
        if mc.n_paths == 0:
            return [_skip("hitting_laplace", "n_paths = 0")]
        sd = p.stationary_sd
        cases = [
            (p.theta, p.theta + sd, p.mu / 10.0),
            (p.theta - sd, p.theta, p.mu / 10.0),
            (p.theta + sd, p.theta, p.mu / 10.0),
            (p.theta, p.theta - 0.5 * sd, p.mu / 5.0),
        ]
        checks = []
        for x0, kappa, r in cases:
            res = make_resolvent(p, r, self.q)
            target = res.F_ratio(x0, kappa) if x0 <= kappa else res.G_ratio(x0, kappa)
            report = estimate_hitting_laplace(x0, kappa, r, p, mc)
            checks.append(_mc_gap(f"hitting_laplace(x0={x0:.4f},kappa={kappa:.4f},r={r:.3g})", report, target))
        return checks

    def parameter_sets(self) -> List[Tuple[str, ModelParams, ThresholdSolution]]:
        """The configured model plus a slower and a noisier variant, each with its thresholds"""
        if self._variants is None:
            p, d, q = self.p, self.d, self.q
            variants = [("base", p, self.solution)]
            for name, update in (("slow", {"mu": 0.5 * p.mu}), ("noisy", {"sigma": 1.5 * p.sigma})):
                moved = p.model_copy(update=update)
                variants.append((name, moved, solve_no_stoploss(moved, d, q)))
            self._variants = variants
        return self._variants

    def policy_values(self) -> List[CheckResult]:
        d, mc = self.d, self.cfg.mc
        if mc.n_paths == 0:
            return [_skip("policy_values", "n_paths = 0")]
        checks = []
        for name, p, sol in self.parameter_sets():
            res, res_hat = (self.res, self.res_hat) if p is self.p else resolvents(p, d, self.q)
            sd = p.stationary_sd
            for k in MC_SPOTS:
                x = sol.b_star - k * sd
                report = estimate_policy_value(x, PolicySpec(exit_upper=sol.b_star), d, p, mc)
                checks.append(_mc_gap(f"mc_V[{name}](x={x:.4f})", report, value_V(x, sol.b_star, res, d.c)))
            for k in MC_SPOTS:
                x = sol.d_star + (k - 1.0) * sd
                policy = PolicySpec(entry_upper=sol.d_star, exit_upper=sol.b_star)
                report = estimate_policy_value(x, policy, d, p, mc)
                checks.append(_mc_gap(f"mc_J[{name}](x={x:.4f})", report, value_J(x, sol, res, res_hat, d)))

        p = self.p
        sl = self.stoploss
        if sl is None or sl.degenerate_exit:
            checks.append(_skip("mc_V_L", "no stop-loss or degenerate exit"))
        else:
            policy = PolicySpec(exit_upper=sl.b_L, stop_loss=sl.L)
            for x in np.linspace(sl.L, sl.b_L, len(MC_SPOTS) + 2)[1:-1]:
                x = float(x)
                report = estimate_policy_value(x, policy, d, p, mc)
                checks.append(_mc_gap(f"mc_V_L(x={x:.4f})", report, value_VL(x, sl, self.res, d.c)))
        if sl is None or sl.degenerate_exit or sl.trivial_entry:
            checks.append(_skip("mc_J_L", "no nontrivial stop-loss entry"))
        else:
            policy = PolicySpec(entry_lower=sl.a_L, entry_upper=sl.d_L, exit_upper=sl.b_L, stop_loss=sl.L)
            for x in (0.5 * (sl.L + sl.a_L), sl.a_L, 0.5 * (sl.a_L + sl.d_L), 0.5 * (sl.d_L + sl.b_L), sl.b_L):
                report = estimate_policy_value(x, policy, d, p, mc)
                checks.append(
                    _mc_gap(f"mc_J_L(x={x:.4f})", report, value_JL(x, sl, self.res, self.res_hat, d))
                )
        return checks

    def richardson(self) -> List[CheckResult]:
        """Halving the Monte Carlo step must not move the exit value beyond sampling noise"""
        p, d, mc, sol = self.p, self.d, self.cfg.mc, self.solution
        if mc.n_paths == 0:
            return [_skip("mc_richardson", "n_paths = 0")]
        x = sol.b_star - p.stationary_sd
        policy = PolicySpec(exit_upper=sol.b_star)
        coarse = estimate_policy_value(x, policy, d, p, mc)
        fine = estimate_policy_value(x, policy, d, p, mc.model_copy(update={"dt": 0.5 * coarse.dt}))
        noise = math.hypot(coarse.std_error, fine.std_error)
        gap = abs(coarse.estimate - fine.estimate) / max(noise, 1e-15)
        return [
            _measure(
                "mc_richardson",
                gap,
                RICHARDSON_SE,
                f"dt {coarse.dt:.3g}: {coarse.estimate:.6g}, dt {fine.dt:.3g}: {fine.estimate:.6g}",
            )
        ]

    def argmax(self) -> List[CheckResult]:
        d, mc = self.d, self.cfg.mc
        if mc.n_paths == 0:
            return [_skip("grid_argmax", "n_paths = 0")]
        offsets = ARGMAX_STEP * np.arange(-ARGMAX_HALF_WIDTH, ARGMAX_HALF_WIDTH + 1)

        def as_result(name: str, check) -> CheckResult:
            detail = f"argmax {check.best:.4f}, analytic {check.analytic:.4f}"
            return CheckResult(name=name, status=PASS if check.passed else FAIL, measured=abs(check.best - check.analytic),
                               tolerance=check.step, detail=detail)

        checks = []
        for name, p, sol in self.parameter_sets():
            sd = p.stationary_sd
            x_exit = sol.b_star - 2.0 * sd
            check = grid_argmax_check(x_exit, sol.b_star + offsets, d, p, mc, "exit", analytic=sol.b_star)
            checks.append(as_result(f"argmax_exit[{name}]", check))
            x_entry = sol.d_star + 2.0 * sd
            entry_grid = [g for g in sol.d_star + offsets if g < sol.b_star]
            check = grid_argmax_check(x_entry, entry_grid, d, p, mc, "entry", exit_upper=sol.b_star, analytic=sol.d_star)
            checks.append(as_result(f"argmax_entry[{name}]", check))

        p = self.p
        sl = self.stoploss
        if sl is None or sl.degenerate_exit:
            checks.append(_skip("argmax_exit_stoploss", "no stop-loss or degenerate exit"))
        else:
            grid = [g for g in sl.b_L + offsets if g > sl.L]
            x0 = sl.L + 0.25 * (sl.b_L - sl.L)
            checks.append(
                as_result(
                    "argmax_exit_stoploss",
                    grid_argmax_check(x0, grid, d, p, mc, "exit_stoploss", stop_loss=sl.L, analytic=sl.b_L),
                )
            )
        return checks

    def run(self, monte_carlo: bool = True) -> VerifyReport:
        groups: List[Tuple[str, Callable[[], List[CheckResult]]]] = [
            ("closed_forms", self.closed_forms),
            ("special_functions", self.special_functions),
            ("smooth_pasting", self.smooth_pasting),
            ("variational_inequalities", self.variational_inequalities),
            ("sandwiches", self.sandwiches),
            ("majorant", self.majorant),
            ("monotonicity", self.monotonicity),
            ("translation", self.translation),
        ]
        if monte_carlo:
            groups += [
                ("hitting_laplace", self.hitting_laplace),
                ("policy_values", self.policy_values),
                ("richardson", self.richardson),
                ("argmax", self.argmax),
            ]
        checks: List[CheckResult] = []
        for name, group in groups:
            try:
                checks.extend(group())
            except OUTimingError as e:
                logger.error(f"check group {name} failed: {e}")
                checks.append(CheckResult(name=name, status=FAIL, detail=str(e)))
        report = VerifyReport(checks=checks, b_star_perturbation=self.perturbation)
        logger.info(f"verification: {report.counts()}")
        return report


def run_verification(cfg: RunConfig, b_star_perturbation: float = 0.0, monte_carlo: bool = True) -> VerifyReport:
    return Verifier(cfg, b_star_perturbation).run(monte_carlo)
