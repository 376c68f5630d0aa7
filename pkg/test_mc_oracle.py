#!/usr/bin/env python3
"""
Test the Monte Carlo oracle against the analytic values

Path counts are kept small; the acceptance rule is the same three standard
errors plus the truncation bias used by `python main.py verify`.
"""
import math
import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from config.run_config import load_run_config
from solvers.double_stopping import DiscountSpec, resolvents, solve_no_stoploss, value_J, value_V
from solvers.stoploss import solve_stoploss, value_JL, value_VL
from tools.errors import InputError
from tools.special_fn import ModelParams, make_resolvent
from verification.mc_oracle import (
    McConfig,
    PolicySpec,
    estimate_hitting_laplace,
    estimate_policy_value,
    estimate_policy_values,
    grid_argmax_check,
    sample_policy_paths,
)
from verification.checks import Verifier

GLD_GDX = ModelParams(theta=0.5388, mu=16.6677, sigma=0.1599)
UNIT = ModelParams(theta=0.0, mu=1.0, sigma=math.sqrt(2.0))
COSTS = DiscountSpec(r=0.05, r_hat=0.05, c=0.05, c_hat=0.05)
LOW = DiscountSpec(r=0.05, r_hat=0.05, c=0.005, c_hat=0.005)
SMALL = McConfig(n_paths=4000, seed=20150601)


def test_hitting_laplace_upward():
    cfg = McConfig(n_paths=8000, dt=0.01, seed=1)
    report = estimate_hitting_laplace(-1.0, 0.0, 1.0, UNIT, cfg)
    target = make_resolvent(UNIT, 1.0).F_ratio(-1.0, 0.0)
    assert report.within(target), f"{report.estimate:.5f} +/- {report.std_error:.5f} vs {target:.5f}"


def test_hitting_laplace_downward():
    cfg = McConfig(n_paths=8000, dt=0.01, seed=2)
    report = estimate_hitting_laplace(1.0, 0.0, 1.0, UNIT, cfg)
    target = make_resolvent(UNIT, 1.0).G_ratio(1.0, 0.0)
    assert report.within(target), f"{report.estimate:.5f} +/- {report.std_error:.5f} vs {target:.5f}"


def test_exit_value_matches_V():
    sol = solve_no_stoploss(GLD_GDX, COSTS)
    res, _ = resolvents(GLD_GDX, COSTS)
    x0 = sol.b_star - GLD_GDX.stationary_sd
    report = estimate_policy_value(x0, PolicySpec(exit_upper=sol.b_star), COSTS, GLD_GDX, SMALL)
    assert report.within(value_V(x0, sol.b_star, res, COSTS.c))


def test_entry_value_matches_J():
    sol = solve_no_stoploss(GLD_GDX, COSTS)
    res, res_hat = resolvents(GLD_GDX, COSTS)
    x0 = sol.d_star + GLD_GDX.stationary_sd
    policy = PolicySpec(entry_upper=sol.d_star, exit_upper=sol.b_star)
    report = estimate_policy_value(x0, policy, COSTS, GLD_GDX, SMALL)
    assert report.within(value_J(x0, sol, res, res_hat, COSTS))


def test_stop_loss_values():
    sol = solve_stoploss(0.4834, GLD_GDX, LOW)
    res, res_hat = resolvents(GLD_GDX, LOW)
    x_mid = 0.5 * (sol.L + sol.b_L)
    exit_report = estimate_policy_value(x_mid, PolicySpec(exit_upper=sol.b_L, stop_loss=sol.L), LOW, GLD_GDX, SMALL)
    assert exit_report.within(value_VL(x_mid, sol, res, LOW.c))

    policy = PolicySpec(entry_lower=sol.a_L, entry_upper=sol.d_L, exit_upper=sol.b_L, stop_loss=sol.L)
    for x0 in (0.5 * (sol.L + sol.a_L), 0.5 * (sol.a_L + sol.d_L), sol.b_L):
        entry_report = estimate_policy_value(x0, policy, LOW, GLD_GDX, SMALL)
        assert entry_report.within(value_JL(x0, sol, res, res_hat, LOW))


def test_immediate_exit_pays_payoff():
    report = estimate_policy_value(0.6, PolicySpec(exit_upper=0.55), COSTS, GLD_GDX, SMALL)
    assert report.estimate == pytest.approx(0.6 - COSTS.c, abs=1e-15)
    assert report.std_error <= 1e-12


def test_seed_reproducibility():
    policy = PolicySpec(exit_upper=0.58)
    a = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=500, seed=9))
    b = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=500, seed=9))
    c = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=500, seed=10))
    assert a.estimate == b.estimate
    assert a.estimate != c.estimate


def test_zero_paths_report_only():
    report = estimate_policy_value(0.53, PolicySpec(exit_upper=0.58), COSTS, GLD_GDX, McConfig(n_paths=0))
    assert report.n_paths == 0
    assert math.isnan(report.estimate)


def test_coarse_step_rejected():
    cfg = McConfig(n_paths=10, dt=1.0)
    with pytest.raises(InputError):
        estimate_policy_value(0.53, PolicySpec(exit_upper=0.58), COSTS, GLD_GDX, cfg)


def test_max_steps_reported_in_bias():
    cfg = McConfig(n_paths=200, max_steps=5, seed=3)
    report = estimate_policy_value(0.5, PolicySpec(exit_upper=0.7), COSTS, GLD_GDX, cfg)
    assert report.n_truncated > 0
    assert report.bias_bound > 0


def test_policy_validation():
    with pytest.raises(ValidationError):
        PolicySpec(exit_upper=0.5, stop_loss=0.6)
    with pytest.raises(ValidationError):
        PolicySpec(entry_upper=0.6, exit_upper=0.5)
    with pytest.raises(ValidationError):
        PolicySpec(entry_lower=0.4, exit_upper=0.6)
    with pytest.raises(ValidationError):
        PolicySpec(entry_upper=0.45, exit_upper=0.6, stop_loss=0.48)


def test_grid_argmax_exit():
    sol = solve_no_stoploss(GLD_GDX, COSTS)
    grid = [sol.b_star + 0.002 * k for k in range(-5, 6)]
    x0 = sol.b_star - 2.0 * GLD_GDX.stationary_sd
    check = grid_argmax_check(x0, grid, COSTS, GLD_GDX, McConfig(n_paths=2000, seed=4), "exit", analytic=sol.b_star)
    assert check.passed
    assert len(check.estimates) == 11
    assert check.step == pytest.approx(0.002)
    with pytest.raises(ValueError):
        grid_argmax_check(x0, grid, COSTS, GLD_GDX, SMALL, "exit_stoploss")


def test_grid_argmax_across_models_and_spots():
    for p in (GLD_GDX, GLD_GDX.model_copy(update={"mu": 8.0}), GLD_GDX.model_copy(update={"sigma": 0.24})):
        sol = solve_no_stoploss(p, COSTS)
        grid = [sol.b_star + 0.002 * k for k in range(-5, 6)]
        sd = p.stationary_sd
        for x0 in (sol.b_star - 3.0 * sd, sol.b_star - sd):
            check = grid_argmax_check(x0, grid, COSTS, p, McConfig(n_paths=1500, seed=6), "exit", analytic=sol.b_star)
            assert check.passed, f"argmax {check.best:.4f} vs b* {sol.b_star:.4f}"


def test_stacked_candidates_equal_single_runs():
    sol = solve_stoploss(0.4834, GLD_GDX, LOW)
    cfg = McConfig(n_paths=700, block_size=300, seed=8)
    policies = [
        PolicySpec(entry_lower=sol.a_L, entry_upper=level, exit_upper=sol.b_L, stop_loss=sol.L)
        for level in (sol.d_L - 0.004, sol.d_L, sol.d_L + 0.002)
    ]
    stacked = estimate_policy_values(sol.b_L, policies, LOW, GLD_GDX, cfg)
    for policy, report in zip(policies, stacked):
        single = estimate_policy_value(sol.b_L, policy, LOW, GLD_GDX, cfg)
        assert report.estimate == pytest.approx(single.estimate, rel=1e-12, abs=1e-15)
        assert report.std_error == pytest.approx(single.std_error, rel=1e-9)
    with pytest.raises(ValueError):
        estimate_policy_values(0.5, [PolicySpec(exit_upper=0.6), PolicySpec(exit_upper=0.6, stop_loss=0.45)], LOW, GLD_GDX, cfg)


def test_worker_pool_gives_the_same_estimate():
    policy = PolicySpec(exit_upper=0.58)
    serial = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=900, block_size=300, seed=12))
    pooled = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=900, block_size=300, seed=12, workers=2))
    assert pooled.estimate == serial.estimate
    assert pooled.std_error == serial.std_error


def test_standard_error_shrinks_with_root_n():
    policy = PolicySpec(exit_upper=0.58)
    few = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=1000, seed=13))
    many = estimate_policy_value(0.53, policy, COSTS, GLD_GDX, McConfig(n_paths=4000, seed=14))
    assert 1.6 <= few.std_error / many.std_error <= 2.5


def test_halving_the_step_keeps_the_estimate():
    sol = solve_no_stoploss(GLD_GDX, COSTS)
    x0 = sol.b_star - GLD_GDX.stationary_sd
    policy = PolicySpec(exit_upper=sol.b_star)
    coarse = estimate_policy_value(x0, policy, COSTS, GLD_GDX, McConfig(n_paths=4000, seed=15))
    fine = estimate_policy_value(x0, policy, COSTS, GLD_GDX, McConfig(n_paths=4000, seed=16, dt=0.5 * coarse.dt))
    assert fine.dt == pytest.approx(0.5 * coarse.dt)
    assert abs(coarse.estimate - fine.estimate) <= 3.0 * math.hypot(coarse.std_error, fine.std_error)


def test_verifier_covers_three_models_and_five_spots():
    cfg = load_run_config(
        None,
        {"stop_loss": 0.4834, "discount": {"c": 0.005, "c_hat": 0.005}, "mc": {"n_paths": 300, "seed": 3}},
    )
    verifier = Verifier(cfg)
    names = [check.name for check in verifier.policy_values()]
    for family in ("mc_V[base]", "mc_V[slow]", "mc_V[noisy]", "mc_J[base]", "mc_J[slow]", "mc_J[noisy]", "mc_V_L", "mc_J_L"):
        assert sum(name.startswith(family + "(") for name in names) == 5, family
    argmax = verifier.argmax()
    assert {c.name for c in argmax} >= {"argmax_exit[base]", "argmax_entry[slow]", "argmax_exit_stoploss"}
    assert all(c.tolerance == pytest.approx(0.002) for c in argmax)
    assert [c.name for c in verifier.richardson()] == ["mc_richardson"]


def test_sample_paths_mark_entry():
    sol = solve_stoploss(0.4834, GLD_GDX, LOW)
    policy = PolicySpec(entry_lower=sol.a_L, entry_upper=sol.d_L, exit_upper=sol.b_L, stop_loss=sol.L)
    rows = sample_policy_paths(sol.b_L, policy, GLD_GDX, McConfig(seed=20150601), n_paths=3)
    assert {row["path"] for row in rows} == {0, 1, 2}
    for j in range(3):
        path = [row for row in rows if row["path"] == j]
        assert path[0]["t"] == 0.0
        assert path[-1]["event"] in ("exit", "stop_loss", "horizon")
        entries = [i for i, row in enumerate(path) if row["event"] == "entry"]
        if entries:
            i = entries[0]
            assert sol.a_L <= path[i]["x"] <= sol.d_L
            assert path[i - 1]["x"] > sol.d_L or path[i - 1]["x"] < sol.a_L


if __name__ == "__main__":
    print("=" * 60)
    print("TESTING MONTE CARLO ORACLE")
    print("=" * 60)
    failed = 0
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            try:
                func()
                print(f"✅ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e}")
    sys.exit(1 if failed else 0)
