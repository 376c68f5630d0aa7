#!/usr/bin/env python3
"""
Test OU simulation, likelihood, calibration and CSV ingestion
"""
import math
import sys
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from models.ou_process import (
    PairSpec,
    PriceSeries,
    avg_log_likelihood,
    build_spread,
    check_aligned,
    closed_form_estimate,
    fit_mle,
    load_pair_csv,
    load_price_csv,
    scan_beta_grid,
    select_beta_star,
    simulate_exact,
    simulate_paths,
    stationary_moments,
)
from tools.errors import AlignmentError, CalibrationError, InputError
from tools.special_fn import ModelParams

GLD_GDX = ModelParams(theta=0.5388, mu=16.6677, sigma=0.1599)
DAILY = 1.0 / 252


def synthetic_pair(n: int = 2000, B_true: float = 0.5, seed: int = 7) -> Tuple[PriceSeries, PriceSeries]:
    """Legs whose spread at B_true is an exact OU path.

    Leg 2 is a geometric random walk; leg 1 is backed out so that
    A/s1[0] * s1 - B_true/s2[0] * s2 equals the simulated spread.
    """
    spread = simulate_exact(GLD_GDX.model_copy(update={"theta": 1.0 - B_true}), 1.0 - B_true, DAILY, n - 1, seed)
    rng = np.random.default_rng(seed + 1)
    s2 = 50.0 * np.exp(np.cumsum(np.concatenate(([0.0], 0.5 * math.sqrt(DAILY) * rng.standard_normal(n - 1)))))
    beta = B_true / s2[0]
    alpha = 1.0 / 100.0
    s1 = (spread.values + beta * s2) / alpha
    return PriceSeries.from_values(s1, DAILY), PriceSeries.from_values(s2, DAILY)


def test_simulation_is_reproducible():
    a = simulate_exact(GLD_GDX, 0.5, DAILY, 500, seed=3)
    b = simulate_exact(GLD_GDX, 0.5, DAILY, 500, seed=3)
    c = simulate_exact(GLD_GDX, 0.5, DAILY, 500, seed=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.n == 500


def test_paths_do_not_depend_on_path_count():
    few = simulate_paths(GLD_GDX, 0.5, DAILY, 50, 3, seed=11)
    many = simulate_paths(GLD_GDX, 0.5, DAILY, 50, 10, seed=11)
    assert np.array_equal(few, many[:3])


def test_fit_recovers_parameters():
    s = simulate_exact(GLD_GDX, GLD_GDX.theta, DAILY, 5000, seed=20150601)
    fit = fit_mle(s)
    assert fit.params.theta == pytest.approx(GLD_GDX.theta, abs=0.02)
    assert fit.params.sigma == pytest.approx(GLD_GDX.sigma, rel=0.05)
    assert fit.params.mu == pytest.approx(GLD_GDX.mu, rel=0.4)
    assert fit.n == 5000


def test_short_sample_fit_is_reliable_for_theta_and_sigma():
    """200 daily observations, 100 independent samples"""
    close_theta = close_sigma = 0
    for trial in range(100):
        s = simulate_exact(GLD_GDX, GLD_GDX.theta, DAILY, 200, seed=1000 + trial)
        fit = fit_mle(s).params
        close_theta += abs(fit.theta - GLD_GDX.theta) <= 0.05 * GLD_GDX.theta
        close_sigma += abs(fit.sigma - GLD_GDX.sigma) <= 0.15 * GLD_GDX.sigma
    assert close_theta >= 90
    assert close_sigma >= 90


def test_likelihood_at_true_parameters():
    """Daily GLD-GDX dynamics give an average log-likelihood near 3.21"""
    for seed in (1, 2, 3, 4, 5):
        s = simulate_exact(GLD_GDX, GLD_GDX.theta, DAILY, 200, seed)
        assert avg_log_likelihood(GLD_GDX, s) == pytest.approx(3.2117, abs=0.3)


def test_exact_transition_moments():
    x0, n = 0.45, 20
    paths = simulate_paths(GLD_GDX, x0, DAILY, n, 100_000, seed=17)
    mean, var = stationary_moments(GLD_GDX, x0, n * DAILY)
    end = paths[:, -1]
    se_mean = math.sqrt(var / len(end))
    assert float(np.mean(end)) == pytest.approx(mean, abs=4.0 * se_mean)
    assert float(np.var(end)) == pytest.approx(var, rel=4.0 * math.sqrt(2.0 / len(end)))


def test_long_path_matches_stationary_law():
    s = simulate_exact(GLD_GDX, GLD_GDX.theta, DAILY, 200_000, seed=23)
    sd = GLD_GDX.stationary_sd
    assert float(np.mean(s.values)) == pytest.approx(GLD_GDX.theta, abs=0.05 * sd)
    assert float(np.std(s.values)) == pytest.approx(sd, rel=0.05)


def test_vanishing_noise_follows_the_mean_path():
    quiet = GLD_GDX.model_copy(update={"sigma": 1e-12})
    x0, n = 0.45, 50
    s = simulate_exact(quiet, x0, DAILY, n, seed=1)
    t = np.arange(n + 1) * DAILY
    expected = quiet.theta + (x0 - quiet.theta) * np.exp(-quiet.mu * t)
    assert np.allclose(s.values, expected, rtol=0, atol=1e-10)


def test_fit_maximises_likelihood():
    for seed in (1, 2, 3):
        s = simulate_exact(GLD_GDX, 0.6, DAILY, 800, seed)
        fit = fit_mle(s)
        assert fit.avg_loglik >= avg_log_likelihood(GLD_GDX, s) - 1e-12
        assert fit.avg_loglik >= avg_log_likelihood(closed_form_estimate(s), s) - 1e-12


def test_translation_of_series_shifts_theta_only():
    s = simulate_exact(GLD_GDX, 0.5, DAILY, 1000, seed=5)
    base = fit_mle(s)
    moved = fit_mle(s.shifted(0.25))
    assert moved.params.theta == pytest.approx(base.params.theta + 0.25, abs=1e-8)
    assert moved.params.mu == pytest.approx(base.params.mu, rel=1e-6)
    assert moved.params.sigma == pytest.approx(base.params.sigma, rel=1e-6)
    assert moved.avg_loglik == pytest.approx(base.avg_loglik, abs=1e-9)


def test_trending_series_is_not_mean_reverting():
    s = PriceSeries.from_values(np.exp(0.01 * np.arange(50)), DAILY)
    with pytest.raises(CalibrationError) as info:
        fit_mle(s)
    assert "slope" in info.value.diagnostics


def test_short_series_rejected():
    s = PriceSeries.from_values([0.5, 0.51, 0.49, 0.5, 0.52], DAILY)
    with pytest.raises(InputError):
        fit_mle(s)


def test_series_validation():
    with pytest.raises(InputError):
        PriceSeries.from_values([0.5], DAILY)
    with pytest.raises(InputError):
        PriceSeries.from_values([0.5, float("nan"), 0.4], DAILY)
    with pytest.raises(InputError):
        PriceSeries(np.array([0.0, 1.0, 3.0]), np.array([1.0, 2.0, 3.0]), 1.0)


def test_alignment_checked():
    s1 = PriceSeries.from_values([1.0, 2.0, 3.0], DAILY)
    s2 = PriceSeries.from_values([1.0, 2.0], DAILY)
    with pytest.raises(AlignmentError):
        check_aligned(s1, s2)
    with pytest.raises(InputError):
        PairSpec(s1, PriceSeries.from_values([1.0, 2.0, 3.0], DAILY), A=1.0, B_grid=(0.5, 1.5))


def test_build_spread_starts_at_A_minus_B():
    s1, s2 = synthetic_pair(n=100)
    spread = build_spread(PairSpec(s1, s2, A=1.0, B_grid=(0.3,)), 0.3)
    assert spread.values[0] == pytest.approx(0.7, abs=1e-12)


def test_select_beta_star_prefers_the_true_mix():
    s1, s2 = synthetic_pair()
    pair = PairSpec(s1, s2, A=1.0, B_grid=(0.8, 0.2, 0.5))
    best = select_beta_star(pair)
    assert best.beta_star == 0.5
    curve = scan_beta_grid(pair)
    assert [B for B, _ in curve] == [0.2, 0.5, 0.8]


def test_stationary_moments():
    mean, var = stationary_moments(GLD_GDX, 0.7, 1e6)
    assert mean == pytest.approx(GLD_GDX.theta)
    assert var == pytest.approx(GLD_GDX.stationary_sd ** 2)
    mean, var = stationary_moments(GLD_GDX, 0.7, 0.0)
    assert mean == 0.7 and var == 0.0


def test_load_price_csv(tmp_path):
    path = tmp_path / "series.csv"
    s = simulate_exact(GLD_GDX, 0.5, DAILY, 30, seed=9)
    lines = ["date,price"] + [f"2020-01-{i + 1:02d},{v:.10f}" for i, v in enumerate(s.values)]
    path.write_text("\n".join(lines) + "\n")
    loaded = load_price_csv(path)
    assert loaded.n == 30
    assert loaded.labels[0] == "2020-01-01"
    assert loaded.dt == pytest.approx(DAILY)


def test_load_pair_csv_errors(tmp_path):
    missing = tmp_path / "missing.csv"
    missing.write_text("date,price1\n2020-01-01,1.0\n2020-01-02,1.1\n")
    with pytest.raises(InputError) as info:
        load_pair_csv(missing)
    assert info.value.line == 1

    bad = tmp_path / "bad.csv"
    bad.write_text("date,price1,price2\n2020-01-01,1.0,2.0\n2020-01-02,oops,2.1\n2020-01-03,1.2,2.2\n")
    with pytest.raises(InputError) as info:
        load_pair_csv(bad)
    assert info.value.line == 3

    unordered = tmp_path / "unordered.csv"
    unordered.write_text("date,price1,price2\n2020-01-02,1.0,2.0\n2020-01-01,1.1,2.1\n")
    with pytest.raises(InputError):
        load_pair_csv(unordered)

    negative = tmp_path / "negative.csv"
    negative.write_text("date,price1,price2\n2020-01-01,1.0,2.0\n2020-01-02,-1.1,2.1\n")
    with pytest.raises(InputError) as info:
        load_pair_csv(negative)
    assert info.value.line == 3


def test_calendar_gaps(tmp_path):
    s = simulate_exact(GLD_GDX, 0.5, DAILY, 29, seed=9)
    days = list(pd.bdate_range("2021-03-01", periods=30))
    # one holiday is tolerated
    holiday = [d for i, d in enumerate(days + [days[-1] + pd.offsets.BDay(1)]) if i != 10]
    path = tmp_path / "holiday.csv"
    path.write_text("date,price\n" + "".join(f"{d.date()},{v:.10f}\n" for d, v in zip(holiday, s.values)))
    assert load_price_csv(path).n == 29

    # a missing fortnight is not
    gapped = days[:15] + [d + pd.Timedelta(days=14) for d in days[15:]]
    path = tmp_path / "gapped.csv"
    path.write_text("date,price1,price2\n" + "".join(f"{d.date()},{v:.10f},1.0\n" for d, v in zip(gapped, s.values + 1.0)))
    with pytest.raises(InputError) as info:
        load_pair_csv(path)
    assert info.value.line == 17

    # weekly rows pass once dt says weekly
    weekly = pd.date_range("2021-03-05", periods=30, freq="7D")
    path = tmp_path / "weekly.csv"
    path.write_text("date,price\n" + "".join(f"{d.date()},{v:.10f}\n" for d, v in zip(weekly, s.values)))
    assert load_price_csv(path, dt=1.0 / 52).dt == pytest.approx(1.0 / 52)
    with pytest.raises(InputError):
        load_price_csv(path)

    # dates must move forward
    swapped = days[:5] + [days[6], days[5]] + days[7:]
    path = tmp_path / "swapped.csv"
    path.write_text("date,price\n" + "".join(f"{d.date()},{v:.10f}\n" for d, v in zip(swapped, s.values)))
    with pytest.raises(InputError) as info:
        load_price_csv(path)
    assert info.value.line == 8


if __name__ == "__main__":
    import tempfile

    print("=" * 60)
    print("TESTING OU PROCESS")
    print("=" * 60)
    failed = 0
    for name, func in list(globals().items()):
        if name.startswith("test_") and callable(func):
            try:
                if "tmp_path" in func.__code__.co_varnames[: func.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as tmp:
                        func(Path(tmp))
                else:
                    func()
                print(f"✅ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e}")
    sys.exit(1 if failed else 0)
