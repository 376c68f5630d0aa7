#!/usr/bin/env python3
"""
Test the OU resolvent functions F, G, their derivatives and psi
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from solvers.double_stopping import default_grid
from tools.errors import OutOfRangeError
from tools.special_fn import (
    DEFAULT_QUADRATURE,
    ModelParams,
    QuadratureConfig,
    eval_F,
    eval_F_d1,
    eval_G,
    eval_G_d1,
    make_resolvent,
    psi,
    psi_inverse,
)

GLD_GDX = ModelParams(theta=0.5388, mu=16.6677, sigma=0.1599)
UNIT = ModelParams(theta=0.0, mu=1.0, sigma=math.sqrt(2.0))
FINE = QuadratureConfig(rel_tol=1e-12, abs_tol=1e-14, limit=400)


def gamma_identity(s: float) -> float:
    return 2.0 ** (s / 2.0 - 1.0) * math.gamma(s / 2.0)


def test_F_at_theta_unit_rate():
    """r/mu = 1 gives sqrt(pi/2)"""
    assert eval_F(0.0, 1.0, UNIT) == pytest.approx(math.sqrt(math.pi / 2.0), rel=1e-9)


def test_F_at_theta_small_rate():
    """r/mu ~ 0.003 exercises the endpoint singularity"""
    r = 0.05
    expected = gamma_identity(r / GLD_GDX.mu)
    assert eval_F(GLD_GDX.theta, r, GLD_GDX) == pytest.approx(expected, rel=1e-8)


def test_reflection_identity():
    for x in default_grid(GLD_GDX, 21):
        mirrored = 2.0 * GLD_GDX.theta - x
        assert eval_G(x, 0.05, GLD_GDX) == pytest.approx(eval_F(mirrored, 0.05, GLD_GDX), rel=1e-8)
    assert eval_G(1.0, 1.0, UNIT) == pytest.approx(eval_F(-1.0, 1.0, UNIT), rel=1e-10)


def test_sign_statements_on_grid():
    res = make_resolvent(GLD_GDX, 0.05)
    for x in default_grid(GLD_GDX, 41):
        assert res.F(x) > 0 and res.dF(x) > 0 and res.d2F(x) > 0
        assert res.G(x) > 0 and res.dG(x) < 0 and res.d2G(x) > 0


def test_F_increasing_spot_pair():
    assert eval_F(0.55, 0.05, GLD_GDX) > eval_F(0.54, 0.05, GLD_GDX)


def test_ode_residual():
    for p, r in ((GLD_GDX, 0.05), (UNIT, 1.0), (UNIT, 3.0)):
        res = make_resolvent(p, r, DEFAULT_QUADRATURE.tightened())
        for x in default_grid(p, 25):
            assert res.ode_residual(x) <= 1e-6


def test_tightened_quadrature():
    fine = QuadratureConfig(rel_tol=1e-6, abs_tol=1e-8, limit=100).tightened()
    assert fine.rel_tol <= 1e-12 and fine.abs_tol <= 1e-14 and fine.limit >= 400
    assert FINE.tightened() == FINE
    res = make_resolvent(UNIT, 1.0)
    assert res.tightened().quad == DEFAULT_QUADRATURE.tightened()
    assert res.tightened().F(0.5) == pytest.approx(res.F(0.5), rel=1e-7)


def test_derivatives_match_finite_differences():
    h = 1e-4
    for x in np.linspace(-3.0, 3.0, 13):
        fd_F = (eval_F(x + h, 1.0, UNIT, FINE) - eval_F(x - h, 1.0, UNIT, FINE)) / (2.0 * h)
        fd_G = (eval_G(x + h, 1.0, UNIT, FINE) - eval_G(x - h, 1.0, UNIT, FINE)) / (2.0 * h)
        d_F = eval_F_d1(x, 1.0, UNIT, FINE)
        d_G = eval_G_d1(x, 1.0, UNIT, FINE)
        assert abs(d_F - fd_F) <= 1e-5 * (1.0 + abs(d_F))
        assert abs(d_G - fd_G) <= 1e-5 * (1.0 + abs(d_G))


def test_log_space_far_from_theta():
    """Queries 60 standard deviations out stay finite through the log variants"""
    res = make_resolvent(GLD_GDX, 0.05)
    far = GLD_GDX.theta + 60.0 * GLD_GDX.stationary_sd
    assert math.isfinite(res.log_F(far))
    assert res.dlog_F(far) > 0
    assert res.dlog_G(far) < 0


def test_psi_basic_properties():
    assert psi(GLD_GDX.theta, 0.05, GLD_GDX) == pytest.approx(1.0, abs=1e-12)
    values = [psi(x, 0.05, GLD_GDX) for x in default_grid(GLD_GDX, 41)]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert psi(-10.0, 1.0, UNIT) < 1e-3


def test_psi_inverse_round_trip():
    res = make_resolvent(GLD_GDX, 0.05)
    assert res.psi_inverse(1.0) == GLD_GDX.theta
    for x in default_grid(GLD_GDX, 9, width=4.0):
        assert res.psi_inverse(res.psi(x)) == pytest.approx(x, abs=1e-9)
    target = GLD_GDX.theta + GLD_GDX.sigma
    assert psi_inverse(psi(target, 0.05, GLD_GDX), 0.05, GLD_GDX) == pytest.approx(target, abs=1e-9)


def test_psi_inverse_rejects_non_positive():
    with pytest.raises(OutOfRangeError):
        psi_inverse(0.0, 1.0, UNIT)
    with pytest.raises(OutOfRangeError):
        psi_inverse(-1.0, 1.0, UNIT)


def test_rate_must_be_positive():
    with pytest.raises(ValueError):
        make_resolvent(UNIT, 0.0)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(theta=0.0, mu=-1.0, sigma=1.0)
    with pytest.raises(ValueError):
        ModelParams(theta=float("nan"), mu=1.0, sigma=1.0)


if __name__ == "__main__":
    print("=" * 60)
    print("TESTING SPECIAL FUNCTIONS")
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
