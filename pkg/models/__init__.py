"""Models module"""
from .ou_process import (
    CalibrationResult,
    PairSpec,
    PriceSeries,
    avg_log_likelihood,
    fit_mle,
    load_pair_csv,
    load_price_csv,
    select_beta_star,
    simulate_exact,
)

__all__ = [
    "CalibrationResult",
    "PairSpec",
    "PriceSeries",
    "avg_log_likelihood",
    "fit_mle",
    "load_pair_csv",
    "load_price_csv",
    "select_beta_star",
    "simulate_exact",
]
