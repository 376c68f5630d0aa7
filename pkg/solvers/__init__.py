"""Solvers module"""
from .double_stopping import DiscountSpec, ThresholdSolution, solve_no_stoploss
from .stoploss import StopLossSolution, solve_relative_stoploss, solve_stoploss, sweep_L

__all__ = [
    "DiscountSpec",
    "ThresholdSolution",
    "solve_no_stoploss",
    "StopLossSolution",
    "solve_relative_stoploss",
    "solve_stoploss",
    "sweep_L",
]
