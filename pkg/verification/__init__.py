"""Verification module"""
from .mc_oracle import (
    McConfig,
    McReport,
    PolicySpec,
    estimate_hitting_laplace,
    estimate_policy_value,
    estimate_policy_values,
)

__all__ = [
    "McConfig",
    "McReport",
    "PolicySpec",
    "estimate_hitting_laplace",
    "estimate_policy_value",
    "estimate_policy_values",
]
