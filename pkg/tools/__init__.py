"""Tools module"""
from .errors import (
    AlignmentError,
    CalibrationError,
    ConsistencyError,
    DegenerateLikelihoodError,
    InputError,
    OUTimingError,
    OutOfRangeError,
    QuadratureError,
    ResolutionError,
    SolverError,
)
from .roots import expand_bracket, find_root, sign_changes
from .special_fn import ModelParams, QuadratureConfig, Resolvent, make_resolvent
from .majorant import discrete_concave_majorant
from .io import read_json, read_table, write_json, write_table

__all__ = [
    "AlignmentError",
    "CalibrationError",
    "ConsistencyError",
    "DegenerateLikelihoodError",
    "InputError",
    "OUTimingError",
    "OutOfRangeError",
    "QuadratureError",
    "ResolutionError",
    "SolverError",
    "expand_bracket",
    "find_root",
    "sign_changes",
    "ModelParams",
    "QuadratureConfig",
    "Resolvent",
    "make_resolvent",
    "discrete_concave_majorant",
    "read_json",
    "read_table",
    "write_json",
    "write_table",
]
