"""
Run configuration

A run is described by one JSON document. Sections left out fall back to
the environment settings; CLI flags are applied last.
"""
import copy
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import Settings, get_settings
from solvers.double_stopping import DiscountSpec
from tools.errors import InputError
from tools.io import read_json
from tools.special_fn import ModelParams, QuadratureConfig
from verification.mc_oracle import McConfig, PolicySpec

logger = logging.getLogger(__name__)

PRESETS: Dict[str, ModelParams] = {
    "gld_gdx": ModelParams(theta=0.5388, mu=16.6677, sigma=0.1599),
    "gld_slv": ModelParams(theta=0.5680, mu=33.4593, sigma=0.1384),
}
DEFAULT_PRESET = "gld_gdx"
DEFAULT_DISCOUNT = {"r": 0.05, "r_hat": 0.05, "c": 0.05, "c_hat": 0.05}


class RunConfig(BaseModel):
    """Everything one CLI run needs"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelParams
    discount: DiscountSpec
    stop_loss: Optional[float] = None
    relative_ell: Optional[float] = Field(default=None, gt=0)
    quadrature: QuadratureConfig = QuadratureConfig()
    mc: McConfig = McConfig()
    output_dir: str = "output"

    l_grid: Optional[List[float]] = None
    sweep_thetas: Optional[List[float]] = None
    b_grid: Optional[List[float]] = None
    cash_A: float = Field(default=1.0, gt=0)
    relative_grid_points: int = Field(default=1001, ge=3)
    value_grid_points: int = Field(default=2001, ge=7)
    policy: Optional[PolicySpec] = None
    x0: Optional[float] = None
    sample_paths: int = Field(default=5, ge=0)

    @field_validator("model", mode="before")
    @classmethod
    def _preset(cls, value: Any) -> Any:
        if isinstance(value, str):
            if value not in PRESETS:
                raise ValueError(f"unknown model preset {value!r}; known: {sorted(PRESETS)}")
            return PRESETS[value]
        return value

    @model_validator(mode="after")
    def _one_stop_rule(self) -> "RunConfig":
        if self.stop_loss is not None and self.relative_ell is not None:
            raise ValueError("set at most one of stop_loss and relative_ell")
        return self

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def echo(self) -> Dict[str, Any]:
        """The document that reproduces this run when loaded again"""
        return self.model_dump(mode="json")


def default_document(settings: Optional[Settings] = None) -> Dict[str, Any]:
    settings = settings or get_settings()
    return {
        "model": PRESETS[DEFAULT_PRESET].model_dump(),
        "discount": dict(DEFAULT_DISCOUNT),
        "quadrature": {"rel_tol": settings.quad_rel_tol, "abs_tol": settings.quad_abs_tol},
        "mc": {"seed": settings.mc_seed, "n_paths": settings.mc_n_paths, "workers": settings.workers},
        "output_dir": settings.output_dir,
    }


def merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; update wins, None values in update are skipped"""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    settings: Optional[Settings] = None,
) -> RunConfig:
    """Defaults, then the JSON file, then overrides.

    A file written by `solve` carries the run under a top-level "config"
    key; it is accepted as a config file directly.
    """
    document = default_document(settings)
    if path is not None:
        loaded = read_json(path)
        if isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]
        if isinstance(loaded.get("model"), str):
            # a preset name replaces the default model wholesale
            document["model"] = loaded.pop("model")
        document = merge(document, loaded)
        logger.info(f"loaded run config from {path}")
    if overrides:
        document = merge(document, overrides)
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise InputError(f"invalid run configuration: {e}") from e
