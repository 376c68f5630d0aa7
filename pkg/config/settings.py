"""
Environment settings
"""
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # App settings
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    output_dir: str = Field(default="output", alias="OUTPUT_DIR")
    workers: int = Field(default=1, ge=1, alias="WORKERS")

    # Quadrature
    quad_rel_tol: float = Field(default=1e-8, gt=0, alias="QUAD_REL_TOL")
    quad_abs_tol: float = Field(default=1e-10, gt=0, alias="QUAD_ABS_TOL")

    # Monte Carlo
    mc_seed: int = Field(default=20150601, ge=0, alias="MC_SEED")
    mc_n_paths: int = Field(default=100_000, ge=0, alias="MC_N_PATHS")

    # Data
    default_dt: float = Field(default=1.0 / 252, gt=0, alias="DEFAULT_DT")


# Singleton
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings
