"""Runtime settings, overridable through GASNET_* environment variables or a .env file."""

from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings

from gasnet.paths import RESULTS_ROOT


class Settings(BaseSettings):
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    dt_min: float = 1e-6
    cfl_safety: float = 0.9
    jacobian_step: float = 1e-7
    results_dir: Path = RESULTS_ROOT
    log_level: str = "INFO"

    model_config = {"env_prefix": "GASNET_", "extra": "ignore"}


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
