from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide defaults read from `BLMM_*` environment variables, command line flags override them.
    """

    model_config = SettingsConfigDict(env_prefix="BLMM_")

    app_name: str = "blmm-stats"

    threads: int = Field(1, ge=1)
    log_level: str = "INFO"
    metrics_file: Optional[str] = None
