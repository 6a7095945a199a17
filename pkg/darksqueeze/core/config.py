from typing import Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    threads: Optional[int] = None  # DARKSQUEEZE_THREADS caps sweep workers
    max_dimension: int = 50_000
    truncation_tol: float = 1e-6
    log_level: str = "INFO"
    api_host: str = "127.0.0.1"
    api_port: int = 8000

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="DARKSQUEEZE_",
        extra="ignore",
    )


try:
    settings = Settings()
except ValidationError as e:
    print(f"Error loading settings: {e}")
    settings = Settings.model_construct()
