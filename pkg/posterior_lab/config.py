"""Configuration via environment and pydantic-settings."""

from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings. Load from .env and environment."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="POSTERIOR_LAB_",
        case_sensitive=False,
    )

    # Outputs
    output_dir: Path = Field(
        default=Path("runs"),
        description="Default directory for run outputs when neither config nor flags set one",
    )

    # Batch execution
    jobs: int = Field(
        default=1,
        ge=1,
        le=64,
        description="Worker threads for trajectory chunks / windows / conditions (1 = sequential)",
    )
    batch_chunk_size: int = Field(
        default=2048,
        ge=1,
        le=1_000_000,
        description="Trajectories integrated together in one vectorized chunk",
    )

    # WHAM
    wham_tol: float = Field(default=1e-8, gt=0.0, description="Stop when max |delta f_k| < tol")
    wham_max_iter: int = Field(default=100_000, ge=1, description="Self-consistent iteration cap")

    @property
    def output_path(self) -> Path:
        """Absolute output directory."""
        if self.output_dir.is_absolute():
            return self.output_dir
        return Path.cwd() / self.output_dir


def get_settings() -> Settings:
    """Return settings (fresh instance; tests may set env vars before calling)."""
    return Settings()
