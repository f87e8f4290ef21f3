"""
Configuration management for coalgebra audits.
"""
from pathlib import Path
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings(BaseSettings):
    """Numerical and runtime settings, overridable through COALGEBRA_* variables."""

    model_config = SettingsConfigDict(
        env_prefix="COALGEBRA_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = Field("INFO")
    log_format: str = Field("console")

    # Sampling
    seed: int = Field(20240101)
    samples: int = Field(100, ge=1)
    tolerance: float = Field(1e-9, gt=0)
    rank_cutoff: float = Field(1e-8, gt=0)
    rank_clouds: int = Field(5, ge=1)
    fd_step: float = Field(1e-4, gt=0)

    # Integrator
    fp_tol: float = Field(1e-12, gt=0)
    max_iter: int = Field(50, ge=1)
    singular_margin: float = Field(1e-6, ge=0)

    # Execution
    jobs: int = Field(1, ge=1)
    output_dir: Path = Field(Path("output"))


# Global settings instance
settings = Settings()
