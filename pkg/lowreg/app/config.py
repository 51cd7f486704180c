"""
Application configuration
"""
from pydantic import Field
from pydantic_settings import BaseSettings
from pathlib import Path

# Get the project root directory
BASE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """Toolkit settings"""

    # Parallelism for sweeps over test families and epsilon lists
    threads: int = Field(default=1, ge=1)

    # Application
    environment: str = "development"
    log_level: str = "INFO"
    output_dir: str = "results"

    # Numerics
    fd_order: int = 2
    cg_rtol: float = 1e-10
    defect_safety: float = 20.0

    class Config:
        env_prefix = "LOWREG_"
        env_file = BASE_DIR / ".env"
        env_file_encoding = 'utf-8'
        case_sensitive = False


# Create settings instance
settings = Settings()
