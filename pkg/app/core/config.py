"""Application configuration management."""
import os
from typing import Optional
from pydantic_settings import BaseSettings
from pydantic import Field, model_validator


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables."""

    # Logging
    log_level: str = Field(default="INFO", alias="PUCCILAB_LOG_LEVEL")
    json_logs: bool = Field(default=True, alias="PUCCILAB_JSON_LOGS")

    # Execution
    workers: int = Field(default=os.cpu_count() or 1, alias="PUCCILAB_WORKERS")
    output_dir: str = Field(default="runs", alias="PUCCILAB_OUTPUT_DIR")

    # Geometry and sampling
    mu_quadrature_points: int = Field(default=64, alias="PUCCILAB_MU_QUADRATURE_POINTS")
    normalization_tolerance: float = Field(default=1e-6, alias="PUCCILAB_NORMALIZATION_TOLERANCE")
    min_acceptance_rate: float = Field(default=1e-6, alias="PUCCILAB_MIN_ACCEPTANCE_RATE")

    # Partition and transport map
    histogram_side_factor: Optional[float] = Field(default=None, alias="PUCCILAB_HISTOGRAM_SIDE_FACTOR")
    partition_c0: float = Field(default=1.0, alias="PUCCILAB_PARTITION_C0")
    tiny_cell_fraction: float = Field(default=1e-3, alias="PUCCILAB_TINY_CELL_FRACTION")
    cell_subgrid_points: int = Field(default=8, alias="PUCCILAB_CELL_SUBGRID_POINTS")

    # Operators
    epsilon_warning: float = Field(default=0.5, alias="PUCCILAB_EPSILON_WARNING")
    nonlocal_directions: int = Field(default=32, alias="PUCCILAB_NONLOCAL_DIRECTIONS")
    nonlocal_radial_levels: int = Field(default=8, alias="PUCCILAB_NONLOCAL_RADIAL_LEVELS")
    nonlocal_h_directions: int = Field(default=16, alias="PUCCILAB_NONLOCAL_H_DIRECTIONS")
    nonlocal_h_levels: int = Field(default=2, alias="PUCCILAB_NONLOCAL_H_LEVELS")
    nonlocal_ball_resolution: int = Field(default=16, alias="PUCCILAB_NONLOCAL_BALL_RESOLUTION")

    # Experiments
    holder_subsample_limit: int = Field(default=20000, alias="PUCCILAB_HOLDER_SUBSAMPLE_LIMIT")
    baseline_file: str = Field(default="baselines.json", alias="PUCCILAB_BASELINE_FILE")
    baseline_slack: float = Field(default=1.5, alias="PUCCILAB_BASELINE_SLACK")
    fit_r2_threshold: float = Field(default=0.8, alias="PUCCILAB_FIT_R2_THRESHOLD")

    @model_validator(mode='before')
    def parse_workers(cls, values):
        """
        Treats an empty or non-positive PUCCILAB_WORKERS as "use all cores".
        """
        workers = values.get('PUCCILAB_WORKERS', values.get('workers'))
        if isinstance(workers, str) and workers.strip() == "":
            workers = None
        if workers is not None and int(workers) <= 0:
            workers = None
        if workers is None:
            values.pop('PUCCILAB_WORKERS', None)
            values.pop('workers', None)
        return values

    class Config:
        """Pydantic configuration."""
        env_file = ".env"
        case_sensitive = False
        populate_by_name = True
        extra = "ignore"


# Global settings instance
settings = Settings()
