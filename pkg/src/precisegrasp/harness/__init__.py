"""Configuration, pipeline steps, experiments, and the command line."""

from .config import Config, default_config_text
from .metrics import rmse_metrics

__all__ = ["Config", "default_config_text", "rmse_metrics"]
