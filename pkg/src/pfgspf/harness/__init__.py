"""Campaign configuration, execution and reporting."""

from .config import Campaign, Cell, load_config, parse_config
from .report import load_results
from .runner import run_campaign

__all__ = ["Campaign", "Cell", "load_config", "load_results", "parse_config", "run_campaign"]
