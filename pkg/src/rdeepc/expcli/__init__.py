"""Batch experiment front end (``rdeepc`` command)."""

from rdeepc.expcli.config import ConfigError, ExperimentConfig, load_config, parse_config
from rdeepc.expcli.main import main
from rdeepc.expcli.reporting import read_csv, write_csv

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "main", "read_csv", "write_csv"]
