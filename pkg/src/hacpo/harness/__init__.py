"""Configuration, orchestration, verification dispatch and reporting."""

from .config import PRESETS, dump_config, load_config, parse_config, to_document
from .matrix import ExperimentMatrix, run_matrix
from .report import NoDataError, build_report, load_runs

__all__ = ["PRESETS", "dump_config", "load_config", "parse_config", "to_document", "ExperimentMatrix",
           "run_matrix", "NoDataError", "build_report", "load_runs"]
