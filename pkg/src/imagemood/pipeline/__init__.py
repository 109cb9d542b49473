"""Manifest-driven orchestration: ingest, tagging, extraction, clustering,
correlation and prediction runs, plus the ``imagemood`` command line."""

from .config import RunConfig, load_config
from .manifest import Dataset, ingest
from .runner import run_cluster, run_correlate, run_extract, run_ingest, run_predict, run_report

__all__ = [
    "RunConfig", "load_config", "Dataset", "ingest", "run_ingest", "run_extract", "run_cluster",
    "run_correlate", "run_predict", "run_report",
]
