"""Exact-majority population protocols and a Left balls-into-bins workbench."""

from .sim import PairMode, PhaseRecord, Population, RunResult, parallel_time, run, run_trial, sample_pair

__all__ = ["PairMode", "PhaseRecord", "Population", "RunResult", "parallel_time", "run",
           "run_trial", "sample_pair"]
__version__ = "0.1.0"
