"""Experiment harness: configs, ablation grid, runs, sweeps, reports and sample export."""

from .config import parse_config
from .runner import ABLATIONS, ExperimentSpec, ablation_components, run, spec_from_config, sweep_sizes

__all__ = ["ABLATIONS", "ExperimentSpec", "ablation_components", "parse_config", "run",
           "spec_from_config", "sweep_sizes"]
