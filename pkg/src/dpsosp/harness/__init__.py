"""Configuration, trace persistence, experiment drivers and the command line."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import SweepTable, clip_equivalence, sweep_epsilon
from .traceio import read_trace, traces_equal, write_trace
