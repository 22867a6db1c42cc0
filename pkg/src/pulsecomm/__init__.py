"""Discrete-event model of an FPGA-to-HICANN pulse communication path."""

from .errors import PulseCommError
from .simcore import ExperimentPlan, HardwareConfig, RunResult, run

__version__ = "0.1.0"

__all__ = ["ExperimentPlan", "HardwareConfig", "PulseCommError", "RunResult", "run", "__version__"]
