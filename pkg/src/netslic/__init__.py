"""Joint transmission-line parameter estimation and instrument-transformer
calibration from synchrophasor data on a connected tree of PMU-monitored
lines anchored at one high-accuracy metering pair."""

from .exceptions import SlicError
from .model import (BranchMeasurements, BusCurrentSet, ConnectedTree,
                    CorrectionFactors, LineParams, NetworkSpec, PsiVector)
from .networks import chain_network, desk_network
from .pipeline import SlicEstimate, calibrate_dataset, run_pipeline
from .solver import SolverConfig
from .synthgen import LoadScenario, NoiseConfig, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "SlicError", "BranchMeasurements", "BusCurrentSet", "ConnectedTree",
    "CorrectionFactors", "LineParams", "NetworkSpec", "PsiVector",
    "chain_network", "desk_network", "SlicEstimate", "calibrate_dataset",
    "run_pipeline", "SolverConfig", "LoadScenario", "NoiseConfig",
    "generate_dataset", "__version__",
]
