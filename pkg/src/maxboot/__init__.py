"""Bootstrap inference for high-dimensional max statistics.

Wild, empirical and double wild bootstrap tests of T_n = max_j S_{n,j},
second-order coverage expansions predicting their rejection rates, and a
deterministic parallel Monte Carlo harness.
"""

from __future__ import annotations

from .bootstrap import BootstrapConfig, ReplicateSet, bootstrap_quantile, double_wild_test, t_stat, wild_test
from .edgeworth import CoveragePrediction, ExpansionInputs, predicted_rejection
from .errors import CapabilityError, CostRefusal, MaxBootError, ReportIOError, ValidationError
from .harness import ExperimentConfig, RejectionReport, run_experiment
from .model import CovarianceSpec, DataSet, ThirdMomentSummary
from .rng import Purpose, StreamKey, WeightLaw

__version__ = "0.1.0"

__all__ = [
    "BootstrapConfig",
    "CapabilityError",
    "CostRefusal",
    "CovarianceSpec",
    "CoveragePrediction",
    "DataSet",
    "ExperimentConfig",
    "ExpansionInputs",
    "MaxBootError",
    "Purpose",
    "RejectionReport",
    "ReplicateSet",
    "ReportIOError",
    "StreamKey",
    "ThirdMomentSummary",
    "ValidationError",
    "WeightLaw",
    "bootstrap_quantile",
    "double_wild_test",
    "predicted_rejection",
    "run_experiment",
    "t_stat",
    "wild_test",
]
