"""Interval reachability and certified robustness for implicit neural networks."""

from .certification import certified_accuracy, certify, lipschitz_upper_bound, margin_lower_bound
from .estimators import ImplicitNetworkClassifier, IntervalReachTransformer
from .exceptions import (
    InnReachError,
    InputBoxInvalid,
    MaxIterExceeded,
    ModelFormatError,
    NoCertificate,
    SpectralRadiusTooLarge,
    TrainingDiverged,
)
from .fixed_point import SolverConfig, WellposednessCertificate, wellposedness_certificate
from .networks import (
    Activation,
    FeedforwardNetwork,
    ImplicitNetwork,
    WeightTiedNetwork,
    ffnn_to_inn,
    load_model,
    save_model,
)
from .reachability import IntervalVector, reach, reach_ibp_ffnn, reach_ibp_weight_tied, reach_inn
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Activation", "FeedforwardNetwork", "ImplicitNetwork", "WeightTiedNetwork",
    "ffnn_to_inn", "load_model", "save_model",
    "SolverConfig", "WellposednessCertificate", "wellposedness_certificate",
    "IntervalVector", "reach", "reach_inn", "reach_ibp_ffnn", "reach_ibp_weight_tied",
    "certify", "certified_accuracy", "margin_lower_bound", "lipschitz_upper_bound",
    "TrainConfig", "train", "ImplicitNetworkClassifier", "IntervalReachTransformer",
    "InnReachError", "InputBoxInvalid", "MaxIterExceeded", "ModelFormatError",
    "NoCertificate", "SpectralRadiusTooLarge", "TrainingDiverged",
]
