"""Correlation-aware learning on multivariate time series with missing values."""
from .cme import DistanceSpec, cme_pipeline, cme_sweep, pearson_cme
from .data import Dataset, TimeSeriesSample
from .dtw import dtw, pdtw
from .exceptions import InputError, NumericalError
from .ot import SinkhornConfig, pot_distance, sinkhorn
from .training import TrainConfig, cross_validate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DistanceSpec", "InputError", "NumericalError", "SinkhornConfig", "TimeSeriesSample",
    "TrainConfig", "cme_pipeline", "cme_sweep", "cross_validate", "dtw", "evaluate", "pdtw",
    "pearson_cme", "pot_distance", "sinkhorn", "train", "__version__",
]
