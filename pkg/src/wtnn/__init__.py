"""Weibull survival networks with survival-monotone covariates, trained on censored fleet data."""
from .network import ArchSpec, CovariatePartition, build_arch, forward, forward_batch, init_params, param_count
from .trainer import TrainConfig, fit, time_split
from .weibull import BETA0, WeibullParams

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "BETA0", "CovariatePartition", "TrainConfig", "WeibullParams", "build_arch", "fit", "forward",
    "forward_batch", "init_params", "param_count", "time_split",
]
