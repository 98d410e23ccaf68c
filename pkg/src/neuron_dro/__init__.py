"""Distributionally robust learning of a single neuron under chi-squared ambiguity."""

from .activations import Activation, leaky_relu, relu, softplus
from .datagen import (Dataset, GeneratorConfig, TruncationParams, compute_truncation_level,
                      generate, make_dataset, measure_bounds, truncate_labels)
from .driver import AlgoConfig, calibrate, make_reference, run, zero_test
from .empirical import RegularizedObjective

__all__ = [
    "Activation", "relu", "leaky_relu", "softplus",
    "Dataset", "GeneratorConfig", "TruncationParams", "compute_truncation_level",
    "generate", "make_dataset", "measure_bounds", "truncate_labels",
    "AlgoConfig", "calibrate", "make_reference", "run", "zero_test",
    "RegularizedObjective",
]

__version__ = "0.1.0"
