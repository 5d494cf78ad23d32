"""Operator-learning WGANs for Bayesian inverse problems in a latent space."""

from .config import ExperimentConfig
from .generators import Generator, build_generator
from .inference import map_estimate, mh_sample, posterior_stats, push_forward
from .io import DatasetBundle
from .wgan import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "ExperimentConfig",
    "Generator",
    "TrainConfig",
    "build_generator",
    "map_estimate",
    "mh_sample",
    "posterior_stats",
    "push_forward",
    "train",
]
