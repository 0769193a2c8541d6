"""Prototype-based joint embedding classifiers.

The network scores a sample by its latent distances to one example of each
class. Sampling those examples gives prototype explanations, and class
centroids give a single-pass out-of-distribution score.
"""
from .data import Dataset, generate_two_moons, load_idx, make_training_batch, normalize
from .estimators import PBJClassifier, SoftmaxClassifier
from .metrics import accuracy, auroc
from .model import BackboneConfig, BaselineModel, PBJModel, class_scores, distance_array, init_W

__all__ = [
    "BackboneConfig",
    "BaselineModel",
    "Dataset",
    "PBJClassifier",
    "PBJModel",
    "SoftmaxClassifier",
    "accuracy",
    "auroc",
    "class_scores",
    "distance_array",
    "generate_two_moons",
    "init_W",
    "load_idx",
    "make_training_batch",
    "normalize",
]

__version__ = "0.1.0"
