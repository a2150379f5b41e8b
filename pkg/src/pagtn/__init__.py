"""Path-augmented graph transformer networks for molecular graphs."""

from .autodiff import Adam, Tape, Tensor
from .model import PagtnConfig, featurize, forward, init_params, predict
from .molgraph import all_pairs_shortest, path_features, perceive_rings
from .smiles import MolGraph, SmilesError, node_features, parse_smiles

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "MolGraph",
    "PagtnConfig",
    "SmilesError",
    "Tape",
    "Tensor",
    "all_pairs_shortest",
    "featurize",
    "forward",
    "init_params",
    "node_features",
    "parse_smiles",
    "path_features",
    "perceive_rings",
    "predict",
]
