"""Input checks shared by the estimator, the CLI and the harness."""

from __future__ import annotations

from os import PathLike

import numpy as np

from .dataset import CalibrationDataset, check_compatible, dataset_from_dict, load_dataset
from .kinematics import KinematicChain, check_configs, check_theta

__all__ = ["check_chain", "check_configs", "check_dataset", "check_mask", "check_theta"]


def check_chain(chain) -> KinematicChain:
    if not isinstance(chain, KinematicChain):
        raise TypeError(f"expected a KinematicChain, got {type(chain).__name__}")
    return chain


def check_dataset(X, chain: KinematicChain = None) -> CalibrationDataset:
    """Accept a dataset, its dict form, or a path to a dataset file."""
    if isinstance(X, (str, PathLike)):
        X = load_dataset(X)
    elif isinstance(X, dict):
        X = dataset_from_dict(X)
    if not isinstance(X, CalibrationDataset):
        raise TypeError(f"expected a CalibrationDataset, got {type(X).__name__}")
    if chain is not None:
        check_compatible(X, chain)
    return X


def check_mask(chain: KinematicChain, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (chain.n_params,):
        raise ValueError(f"mask must have length {chain.n_params}, got {mask.shape}")
    return mask
