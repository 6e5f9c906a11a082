"""scikit-learn style front end for the calibration routine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calibration import (
    CalibrationOptions,
    mean_absolute_error,
    mean_distortion_error,
    optimize,
)
from .kinematics import KinematicChain, bcp_positions, pack_params, unpack_params
from .validation import check_chain, check_configs, check_dataset, check_theta


class KinematicCalibrator(BaseEstimator):
    """Identify the geometric parameters of a serial arm from socket data.

    Parameters
    ----------
    chain : KinematicChain
        Nominal model. Its geometry is the optimizer start and the anchor of
        the regularizer unless ``theta_nominal`` is given.
    theta_nominal : array of shape (6 * chain.m,), optional
    lam : float, default=1e-4
        Weight of ``|theta - theta_nominal|^2``.
    rel_tol : float, default=1e-8
        Stop when the relative change of the objective falls below this.
    max_iter : int, default=500
    fixed_parameter_mask : boolean array, optional
        True entries are kept at their nominal value.
    param_weights : array, optional
        Per-parameter weights of the regularizer (default all ones).

    Attributes
    ----------
    theta_ : ndarray
        Calibrated parameter vector.
    chain_ : KinematicChain
        ``chain`` with the calibrated geometry.
    result_ : CalibrationResult
    n_iter_ : int
    """

    def __init__(self, chain: KinematicChain = None, theta_nominal=None, lam=1e-4, rel_tol=1e-8,
                 max_iter=500, fixed_parameter_mask=None, param_weights=None):
        self.chain = chain
        self.theta_nominal = theta_nominal
        self.lam = lam
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.fixed_parameter_mask = fixed_parameter_mask
        self.param_weights = param_weights

    def _nominal(self):
        chain = check_chain(self.chain)
        if self.theta_nominal is None:
            return chain, pack_params(chain)
        return chain, check_theta(chain, self.theta_nominal)

    def fit(self, X, y=None):
        """Calibrate on ``X``, a :class:`CalibrationDataset` or a path to one.

        ``y`` is ignored; the only ground truth is the socket distance stored
        in the dataset.
        """
        chain, theta_n = self._nominal()
        dataset = check_dataset(X, chain)
        options = CalibrationOptions(
            lam=self.lam,
            rel_tol=self.rel_tol,
            max_iterations=self.max_iter,
            fixed_parameter_mask=self.fixed_parameter_mask,
            param_weights=self.param_weights,
        )
        self.result_ = optimize(chain, theta_n, dataset, options)
        self.theta_ = self.result_.theta_star
        self.chain_ = unpack_params(chain, self.theta_)
        self.n_iter_ = self.result_.iterations
        self.converged_ = self.result_.converged
        return self

    def predict(self, q):
        """Ball-center positions for joint configurations ``q`` of shape (N, n)."""
        check_is_fitted(self, "theta_")
        return bcp_positions(self.chain, self.theta_, check_configs(self.chain, q))

    def mean_absolute_error(self, X) -> float:
        check_is_fitted(self, "theta_")
        return mean_absolute_error(self.chain, self.theta_, check_dataset(X, self.chain))

    def distortion_error(self, X) -> float:
        check_is_fitted(self, "theta_")
        return mean_distortion_error(self.chain, self.theta_, check_dataset(X, self.chain))

    def score(self, X, y=None) -> float:
        """Negative consistency error in meters (greater is better)."""
        return -self.mean_absolute_error(X)
