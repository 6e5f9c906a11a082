"""Socket-consistency calibration: cost, gradient, optimizer and metrics.

For each tool placement the predicted ball centers of socket 0 and socket 1
are reduced to their means and scatter. The cost per placement is

    inconsistency = (N0 tr S0 + N1 tr S1) / (N0 + N1)
    distortion    = (|mu1 - mu0| - d)^2

and the objective sums both over placements and adds a single
``lam * |theta - theta_nominal|^2`` term. Scatter uses the population
(1/N) normalization.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .dataset import CalibrationDataset, SocketSet, ToolPlacement
from .exceptions import DatasetSchemaError, DegenerateGradientError, NonFiniteCostError
from .ik import sample_within_limits, solve_ik_batch, within_limits
from .kinematics import (
    KinematicChain,
    _param_jacobians,
    _sweep,
    bcp_positions,
    check_configs,
    check_theta,
)

log = logging.getLogger(__name__)

DEGENERATE_SEPARATION = 1e-12
TRACE_HEADER = ("iteration", "inconsistency", "distortion", "regularization", "total")


@dataclass(frozen=True)
class SocketStatistics:
    mean: np.ndarray
    covariance_trace: float
    count: int


@dataclass(frozen=True)
class CostBreakdown:
    """Components of the objective.

    ``regularization`` is the weighted contribution ``lam * |theta - theta_n|^2``,
    so ``total == inconsistency + distortion + regularization``.
    """

    inconsistency: float
    distortion: float
    regularization: float
    total: float


@dataclass(frozen=True)
class CalibrationOptions:
    lam: float = 1e-4
    rel_tol: float = 1e-8
    max_iterations: int = 500
    fixed_parameter_mask: Optional[np.ndarray] = None
    param_weights: Optional[np.ndarray] = None
    # objective value treated as zero: (1e-10 m)^2, the IK tolerance used for synthetic data
    abs_tol: float = 1e-20

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not self.abs_tol >= 0:
            raise ValueError(f"abs_tol must be >= 0, got {self.abs_tol}")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class CalibrationResult:
    theta_star: np.ndarray
    trace: List[CostBreakdown]
    mae_before: float
    mae_after: float
    distortion_before: float
    distortion_after: float
    converged: bool
    iterations: int
    message: str = ""

    @property
    def removed_error(self) -> float:
        return removed_error_percent(self.mae_before, self.mae_after)

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(trace: Sequence[CostBreakdown]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for k, c in enumerate(trace):
        writer.writerow([k] + [repr(float(v)) for v in
                               (c.inconsistency, c.distortion, c.regularization, c.total)])
    return buf.getvalue()


# --- batched evaluation over a dataset ------------------------------------------


class _Problem:
    """All configurations of a dataset stacked into one FK batch."""

    def __init__(self, chain: KinematicChain, dataset: CalibrationDataset):
        if not isinstance(dataset, CalibrationDataset) or not dataset.placements:
            raise DatasetSchemaError("dataset has no placements")
        if dataset.joint_count != chain.n:
            raise DatasetSchemaError(
                f"dataset has {dataset.joint_count} joints, chain has {chain.n}"
            )
        self.chain = chain
        blocks = []
        self.slices = []
        self.distances = []
        start = 0
        for placement in dataset.placements:
            pair = []
            for sock in placement.sockets:
                blocks.append(sock.configurations)
                pair.append(slice(start, start + len(sock)))
                start += len(sock)
            self.slices.append(tuple(pair))
            self.distances.append(placement.distance_m)
        self.q = np.concatenate(blocks)

    def evaluate(self, theta, theta_n, lam, weights=None, gradient=False):
        theta = check_theta(self.chain, theta)
        sweep = _sweep(self.chain, theta, self.q)
        x = sweep.tip
        jac = _param_jacobians(self.chain, theta, sweep) if gradient else None
        delta = theta - theta_n
        w = np.ones_like(delta) if weights is None else weights
        inconsistency = 0.0
        distortion = 0.0
        grad = np.zeros_like(theta) if gradient else None
        for (s0, s1), d in zip(self.slices, self.distances):
            dev0 = x[s0] - x[s0].mean(axis=0)
            dev1 = x[s1] - x[s1].mean(axis=0)
            total = dev0.shape[0] + dev1.shape[0]
            inconsistency += (np.sum(dev0 * dev0) + np.sum(dev1 * dev1)) / total
            sep = x[s1].mean(axis=0) - x[s0].mean(axis=0)
            dist = math.sqrt(float(sep @ sep))
            distortion += (dist - d) ** 2
            if gradient:
                # mean deviations sum to zero, so the mean's own derivative drops out
                grad += 2.0 / total * (
                    np.einsum("ni,nik->k", dev0, jac[s0]) + np.einsum("ni,nik->k", dev1, jac[s1])
                )
                if dist < DEGENERATE_SEPARATION:
                    raise DegenerateGradientError(
                        "socket means coincide; distance gradient is undefined"
                    )
                d_sep = jac[s1].mean(axis=0) - jac[s0].mean(axis=0)
                grad += 2.0 * (dist - d) / dist * (sep @ d_sep)
        reg = lam * float(np.sum(w * delta * delta))
        breakdown = CostBreakdown(
            float(inconsistency), float(distortion), reg, float(inconsistency + distortion + reg)
        )
        if gradient:
            grad += 2.0 * lam * w * delta
        return breakdown, grad


def socket_statistics(chain: KinematicChain, theta, socket_set) -> SocketStatistics:
    q = socket_set.configurations if isinstance(socket_set, SocketSet) else socket_set
    q = check_configs(chain, q)
    if q.shape[0] == 0:
        raise DatasetSchemaError("socket set is empty")
    x = bcp_positions(chain, theta, q)
    mu = x.mean(axis=0)
    dev = x - mu
    return SocketStatistics(mu, float(np.sum(dev * dev) / x.shape[0]), x.shape[0])


def _weights(chain, weights):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (chain.n_params,) or np.any(w < 0):
        raise ValueError(f"param_weights must be a non-negative vector of length {chain.n_params}")
    return w


def cost(chain: KinematicChain, theta, theta_n, dataset: CalibrationDataset, lam=1e-4,
         weights=None) -> CostBreakdown:
    theta_n = check_theta(chain, theta_n)
    return _Problem(chain, dataset).evaluate(theta, theta_n, lam, _weights(chain, weights))[0]


def cost_gradient(chain: KinematicChain, theta, theta_n, dataset: CalibrationDataset,
                  lam=1e-4, weights=None) -> np.ndarray:
    """Exact gradient of :func:`cost` with respect to ``theta``."""
    theta_n = check_theta(chain, theta_n)
    problem = _Problem(chain, dataset)
    return problem.evaluate(theta, theta_n, lam, _weights(chain, weights), gradient=True)[1]


# --- metrics ---------------------------------------------------------------------


def _spread(x):
    return np.linalg.norm(x - x.mean(axis=0), axis=1).sum()


def placement_mae(chain: KinematicChain, theta, placement: ToolPlacement) -> float:
    """Mean distance of predicted ball centers from their socket mean."""
    x0 = bcp_positions(chain, theta, placement.socket0.configurations)
    x1 = bcp_positions(chain, theta, placement.socket1.configurations)
    return float((_spread(x0) + _spread(x1)) / (x0.shape[0] + x1.shape[0]))


def mean_absolute_error(chain: KinematicChain, theta, dataset: CalibrationDataset) -> float:
    """Consistency spread in meters, averaged over placements."""
    if not dataset.placements:
        raise DatasetSchemaError("dataset has no placements")
    return float(np.mean([placement_mae(chain, theta, p) for p in dataset.placements]))


def distortion_error(chain: KinematicChain, theta, placement: ToolPlacement) -> float:
    """``| |mu1 - mu0| - d |`` in meters."""
    mu0 = bcp_positions(chain, theta, placement.socket0.configurations).mean(axis=0)
    mu1 = bcp_positions(chain, theta, placement.socket1.configurations).mean(axis=0)
    return abs(float(np.linalg.norm(mu1 - mu0)) - placement.distance_m)


def mean_distortion_error(chain, theta, dataset: CalibrationDataset) -> float:
    return float(np.mean([distortion_error(chain, theta, p) for p in dataset.placements]))


def removed_error_percent(before: float, after: float) -> float:
    if not before > 0:
        raise ValueError(f"error before calibration must be positive, got {before}")
    return 100.0 * (1.0 - after / before)


# --- optimizer ---------------------------------------------------------------------


def _check_mask(chain, mask):
    if mask is None:
        return np.ones(chain.n_params, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (chain.n_params,):
        raise ValueError(f"fixed_parameter_mask must have length {chain.n_params}")
    return ~mask


def optimize(chain: KinematicChain, theta_n, dataset: CalibrationDataset,
             options: CalibrationOptions = None) -> CalibrationResult:
    """BFGS with Armijo backtracking, started at the nominal parameters.

    Stops when the relative change of the objective between accepted iterates
    drops below ``options.rel_tol``, when the objective itself falls to
    ``options.abs_tol``, or after ``options.max_iterations``.
    """
    options = options or CalibrationOptions()
    theta_n = check_theta(chain, theta_n).copy()
    problem = _Problem(chain, dataset)
    weights = _weights(chain, options.param_weights)
    free = _check_mask(chain, options.fixed_parameter_mask)
    lam = options.lam

    def evaluate(theta):
        c, g = problem.evaluate(theta, theta_n, lam, weights, gradient=True)
        if not np.isfinite(c.total) or not np.all(np.isfinite(g)):
            bad = np.flatnonzero(~np.isfinite(theta) | ~np.isfinite(g))
            span = f"{bad.min()}..{bad.max()}" if bad.size else "unknown"
            raise NonFiniteCostError(f"non-finite cost or gradient (parameter indices {span})")
        return c, g[free]

    theta = theta_n.copy()
    current, grad = evaluate(theta)
    trace = [current]
    hess_inv = None
    converged = False
    message = "maximum iterations reached"
    iterations = 0

    while iterations < options.max_iterations:
        if not np.any(grad):
            converged, message = True, "zero gradient"
            break
        if current.total <= options.abs_tol:
            converged, message = True, "objective below absolute tolerance"
            break
        if hess_inv is None:
            # no curvature yet: short steepest-descent probe
            direction = -grad * min(1.0, 1e-2 / np.linalg.norm(grad))
        else:
            direction = -hess_inv @ grad
        slope = float(grad @ direction)

        step = 1.0
        accepted = None
        for _ in range(60):
            trial = theta.copy()
            trial[free] += step * direction
            try:
                cand, cand_grad = evaluate(trial)
            except NonFiniteCostError:
                cand = None
            if cand is not None and cand.total <= current.total + 1e-4 * step * slope:
                accepted = (trial, cand, cand_grad)
                break
            step *= 0.5
        if accepted is None:
            if hess_inv is not None:
                hess_inv = None
                continue
            converged, message = True, "no further decrease at floating-point resolution"
            break

        trial, cand, cand_grad = accepted
        s = trial[free] - theta[free]
        y = cand_grad - grad
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if hess_inv is None:
                hess_inv = np.eye(grad.size) * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = hess_inv @ y
            hess_inv = (
                hess_inv
                + (rho * rho * float(y @ hy) + rho) * np.outer(s, s)
                - rho * (np.outer(hy, s) + np.outer(s, hy))
            )
        prev = current
        theta, current, grad = trial, cand, cand_grad
        trace.append(current)
        iterations += 1
        rel = abs(current.total - prev.total) / max(prev.total, 1e-300)
        log.debug("iter %d total %.6e rel %.3e", iterations, current.total, rel)
        if rel < options.rel_tol:
            converged, message = True, "relative objective change below tolerance"
            break

    return CalibrationResult(
        theta_star=theta,
        trace=trace,
        mae_before=mean_absolute_error(chain, theta_n, dataset),
        mae_after=mean_absolute_error(chain, theta, dataset),
        distortion_before=mean_distortion_error(chain, theta_n, dataset),
        distortion_after=mean_distortion_error(chain, theta, dataset),
        converged=converged,
        iterations=iterations,
        message=message,
    )


# --- insertion check -------------------------------------------------------------------


@dataclass
class FeasibilityResult:
    successes: int
    trials: int
    ik_failures: int
    errors: np.ndarray = field(repr=False)

    @property
    def success_fraction(self) -> float:
        return self.successes / self.trials


def _reach(chain, theta, target, count, rng, tol, max_iters, attempts=20):
    """``count`` within-limit IK solutions from random seeds; NaN rows on failure."""
    out = np.full((count, chain.n), np.nan)
    pending = np.arange(count)
    for _ in range(attempts):
        if pending.size == 0:
            break
        seeds = sample_within_limits(chain, rng, pending.size)
        q, ok = solve_ik_batch(chain, theta, target, seeds, tol, max_iters)
        ok &= within_limits(chain, q)
        out[pending[ok]] = q[ok]
        pending = pending[~ok]
    return out


def insertion_feasibility(chain: KinematicChain, theta_calibrated, theta_true, goals,
                          clearance_m, trials=20, rng=None, tol=1e-10,
                          max_iters=300) -> FeasibilityResult:
    """Kinematic peg-in-hole check of a model against the true geometry.

    For each hole position in ``goals`` (true base-frame coordinates) the goal
    is first taught: a configuration placing the true tip in the hole is
    recorded and its position under the calibrated model becomes the commanded
    target. Each trial then solves IK under the calibrated model from a random
    seed within the joint limits and succeeds when the true tip lands within
    ``clearance_m / 2`` of the hole. Trials without a within-limit IK solution
    count as failures and are tallied separately.
    """
    if not clearance_m > 0:
        raise ValueError("clearance must be positive")
    theta_calibrated = check_theta(chain, theta_calibrated)
    theta_true = check_theta(chain, theta_true)
    rng = np.random.default_rng(rng)
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    errors = []
    failures = 0
    for goal in goals:
        teach = _reach(chain, theta_true, goal, 1, rng, tol, max_iters, attempts=50)[0]
        if np.isnan(teach).any():
            raise ValueError(f"goal {goal} is not reachable under the true model")
        commanded = bcp_positions(chain, theta_calibrated, teach)[0]
        q = _reach(chain, theta_calibrated, commanded, trials, rng, tol, max_iters)
        solved = ~np.isnan(q).any(axis=1)
        err = np.full(trials, np.inf)
        err[solved] = np.linalg.norm(bcp_positions(chain, theta_true, q[solved]) - goal, axis=1)
        failures += int(np.sum(~solved))
        errors.append(err)
    errors = np.concatenate(errors)
    return FeasibilityResult(int(np.sum(errors <= clearance_m / 2)), errors.size, failures, errors)
