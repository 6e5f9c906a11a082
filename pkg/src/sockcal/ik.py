"""Position-only inverse kinematics by damped least squares.

Stands in for the operator who moves a back-drivable arm until the ball sits in
a socket: from a random seed the iteration converges to some configuration on
the self-motion manifold of the target point, so different seeds give
different nullspace configurations.
"""

from __future__ import annotations

import numpy as np

from .exceptions import IKConvergenceError, ShapeError
from .kinematics import KinematicChain, _sweep, check_configs, check_theta, joint_jacobians

MAX_STEP = 0.3  # rad (or m) per iteration, keeps early iterations on a sane path


def solve_ik_batch(chain: KinematicChain, theta, targets, seeds, tol=1e-10,
                   max_iters=200, damping=1e-6):
    """Run damped least squares for every ``(target, seed)`` pair at once.

    Each row keeps its own damping factor: a step that does not reduce the
    position error is rejected and the damping raised tenfold, an accepted
    step lowers it again towards ``damping``. This keeps the iteration from
    cycling around singular configurations.

    Returns ``(q, converged)`` with ``q`` of shape ``(N, n)`` and a boolean
    mask of the rows whose final position error is at most ``tol``.
    """
    theta = check_theta(chain, theta)
    q = check_configs(chain, seeds).copy()
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = np.broadcast_to(targets, (q.shape[0], 3))
    if targets.shape != (q.shape[0], 3):
        raise ShapeError(f"targets have shape {targets.shape}, expected ({q.shape[0]}, 3)")

    err = targets - _sweep(chain, theta, q).tip
    norm = np.linalg.norm(err, axis=1)
    mu = np.full(q.shape[0], float(damping))
    eye = np.eye(3)
    for _ in range(max_iters):
        idx = np.flatnonzero((norm > tol) & (mu < 1e12))
        if idx.size == 0:
            break
        jac = joint_jacobians(chain, theta, q[idx])
        gram = jac @ np.transpose(jac, (0, 2, 1)) + mu[idx, None, None] * eye
        step = np.einsum("nji,nj->ni", jac, np.linalg.solve(gram, err[idx][..., None])[..., 0])
        length = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, MAX_STEP / np.maximum(length, 1e-300))
        trial = q[idx] + step
        trial_err = targets[idx] - _sweep(chain, theta, trial).tip
        trial_norm = np.linalg.norm(trial_err, axis=1)
        better = trial_norm < norm[idx]
        good = idx[better]
        q[good], err[good], norm[good] = trial[better], trial_err[better], trial_norm[better]
        mu[good] = np.maximum(mu[good] * 0.1, damping)
        mu[idx[~better]] *= 10.0
    return q, norm <= tol


def ik_to_point(chain: KinematicChain, theta, target, q_seed, tol=1e-10, max_iters=200,
                require_redundancy=False):
    """Joint configuration whose tip lies within ``tol`` of ``target``.

    Raises :class:`IKConvergenceError` if the iteration does not converge. With
    ``require_redundancy`` the chain must have at least four actuated joints,
    otherwise a position target has no self-motion to explore.
    """
    if require_redundancy and chain.n < 4:
        raise IKConvergenceError(
            f"chain has {chain.n} actuated joints; a position target needs at least 4 "
            "for nullspace motion"
        )
    target = np.asarray(target, dtype=float)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise ShapeError("target must be a finite 3-vector")
    seed = np.asarray(q_seed, dtype=float)
    if seed.ndim != 1:
        raise ShapeError("q_seed must be a single configuration")
    q, ok = solve_ik_batch(chain, theta, target[None, :], seed[None, :], tol, max_iters)
    if not ok[0]:
        raise IKConvergenceError(f"no convergence to {target} within {max_iters} iterations")
    return q[0]


def sample_within_limits(chain: KinematicChain, rng, count, margin=0.0):
    """Uniform configurations inside the joint limits (``[-pi, pi]`` if unbounded)."""
    limits = chain.joint_limits.copy()
    unbounded = ~np.isfinite(limits)
    limits[unbounded[:, 0], 0] = -np.pi
    limits[unbounded[:, 1], 1] = np.pi
    lo = limits[:, 0] + margin
    hi = limits[:, 1] - margin
    return rng.uniform(lo, hi, size=(count, chain.n))


def within_limits(chain: KinematicChain, q) -> np.ndarray:
    limits = chain.joint_limits
    q = np.atleast_2d(q)
    return np.all((q >= limits[:, 0]) & (q <= limits[:, 1]), axis=1)
