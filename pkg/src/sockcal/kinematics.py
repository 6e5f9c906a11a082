"""Parameterized forward kinematics of a serial chain.

Every frame carries six geometric parameters ``[roll, pitch, yaw, px, py, pz]``
and optionally a joint. The rotation from roll-pitch-yaw angles follows the
URDF convention ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``. A revolute joint is
applied on the right of the fixed rotation, a prismatic joint translates along
its axis expressed after the fixed rotation.

The position of the chain tip (the ball-center point) is differentiated
analytically with respect to every geometric parameter and every joint value.
The batched helpers operate on arrays of joint configurations of shape
``(N, n)``; the single-configuration functions are thin wrappers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .exceptions import ArityError, InvalidAxisError, ShapeError

AXIS_TOL = 1e-9
PARAMS_PER_FRAME = 6

_UNIT = np.eye(3)


class JointKind(enum.Enum):
    FIXED = "fixed"
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


@dataclass(frozen=True)
class FrameSpec:
    """One transform of the chain: fixed RPY + displacement, then a joint.

    ``limits`` holds the ``(lower, upper)`` joint range when known; it is only
    consulted for sampling and dataset validation.
    """

    rpy: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    displacement: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: JointKind = JointKind.FIXED
    axis: Optional[Tuple[float, float, float]] = None
    name: str = ""
    limits: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        rpy = tuple(float(v) for v in self.rpy)
        disp = tuple(float(v) for v in self.displacement)
        if len(rpy) != 3 or len(disp) != 3:
            raise ShapeError("rpy and displacement must have three components")
        if not all(np.isfinite(rpy + disp)):
            raise ValueError(f"frame {self.name!r} has non-finite geometry")
        object.__setattr__(self, "rpy", rpy)
        object.__setattr__(self, "displacement", disp)
        if self.kind is JointKind.FIXED:
            if self.axis is not None:
                raise ValueError(f"fixed frame {self.name!r} cannot carry an axis")
        else:
            if self.axis is None:
                raise InvalidAxisError(f"actuated frame {self.name!r} needs an axis")
            axis = tuple(float(v) for v in self.axis)
            _check_unit(axis)
            object.__setattr__(self, "axis", axis)
        if self.limits is not None:
            lo, hi = (float(v) for v in self.limits)
            if not lo <= hi:
                raise ValueError(f"frame {self.name!r} has inverted limits")
            object.__setattr__(self, "limits", (lo, hi))

    @property
    def actuated(self) -> bool:
        return self.kind is not JointKind.FIXED

    @property
    def params(self) -> np.ndarray:
        return np.array(self.rpy + self.displacement)


@dataclass(frozen=True)
class KinematicChain:
    """Ordered serial chain of frames from the base to the ball center.

    ``base_name`` labels frame 0; frame ``i`` is labelled by
    ``frames[i].name`` (the last one is the tip).
    """

    frames: Tuple[FrameSpec, ...]
    base_name: str = "0"
    _actuated: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ShapeError("a chain needs at least one frame")
        for f in frames:
            if not isinstance(f, FrameSpec):
                raise TypeError(f"expected FrameSpec, got {type(f).__name__}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(
            self, "_actuated", tuple(i for i, f in enumerate(frames) if f.actuated)
        )

    @property
    def m(self) -> int:
        return len(self.frames)

    @property
    def n(self) -> int:
        return len(self._actuated)

    actuated_count = n

    @property
    def actuated_indices(self) -> Tuple[int, ...]:
        return self._actuated

    @property
    def names(self) -> Tuple[str, ...]:
        return (self.base_name,) + tuple(f.name for f in self.frames)

    @property
    def n_params(self) -> int:
        return PARAMS_PER_FRAME * self.m

    @property
    def joint_limits(self) -> np.ndarray:
        """``(n, 2)`` array of limits; ``±inf`` where a joint is unbounded."""
        out = np.tile([-np.inf, np.inf], (self.n, 1))
        for row, i in enumerate(self._actuated):
            if self.frames[i].limits is not None:
                out[row] = self.frames[i].limits
        return out

    def append(self, frame: FrameSpec) -> "KinematicChain":
        return replace(self, frames=self.frames + (frame,))


@dataclass(frozen=True)
class HomogeneousTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "HomogeneousTransform":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "HomogeneousTransform") -> "HomogeneousTransform":
        return HomogeneousTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def _check_unit(axis):
    norm = float(np.linalg.norm(axis))
    if len(axis) != 3 or abs(norm - 1.0) > AXIS_TOL:
        raise InvalidAxisError(f"axis {tuple(axis)} is not a unit 3-vector (norm {norm})")


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(axis, angle) -> np.ndarray:
    """Rotation by ``angle`` radians about the unit vector ``axis``."""
    axis = np.asarray(axis, dtype=float)
    _check_unit(axis)
    k = skew(axis)
    return _UNIT + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _rodrigues_batch(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    k = skew(axis)
    k2 = k @ k
    s = np.sin(angles)[:, None, None]
    c = (1.0 - np.cos(angles))[:, None, None]
    return _UNIT + s * k + c * k2


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_EX, _EY, _EZ = skew((1, 0, 0)), skew((0, 1, 0)), skew((0, 0, 1))


def rpy_matrix(rpy) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (extrinsic X, then Y, then Z)."""
    roll, pitch, yaw = rpy
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def rpy_matrix_derivatives(rpy) -> np.ndarray:
    """Partial derivatives of :func:`rpy_matrix`, stacked as ``(3, 3, 3)``."""
    roll, pitch, yaw = rpy
    rz, ry, rx = _rz(yaw), _ry(pitch), _rx(roll)
    return np.stack([rz @ ry @ rx @ _EX, rz @ ry @ _EY @ rx, _EZ @ rz @ ry @ rx])


def rotation_to_rpy(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rpy_matrix` (pitch in ``[-pi/2, pi/2]``)."""
    pitch = np.arcsin(np.clip(-rot[2, 0], -1.0, 1.0))
    if abs(np.cos(pitch)) > 1e-12:
        roll = np.arctan2(rot[2, 1], rot[2, 2])
        yaw = np.arctan2(rot[1, 0], rot[0, 0])
    else:
        roll = 0.0
        yaw = np.arctan2(-rot[0, 1], rot[1, 1])
    return np.array([roll, pitch, yaw])


# --- parameter vector -------------------------------------------------------


def pack_params(chain: KinematicChain) -> np.ndarray:
    """Flatten the chain geometry into ``[r, p, y, px, py, pz]`` per frame."""
    return np.concatenate([f.params for f in chain.frames])


def unpack_params(chain: KinematicChain, theta) -> KinematicChain:
    """Return a copy of ``chain`` whose geometry is taken from ``theta``."""
    theta = check_theta(chain, theta).reshape(chain.m, PARAMS_PER_FRAME)
    frames = tuple(
        replace(f, rpy=tuple(row[:3]), displacement=tuple(row[3:]))
        for f, row in zip(chain.frames, theta)
    )
    return replace(chain, frames=frames)


def param_labels(chain: KinematicChain) -> list:
    comps = ("roll", "pitch", "yaw", "x", "y", "z")
    return [f"{f.name or i}.{c}" for i, f in enumerate(chain.frames) for c in comps]


def check_theta(chain: KinematicChain, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != chain.n_params:
        raise ShapeError(
            f"parameter vector has shape {theta.shape}, expected ({chain.n_params},)"
        )
    return theta


def check_configs(chain: KinematicChain, q) -> np.ndarray:
    """Coerce joint configurations to a ``(N, n)`` float array."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != chain.n:
        raise ShapeError(
            f"joint configurations have shape {q.shape}, expected (N, {chain.n})"
        )
    return q


# --- single-frame transforms -------------------------------------------------


def frame_transform(frame: FrameSpec, joint_value=None) -> HomogeneousTransform:
    if frame.actuated and joint_value is None:
        raise ArityError(f"frame {frame.name!r} is actuated and needs a joint value")
    if not frame.actuated and joint_value is not None:
        raise ArityError(f"frame {frame.name!r} is fixed and takes no joint value")
    rot = rpy_matrix(frame.rpy)
    trans = np.array(frame.displacement)
    if frame.kind is JointKind.REVOLUTE:
        rot = rot @ rodrigues(frame.axis, joint_value)
    elif frame.kind is JointKind.PRISMATIC:
        trans = trans + rot @ np.asarray(frame.axis) * joint_value
    return HomogeneousTransform(rot, trans)


# --- batched chain evaluation -------------------------------------------------


@dataclass
class _ChainPass:
    """Intermediate quantities of one batched forward/backward sweep.

    prefix_rot[i]: rotation of the base-to-frame-(i-1) product, ``(N, 3, 3)``
    local_rot[i]:  joint rotation of frame i (identity for non-revolute)
    tip_local[i]:  tip position in frame i's child coordinates, ``(N, 3)``
    """

    prefix_rot: list
    prefix_trans: list
    fixed_rot: np.ndarray
    joint_rot: list
    tip_local: list
    slide_values: dict
    tip: np.ndarray
    tip_rot: np.ndarray


def _sweep(chain: KinematicChain, theta: np.ndarray, q: np.ndarray) -> _ChainPass:
    geo = theta.reshape(chain.m, PARAMS_PER_FRAME)
    count = q.shape[0]
    fixed_rot = np.stack([rpy_matrix(row[:3]) for row in geo])
    joint_rot = []
    joint_trans = []
    slide_values = {}
    col = 0
    for i, frame in enumerate(chain.frames):
        disp = np.broadcast_to(geo[i, 3:], (count, 3))
        if frame.kind is JointKind.REVOLUTE:
            joint_rot.append(_rodrigues_batch(np.asarray(frame.axis), q[:, col]))
            joint_trans.append(disp)
            col += 1
        elif frame.kind is JointKind.PRISMATIC:
            joint_rot.append(None)
            slide = fixed_rot[i] @ np.asarray(frame.axis)
            slide_values[i] = q[:, col]
            joint_trans.append(disp + q[:, col, None] * slide)
            col += 1
        else:
            joint_rot.append(None)
            joint_trans.append(disp)

    prefix_rot = []
    prefix_trans = []
    rot = np.broadcast_to(_UNIT, (count, 3, 3))
    trans = np.zeros((count, 3))
    for i in range(chain.m):
        prefix_rot.append(rot)
        prefix_trans.append(trans)
        local = fixed_rot[i] if joint_rot[i] is None else fixed_rot[i] @ joint_rot[i]
        trans = trans + np.einsum("nij,nj->ni", rot, joint_trans[i])
        rot = rot @ local

    tip_local = [None] * chain.m
    s = np.zeros((count, 3))
    for i in reversed(range(chain.m)):
        tip_local[i] = s
        v = s if joint_rot[i] is None else np.einsum("nij,nj->ni", joint_rot[i], s)
        s = v @ fixed_rot[i].T + joint_trans[i]
    return _ChainPass(
        prefix_rot, prefix_trans, fixed_rot, joint_rot, tip_local, slide_values, trans, rot
    )


def bcp_positions(chain: KinematicChain, theta, q) -> np.ndarray:
    """Tip positions for a batch of configurations, shape ``(N, 3)``."""
    theta = check_theta(chain, theta)
    q = check_configs(chain, q)
    return _sweep(chain, theta, q).tip


def forward_kinematics(chain: KinematicChain, theta, q) -> HomogeneousTransform:
    """Base-to-tip transform for a single configuration."""
    theta = check_theta(chain, theta)
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ShapeError("forward_kinematics takes a single configuration")
    sweep = _sweep(chain, theta, check_configs(chain, q))
    return HomogeneousTransform(sweep.tip_rot[0].copy(), sweep.tip[0].copy())


def param_jacobians(chain: KinematicChain, theta, q) -> np.ndarray:
    """Exact ``d tip / d theta`` for each configuration, shape ``(N, 3, 6m)``."""
    theta = check_theta(chain, theta)
    q = check_configs(chain, q)
    sweep = _sweep(chain, theta, q)
    return _param_jacobians(chain, theta, sweep)


def _param_jacobians(chain, theta, sweep: _ChainPass) -> np.ndarray:
    geo = theta.reshape(chain.m, PARAMS_PER_FRAME)
    count = sweep.tip.shape[0]
    jac = np.empty((count, 3, chain.n_params))
    for i, frame in enumerate(chain.frames):
        s = sweep.tip_local[i]
        v = s if sweep.joint_rot[i] is None else np.einsum("nij,nj->ni", sweep.joint_rot[i], s)
        if frame.kind is JointKind.PRISMATIC:
            v = v + sweep.slide_values[i][:, None] * np.asarray(frame.axis)
        d_rot = rpy_matrix_derivatives(geo[i, :3])
        # (N,3) local derivative vectors for roll, pitch, yaw
        local = np.einsum("kij,nj->nik", d_rot, v)
        base = PARAMS_PER_FRAME * i
        jac[:, :, base : base + 3] = sweep.prefix_rot[i] @ local
        jac[:, :, base + 3 : base + 6] = sweep.prefix_rot[i]
    return jac


def param_jacobian(chain: KinematicChain, theta, q) -> np.ndarray:
    """Exact ``d tip / d theta`` for one configuration, shape ``(3, 6m)``."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ShapeError("param_jacobian takes a single configuration")
    return param_jacobians(chain, theta, q)[0]


def joint_jacobians(chain: KinematicChain, theta, q) -> np.ndarray:
    """Exact ``d tip / d q``, shape ``(N, 3, n)``."""
    theta = check_theta(chain, theta)
    q = check_configs(chain, q)
    sweep = _sweep(chain, theta, q)
    jac = np.empty((q.shape[0], 3, chain.n))
    for col, i in enumerate(chain.actuated_indices):
        frame = chain.frames[i]
        outer = sweep.prefix_rot[i] @ sweep.fixed_rot[i]
        axis = np.asarray(frame.axis)
        if frame.kind is JointKind.REVOLUTE:
            moved = np.einsum("nij,nj->ni", sweep.joint_rot[i], sweep.tip_local[i])
            local = np.cross(axis, moved)
        else:
            local = np.broadcast_to(axis, (q.shape[0], 3))
        jac[:, :, col] = np.einsum("nij,nj->ni", outer, local)
    return jac
