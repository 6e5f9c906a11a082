import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sockcal.kinematics import FrameSpec, JointKind, KinematicChain, pack_params
from sockcal.synth import default_scenario, generate_dataset


def random_axis(rng):
    v = rng.normal(size=3)
    return tuple(v / np.linalg.norm(v))


def random_chain(rng, m, kinds=(JointKind.FIXED, JointKind.REVOLUTE, JointKind.PRISMATIC)):
    """Chain of ``m`` frames with random geometry; at least one actuated frame."""
    frames = []
    for i in range(m):
        kind = kinds[rng.integers(len(kinds))] if i < m - 1 else JointKind.REVOLUTE
        frames.append(FrameSpec(
            rpy=tuple(rng.uniform(-np.pi, np.pi, 3)),
            displacement=tuple(rng.uniform(-0.4, 0.4, 3)),
            kind=kind,
            axis=None if kind is JointKind.FIXED else random_axis(rng),
            name=f"f{i}",
        ))
    return KinematicChain(tuple(frames))


def oracle_fk(chain, theta, q):
    """Explicit 4x4 product built with scipy rotations (independent of the package)."""
    geo = np.asarray(theta).reshape(chain.m, 6)
    T = np.eye(4)
    j = 0
    for frame, row in zip(chain.frames, geo):
        A = np.eye(4)
        A[:3, :3] = Rotation.from_euler("xyz", row[:3]).as_matrix()
        A[:3, 3] = row[3:]
        B = np.eye(4)
        if frame.kind is JointKind.REVOLUTE:
            B[:3, :3] = Rotation.from_rotvec(np.asarray(frame.axis) * q[j]).as_matrix()
            j += 1
        elif frame.kind is JointKind.PRISMATIC:
            B[:3, 3] = np.asarray(frame.axis) * q[j]
            j += 1
        T = T @ A @ B
    return T


def planar_2r(l1=0.3, l2=0.2):
    z = (0.0, 0.0, 1.0)
    return KinematicChain((
        FrameSpec(kind=JointKind.REVOLUTE, axis=z, name="j1"),
        FrameSpec(displacement=(l1, 0, 0), kind=JointKind.REVOLUTE, axis=z, name="j2"),
        FrameSpec(displacement=(l2, 0, 0), name="tip"),
    ))


@pytest.fixture(scope="session")
def front_scenario():
    return default_scenario(seed=0)


@pytest.fixture(scope="session")
def front_data(front_scenario):
    return generate_dataset(front_scenario, "train")


@pytest.fixture(scope="session")
def nominal_data():
    """Noiseless data recorded on the unperturbed fixture (so the nominal model is exact)."""
    sc = default_scenario(seed=0, rot_std=0.0, trans_std=0.0)
    return sc, generate_dataset(sc, "train")
