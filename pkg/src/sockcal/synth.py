"""Synthetic ground truth for calibration experiments.

A scenario hides a perturbed copy of the nominal geometry. Socket data are
produced by solving IK under the hidden geometry from random seeds, which
yields many nullspace configurations per socket; optional Gaussian joint noise
models encoder error. Each random quantity draws from its own stream keyed by
``(seed, purpose, index)``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .calibration import (
    CalibrationOptions,
    mean_absolute_error,
    optimize,
    placement_mae,
    removed_error_percent,
)
from .dataset import CalibrationDataset, ToolPlacement
from .exceptions import IKConvergenceError, UnreachableSocketError
from .ik import sample_within_limits, solve_ik_batch, within_limits
from .kinematics import PARAMS_PER_FRAME, KinematicChain, check_theta, joint_jacobians
from .urdf import RobotDescription

FIXTURE_PATH = Path(__file__).with_name("data") / "fixture_arm.urdf"
FIXTURE_BASE = "base_link"
FIXTURE_TIP = "flange"
FIXTURE_BALL_OFFSET = (0.0, 0.0, 0.05)

# Chosen once by Monte Carlo over seeds 0..49 so that the nominal fixture model
# shows a 5-13 mm consistency error (median 8.4 mm) on synthetic data.
DEFAULT_ROT_STD = 4e-3
DEFAULT_TRANS_STD = 2e-3

# two sockets 0.1 m apart, 0.45 m in front of the base, just above the table
DEFAULT_PLACEMENTS = {
    "front": ((0.45, -0.05, 0.05), (0.45, 0.05, 0.05)),
    "left": ((0.0, 0.45, 0.05), (0.1, 0.45, 0.05)),
    "high": ((0.3, -0.35, 0.5), (0.3, -0.35, 0.6)),
}

_PERTURB, _TRAIN, _TEST, _FLOOR, _FEASIBILITY = range(5)


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, index]))


def load_fixture(ball_offset=FIXTURE_BALL_OFFSET) -> RobotDescription:
    return RobotDescription.from_file(FIXTURE_PATH, FIXTURE_BASE, FIXTURE_TIP, ball_offset)


def perturb_model(theta_n, rot_std: float, trans_std: float, rng) -> np.ndarray:
    """Add independent zero-mean Gaussian errors to every angle and offset."""
    if rot_std < 0 or trans_std < 0:
        raise ValueError("perturbation standard deviations must be non-negative")
    theta_n = np.asarray(theta_n, dtype=float)
    rng = np.random.default_rng(rng)
    scale = np.tile([rot_std] * 3 + [trans_std] * 3, theta_n.size // PARAMS_PER_FRAME)
    return theta_n + rng.standard_normal(theta_n.size) * scale


@dataclass
class SyntheticScenario:
    chain: KinematicChain
    theta_nominal: np.ndarray
    theta_true: np.ndarray
    socket_positions: np.ndarray  # (P, 2, 3), base frame, meters
    labels: Tuple[str, ...] = ()
    distance_bias: float = 0.0
    joint_noise_std: float = 0.0
    samples_per_socket: int = 30
    test_samples_per_socket: int = 30
    rng_seed: int = 0
    description: Optional[RobotDescription] = field(default=None, repr=False)

    def __post_init__(self):
        self.theta_nominal = check_theta(self.chain, self.theta_nominal)
        self.theta_true = check_theta(self.chain, self.theta_true)
        self.socket_positions = np.asarray(self.socket_positions, dtype=float).reshape(-1, 2, 3)
        if not self.labels:
            self.labels = tuple(f"P{i}" for i in range(len(self.socket_positions)))
        if len(self.labels) != len(self.socket_positions):
            raise ValueError("one label per placement is required")
        if self.samples_per_socket < 1 or self.test_samples_per_socket < 1:
            raise ValueError("samples per socket must be at least 1")
        if self.joint_noise_std < 0:
            raise ValueError("joint noise must be non-negative")

    @property
    def distances(self) -> np.ndarray:
        sep = self.socket_positions[:, 1] - self.socket_positions[:, 0]
        return np.linalg.norm(sep, axis=1) + self.distance_bias

    @classmethod
    def from_nominal(cls, description: RobotDescription, socket_positions, rot_std=DEFAULT_ROT_STD,
                     trans_std=DEFAULT_TRANS_STD, seed=0, **kwargs) -> "SyntheticScenario":
        theta_true = perturb_model(description.theta_nominal, rot_std, trans_std,
                                   stream(seed, _PERTURB))
        return cls(description.chain, description.theta_nominal, theta_true, socket_positions,
                   rng_seed=seed, description=description, **kwargs)


def default_scenario(seed=0, placements=("front",), **kwargs) -> SyntheticScenario:
    """Fixture arm with the named default placements."""
    positions = [DEFAULT_PLACEMENTS[name] for name in placements]
    return SyntheticScenario.from_nominal(load_fixture(), positions, seed=seed,
                                          labels=tuple(placements), **kwargs)


def _sample_socket(chain, theta, target, count, rng, max_rounds=40):
    found = []
    for _ in range(max_rounds):
        seeds = sample_within_limits(chain, rng, max(count, 8))
        q, ok = solve_ik_batch(chain, theta, target, seeds, tol=1e-10, max_iters=300)
        ok &= within_limits(chain, q)
        found.extend(q[ok])
        if len(found) >= count:
            return np.array(found[:count])
    raise UnreachableSocketError(
        f"socket at {tuple(np.round(target, 4))} reached only {len(found)}/{count} times"
    )


def generate_dataset(scenario: SyntheticScenario, split: str = "train",
                     with_truth: bool = False):
    """Socket data for every placement of ``scenario``.

    ``split`` selects the random stream and sample count (``"train"`` or
    ``"test"``). With ``with_truth`` the noise-free configurations are
    returned as well, as a list of ``(q0, q1)`` pairs.
    """
    if scenario.chain.n < 4:
        raise IKConvergenceError("socket data need a kinematically redundant chain (n >= 4)")
    purpose = {"train": _TRAIN, "test": _TEST}[split]
    count = scenario.samples_per_socket if split == "train" else scenario.test_samples_per_socket
    placements, truth = [], []
    for p_idx, (pair, label, dist) in enumerate(
        zip(scenario.socket_positions, scenario.labels, scenario.distances)
    ):
        sockets, clean = [], []
        for s_idx, target in enumerate(pair):
            rng = stream(scenario.rng_seed, purpose, 2 * p_idx + s_idx)
            q = _sample_socket(scenario.chain, scenario.theta_true, target, count, rng)
            clean.append(q)
            sockets.append(q + rng.normal(0.0, scenario.joint_noise_std, q.shape)
                           if scenario.joint_noise_std > 0 else q)
        placements.append(ToolPlacement(sockets[0], sockets[1], float(dist), label))
        truth.append(tuple(clean))
    dataset = CalibrationDataset(tuple(placements), scenario.chain.n, robot="synthetic")
    return (dataset, truth) if with_truth else dataset


def repeatability_floor(scenario: SyntheticScenario, dataset: CalibrationDataset,
                        draws: int = 200) -> List[float]:
    """Per-placement consistency error a perfect model would show under joint noise.

    Joint noise is pushed through the exact joint Jacobian of the true model at
    each recorded configuration and the resulting scatter is scored with the
    same metric as :func:`mean_absolute_error`, averaged over ``draws`` Monte
    Carlo repetitions.
    """
    sigma = scenario.joint_noise_std
    out = []
    for p_idx, placement in enumerate(dataset.placements):
        if sigma == 0:
            out.append(0.0)
            continue
        rng = stream(scenario.rng_seed, _FLOOR, p_idx)
        total = 0.0
        for sock in placement.sockets:
            jac = joint_jacobians(scenario.chain, scenario.theta_true, sock.configurations)
            noise = rng.normal(0.0, sigma, (draws,) + sock.configurations.shape)
            dx = np.einsum("nij,dnj->dni", jac, noise)
            dx -= dx.mean(axis=1, keepdims=True)
            total += np.linalg.norm(dx, axis=2).sum(axis=1).mean()
        out.append(float(total / (len(placement.socket0) + len(placement.socket1))))
    return out


# --- experiments -------------------------------------------------------------------


@dataclass
class ExperimentRow:
    train_placements: str
    test_placement: str
    joint_noise_std: float
    mae_train_before: float
    mae_train_after: float
    removed_train_pct: float
    mae_test_before: float
    mae_test_after: float
    removed_test_pct: float
    distortion_before: float
    distortion_after: float
    repeatability_floor: float
    iterations: int
    converged: bool
    wall_time_s: float = 0.0


REPORT_COLUMNS = [
    "train_placements", "test_placement", "joint_noise_std", "mae_train_before",
    "mae_train_after", "removed_train_pct", "mae_test_before", "mae_test_after",
    "removed_test_pct", "distortion_before", "distortion_after", "repeatability_floor",
    "iterations", "converged",
]


@dataclass
class ExperimentReport:
    rows: List[ExperimentRow]
    results: dict = field(default_factory=dict, repr=False)

    def to_csv(self, include_timing: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = REPORT_COLUMNS + (["wall_time_s"] if include_timing else [])
        writer.writerow(cols)
        for row in self.rows:
            vals = []
            for col in cols:
                v = getattr(row, col)
                vals.append(repr(float(v)) if isinstance(v, float) else str(v))
            writer.writerow(vals)
        return buf.getvalue()

    def summary(self, include_timing: bool = False) -> str:
        head = (f"{'train':<18} {'test':<8} {'sigma_q':>8} {'train MAE [m]':>22} {'rm%':>6}"
                f" {'test MAE [m]':>22} {'rm%':>6} {'floor [m]':>9} {'it':>4}")
        lines = [head, "-" * len(head)]
        for r in self.rows:
            line = (f"{r.train_placements:<18} {r.test_placement:<8} {r.joint_noise_std:>8.1e} "
                    f"{r.mae_train_before:>9.2e} -> {r.mae_train_after:>8.2e} "
                    f"{r.removed_train_pct:>6.2f} "
                    f"{r.mae_test_before:>9.2e} -> {r.mae_test_after:>8.2e} "
                    f"{r.removed_test_pct:>6.2f} {r.repeatability_floor:>9.2e} {r.iterations:>4d}")
            if include_timing:
                line += f" {r.wall_time_s:6.2f}s"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def row(self, train: str, test: str) -> ExperimentRow:
        for r in self.rows:
            if r.train_placements == train and r.test_placement == test:
                return r
        raise KeyError((train, test))


def report_from_csv(text: str) -> ExperimentReport:
    """Inverse of :meth:`ExperimentReport.to_csv` (timing column optional)."""
    reader = csv.DictReader(io.StringIO(text))
    missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"report is missing columns: {sorted(missing)}")
    rows = []
    for rec in reader:
        kw = {}
        for f in fields(ExperimentRow):
            if f.name not in rec:
                continue
            raw = rec[f.name]
            if f.type in ("int", int):
                kw[f.name] = int(raw)
            elif f.type in ("bool", bool):
                kw[f.name] = raw == "True"
            elif f.type in ("float", float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        rows.append(ExperimentRow(**kw))
    return ExperimentReport(rows)


def all_subsets(count: int):
    return [c for k in range(1, count + 1) for c in itertools.combinations(range(count), k)]


def run_experiment(scenario: SyntheticScenario, options: CalibrationOptions = None,
                   train_sets: Optional[Sequence[Sequence[int]]] = None) -> ExperimentReport:
    """Calibrate on each training subset, score on held-out data at every placement.

    Training data and held-out test data are drawn from separate streams. By
    default every non-empty subset of placements is used for training, which
    gives one row per ``(training subset, test placement)`` pair.
    """
    options = options or CalibrationOptions()
    train = generate_dataset(scenario, "train")
    test = generate_dataset(scenario, "test")
    floors = repeatability_floor(scenario, test)
    chain, theta_n = scenario.chain, scenario.theta_nominal
    if train_sets is None:
        train_sets = all_subsets(len(train.placements))
    rows, results = [], {}
    for subset in train_sets:
        subset = tuple(subset)
        data = train.subset(subset)
        start = time.perf_counter()
        result = optimize(chain, theta_n, data, options)
        elapsed = time.perf_counter() - start
        name = "+".join(scenario.labels[i] for i in subset)
        results[name] = result
        for t_idx, placement in enumerate(test.placements):
            before = placement_mae(chain, theta_n, placement)
            after = placement_mae(chain, result.theta_star, placement)
            rows.append(ExperimentRow(
                train_placements=name,
                test_placement=scenario.labels[t_idx],
                joint_noise_std=float(scenario.joint_noise_std),
                mae_train_before=result.mae_before,
                mae_train_after=result.mae_after,
                removed_train_pct=result.removed_error,
                mae_test_before=before,
                mae_test_after=after,
                removed_test_pct=removed_error_percent(before, after),
                distortion_before=result.distortion_before,
                distortion_after=result.distortion_after,
                repeatability_floor=floors[t_idx],
                iterations=result.iterations,
                converged=result.converged,
                wall_time_s=elapsed,
            ))
    return ExperimentReport(rows, results)


def sweep_noise(scenario: SyntheticScenario, levels: Sequence[float],
                options: CalibrationOptions = None) -> ExperimentReport:
    """One row per joint-noise level: train on all placements, test on all."""
    options = options or CalibrationOptions()
    rows, results = [], {}
    for sigma in levels:
        sc = replace(scenario, joint_noise_std=float(sigma))
        train = generate_dataset(sc, "train")
        test = generate_dataset(sc, "test")
        floor = float(np.mean(repeatability_floor(sc, test)))
        start = time.perf_counter()
        result = optimize(sc.chain, sc.theta_nominal, train, options)
        elapsed = time.perf_counter() - start
        before = mean_absolute_error(sc.chain, sc.theta_nominal, test)
        after = mean_absolute_error(sc.chain, result.theta_star, test)
        results[sigma] = result
        rows.append(ExperimentRow(
            "+".join(sc.labels), "all", float(sigma), result.mae_before, result.mae_after,
            result.removed_error, before, after, removed_error_percent(before, after),
            result.distortion_before, result.distortion_after, floor, result.iterations,
            result.converged, elapsed,
        ))
    return ExperimentReport(rows, results)


# --- scenario files ----------------------------------------------------------------


SCENARIO_DEFAULTS = {
    "model": None,
    "base_link": FIXTURE_BASE,
    "tip_link": FIXTURE_TIP,
    "ball_offset": list(FIXTURE_BALL_OFFSET),
    "rot_std": DEFAULT_ROT_STD,
    "trans_std": DEFAULT_TRANS_STD,
    "placements": [
        {"label": name, "socket0": list(a), "socket1": list(b)}
        for name, (a, b) in DEFAULT_PLACEMENTS.items()
    ],
    "joint_noise_std": 0.0,
    "distance_bias": 0.0,
    "samples_per_socket": 30,
    "test_samples_per_socket": 30,
    "seed": 0,
    "lambda": 1e-4,
    "rel_tol": 1e-8,
    "max_iterations": 500,
    "train_sets": None,
    "noise_sweep": None,
}


def scenario_config(doc: Optional[dict] = None, base_dir=None) -> dict:
    cfg = dict(SCENARIO_DEFAULTS)
    unknown = set(doc or {}) - set(cfg)
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    cfg.update(doc or {})
    if cfg["model"] is not None and base_dir is not None:
        cfg["model"] = str(Path(base_dir) / cfg["model"])
    return cfg


def load_scenario_file(path) -> dict:
    path = Path(path)
    return scenario_config(json.loads(path.read_text(encoding="utf-8")), path.parent)


def scenario_from_config(cfg: dict) -> SyntheticScenario:
    if cfg["model"] is None:
        desc = RobotDescription.from_file(FIXTURE_PATH, cfg["base_link"], cfg["tip_link"],
                                          cfg["ball_offset"])
    else:
        desc = RobotDescription.from_file(cfg["model"], cfg["base_link"], cfg["tip_link"],
                                          cfg["ball_offset"])
    positions = [(p["socket0"], p["socket1"]) for p in cfg["placements"]]
    labels = tuple(p.get("label", f"P{i}") for i, p in enumerate(cfg["placements"]))
    return SyntheticScenario.from_nominal(
        desc, positions, cfg["rot_std"], cfg["trans_std"], seed=int(cfg["seed"]), labels=labels,
        distance_bias=float(cfg["distance_bias"]), joint_noise_std=float(cfg["joint_noise_std"]),
        samples_per_socket=int(cfg["samples_per_socket"]),
        test_samples_per_socket=int(cfg["test_samples_per_socket"]),
    )


def options_from_config(cfg: dict) -> CalibrationOptions:
    return CalibrationOptions(lam=float(cfg["lambda"]), rel_tol=float(cfg["rel_tol"]),
                              max_iterations=int(cfg["max_iterations"]))
