"""Socket-labelled calibration data and its JSON file format.

A dataset holds one or more tool placements. Each placement records joint
configurations with the ball seated in socket 0 and in socket 1, and the
caliper-measured distance between the two sockets in meters.

File layout (``format_version`` ``"mukca-1"``, angles in radians)::

    {"format_version": "mukca-1", "robot": "...", "joint_count": 7,
     "date": "...", "placements": [
        {"label": "front", "distance_m": 0.1,
         "socket0": [[q1, ..., qn], ...], "socket1": [[...], ...]}]}
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import DatasetSchemaError

FORMAT_VERSION = "mukca-1"
MIN_SAMPLES_PER_SOCKET = 30


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SocketSet:
    configurations: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.configurations, dtype=float)
        if q.ndim != 2 or q.shape[0] == 0:
            raise DatasetSchemaError("a socket set needs a non-empty (N, n) array")
        object.__setattr__(self, "configurations", _frozen(q))

    def __len__(self):
        return self.configurations.shape[0]

    def __eq__(self, other):
        return isinstance(other, SocketSet) and np.array_equal(
            self.configurations, other.configurations
        )

    @property
    def joint_count(self) -> int:
        return self.configurations.shape[1]


@dataclass(frozen=True, eq=True)
class ToolPlacement:
    socket0: SocketSet
    socket1: SocketSet
    distance_m: float
    label: str = ""

    def __post_init__(self):
        for name in ("socket0", "socket1"):
            value = getattr(self, name)
            if not isinstance(value, SocketSet):
                object.__setattr__(self, name, SocketSet(value))
        d = float(self.distance_m)
        if not np.isfinite(d) or d <= 0:
            raise DatasetSchemaError(f"placement {self.label!r}: distance must be positive")
        object.__setattr__(self, "distance_m", d)
        if self.socket0.joint_count != self.socket1.joint_count:
            raise DatasetSchemaError(
                f"placement {self.label!r}: sockets have different joint counts"
            )

    @property
    def sockets(self) -> Tuple[SocketSet, SocketSet]:
        return (self.socket0, self.socket1)


@dataclass(frozen=True, eq=True)
class CalibrationDataset:
    placements: Tuple[ToolPlacement, ...]
    joint_count: int
    robot: str = ""
    date: Optional[str] = None

    def __post_init__(self):
        placements = tuple(self.placements)
        if not placements:
            raise DatasetSchemaError("dataset has no placements")
        object.__setattr__(self, "placements", placements)
        for p_idx, placement in enumerate(placements):
            for s_idx, sock in enumerate(placement.sockets):
                if sock.joint_count != self.joint_count:
                    raise DatasetSchemaError(
                        f"placement {p_idx} ({placement.label!r}) socket{s_idx}: "
                        f"configurations have length {sock.joint_count}, "
                        f"dataset declares {self.joint_count} joints"
                    )

    def __len__(self):
        return len(self.placements)

    def subset(self, indices) -> "CalibrationDataset":
        return CalibrationDataset(
            tuple(self.placements[i] for i in indices), self.joint_count, self.robot, self.date
        )


# --- serialization ------------------------------------------------------------


def _require(obj, key, where):
    if key not in obj:
        raise DatasetSchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def _read_socket(rows, joint_count, where) -> SocketSet:
    if not isinstance(rows, list) or not rows:
        raise DatasetSchemaError(f"{where}: expected a non-empty list of configurations")
    for idx, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != joint_count:
            length = len(row) if isinstance(row, list) else "non-list"
            raise DatasetSchemaError(
                f"{where}[{idx}]: configuration has length {length}, expected {joint_count}"
            )
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                raise DatasetSchemaError(f"{where}[{idx}]: non-numeric joint value {v!r}")
    return SocketSet(np.array(rows, dtype=float))


def dataset_from_dict(doc) -> CalibrationDataset:
    if not isinstance(doc, dict):
        raise DatasetSchemaError("dataset document must be a JSON object")
    version = _require(doc, "format_version", "dataset")
    if version != FORMAT_VERSION:
        raise DatasetSchemaError(f"unsupported format_version {version!r}")
    joint_count = _require(doc, "joint_count", "dataset")
    if not isinstance(joint_count, int) or joint_count < 1:
        raise DatasetSchemaError(f"joint_count must be a positive integer, got {joint_count!r}")
    raw = _require(doc, "placements", "dataset")
    if not isinstance(raw, list) or not raw:
        raise DatasetSchemaError("dataset has no placements")
    placements = []
    for p_idx, entry in enumerate(raw):
        where = f"placement {p_idx}"
        label = str(entry.get("label", ""))
        if label:
            where += f" ({label!r})"
        dist = _require(entry, "distance_m", where)
        if isinstance(dist, bool) or not isinstance(dist, (int, float)) or not dist > 0:
            raise DatasetSchemaError(f"{where}: distance_m must be positive, got {dist!r}")
        s0 = _read_socket(_require(entry, "socket0", where), joint_count, f"{where} socket0")
        s1 = _read_socket(_require(entry, "socket1", where), joint_count, f"{where} socket1")
        placements.append(ToolPlacement(s0, s1, dist, label))
    return CalibrationDataset(
        tuple(placements), joint_count, str(doc.get("robot", "")), doc.get("date")
    )


def dataset_to_dict(dataset: CalibrationDataset) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "robot": dataset.robot,
        "joint_count": dataset.joint_count,
    }
    if dataset.date is not None:
        doc["date"] = dataset.date
    doc["placements"] = [
        {
            "label": p.label,
            "distance_m": p.distance_m,
            "socket0": p.socket0.configurations.tolist(),
            "socket1": p.socket1.configurations.tolist(),
        }
        for p in dataset.placements
    ]
    return doc


def dumps_dataset(dataset: CalibrationDataset) -> str:
    return json.dumps(dataset_to_dict(dataset), indent=1) + "\n"


def loads_dataset(text: str) -> CalibrationDataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetSchemaError(f"dataset is not valid JSON: {exc}") from None
    return dataset_from_dict(doc)


def load_dataset(path) -> CalibrationDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: CalibrationDataset, path) -> None:
    atomic_write_text(path, dumps_dataset(dataset))


# Flat CSV: one configuration per row, for spreadsheet-based recording tools.


def dataset_to_csv(dataset: CalibrationDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    joints = [f"q{i + 1}" for i in range(dataset.joint_count)]
    writer.writerow(["placement", "label", "distance_m", "socket"] + joints)
    for p_idx, p in enumerate(dataset.placements):
        if "\x00" in p.label:
            raise DatasetSchemaError(f"placement {p_idx}: label contains a NUL character")
        for s_idx, sock in enumerate(p.sockets):
            for row in sock.configurations:
                writer.writerow(
                    [p_idx, p.label, repr(p.distance_m), s_idx] + [repr(float(v)) for v in row]
                )
    return buf.getvalue()


def dataset_from_csv(text: str, robot: str = "") -> CalibrationDataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:4] != ["placement", "label", "distance_m", "socket"]:
        raise DatasetSchemaError("CSV header must start with placement,label,distance_m,socket")
    joint_count = len(header) - 4
    groups = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetSchemaError(f"CSV line {line_no}: expected {len(header)} fields")
        try:
            p_idx, s_idx = int(row[0]), int(row[3])
            dist = float(row[2])
            q = [float(v) for v in row[4:]]
        except ValueError as exc:
            raise DatasetSchemaError(f"CSV line {line_no}: {exc}") from None
        if s_idx not in (0, 1):
            raise DatasetSchemaError(f"CSV line {line_no}: socket must be 0 or 1")
        entry = groups.setdefault(p_idx, {"label": row[1], "distance_m": dist,
                                          "socket0": [], "socket1": []})
        entry[f"socket{s_idx}"].append(q)
    doc = {"format_version": FORMAT_VERSION, "robot": robot, "joint_count": joint_count,
           "placements": [groups[k] for k in sorted(groups)]}
    return dataset_from_dict(doc)


# --- validation -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetWarning:
    kind: str
    message: str


def validate_dataset(dataset: CalibrationDataset, chain=None) -> List[DatasetWarning]:
    """Advisory checks: fewer than 30 samples per socket, joint-limit violations.

    Messages never mention configuration indices, so permuting the
    configurations of a socket yields the same warnings.
    """
    warnings = []
    limits = chain.joint_limits if chain is not None else None
    names = [chain.frames[i].name for i in chain.actuated_indices] if chain is not None else None
    for p_idx, placement in enumerate(dataset.placements):
        tag = f"placement {p_idx} ({placement.label!r})" if placement.label else f"placement {p_idx}"
        for s_idx, sock in enumerate(placement.sockets):
            if len(sock) < MIN_SAMPLES_PER_SOCKET:
                warnings.append(DatasetWarning(
                    "undersampled",
                    f"{tag} socket{s_idx}: {len(sock)} samples, "
                    f"at least {MIN_SAMPLES_PER_SOCKET} recommended",
                ))
            if limits is None or sock.joint_count != limits.shape[0]:
                continue
            q = sock.configurations
            for row in q[np.any((q < limits[:, 0]) | (q > limits[:, 1]), axis=1)]:
                bad = np.flatnonzero((row < limits[:, 0]) | (row > limits[:, 1]))
                detail = ", ".join(
                    f"{names[j]}={row[j]:.4f} outside [{limits[j, 0]:.4f}, {limits[j, 1]:.4f}]"
                    for j in bad
                )
                warnings.append(DatasetWarning("joint_limit", f"{tag} socket{s_idx}: {detail}"))
    return warnings


def check_compatible(dataset: CalibrationDataset, chain) -> None:
    """Raise :class:`DatasetSchemaError` if the dataset does not fit the chain."""
    if dataset.joint_count != chain.n:
        raise DatasetSchemaError(
            f"dataset has {dataset.joint_count} joints, model has {chain.n} actuated joints"
        )
