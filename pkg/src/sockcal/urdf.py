"""Serial-chain subset of URDF: parse joint origins, write calibrated ones back.

Only ``<joint>`` origins, axes, types and limits on the path between two links
are interpreted. Writing patches the origin attributes in the original text so
comments, formatting and unrelated elements survive byte for byte.
"""

from __future__ import annotations

import re
import xml.parsers.expat
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import (
    BranchingError,
    InvalidAxisError,
    MalformedDescriptionError,
    MissingLinkError,
    ShapeError,
    UnsupportedJointError,
)
from .kinematics import FrameSpec, JointKind, KinematicChain, pack_params

BALL_LINK = "ball_center"
BALL_JOINT = "ball_center_joint"

_JOINT_KINDS = {
    "revolute": JointKind.REVOLUTE,
    "continuous": JointKind.REVOLUTE,
    "prismatic": JointKind.PRISMATIC,
    "fixed": JointKind.FIXED,
}
_UNSUPPORTED = {"floating", "planar"}

_ATTR = re.compile(rb"""([^\s=/>]+)\s*=\s*("[^"]*"|'[^']*')""")
_TAG = re.compile(rb"""<origin(?:\s+[^\s=/>]+\s*=\s*(?:"[^"]*"|'[^']*'))*\s*/?>""")


@dataclass
class _Element:
    tag: str
    attrs: Dict[str, str]
    offset: int
    end_offset: int = -1
    children: List["_Element"] = field(default_factory=list)

    def child(self, tag):
        found = [c for c in self.children if c.tag == tag]
        return found[0] if found else None


@dataclass
class _Joint:
    name: str
    kind: str
    parent: str
    child: str
    xyz: Tuple[float, float, float]
    rpy: Tuple[float, float, float]
    axis: Tuple[float, float, float]
    limits: Optional[Tuple[float, float]]
    element: _Element


def _floats(text, what, count=3):
    try:
        vals = tuple(float(v) for v in text.split())
    except ValueError:
        raise MalformedDescriptionError(f"cannot read numbers from {what}: {text!r}")
    if len(vals) != count:
        raise MalformedDescriptionError(f"{what} needs {count} numbers, got {text!r}")
    return vals


def _parse_tree(data: bytes) -> _Element:
    parser = xml.parsers.expat.ParserCreate()
    stack: List[_Element] = []
    roots: List[_Element] = []

    def start(tag, attrs):
        el = _Element(tag, dict(attrs), parser.CurrentByteIndex)
        (stack[-1].children if stack else roots).append(el)
        stack.append(el)

    def end(tag):
        stack.pop().end_offset = parser.CurrentByteIndex

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as exc:
        raise MalformedDescriptionError(f"malformed XML: {exc}") from None
    if not roots or roots[0].tag != "robot":
        raise MalformedDescriptionError("document root is not <robot>")
    return roots[0]


def _read_joint(el: _Element) -> _Joint:
    name = el.attrs.get("name")
    kind = el.attrs.get("type")
    if not name or not kind:
        raise MalformedDescriptionError("joint without name or type")
    if kind in _UNSUPPORTED:
        raise UnsupportedJointError(f"joint {name!r} has unsupported type {kind!r}")
    if kind not in _JOINT_KINDS:
        raise MalformedDescriptionError(f"joint {name!r} has unknown type {kind!r}")
    parent, child = el.child("parent"), el.child("child")
    if parent is None or child is None or "link" not in parent.attrs or "link" not in child.attrs:
        raise MalformedDescriptionError(f"joint {name!r} lacks parent or child link")
    origin = el.child("origin")
    xyz = rpy = (0.0, 0.0, 0.0)
    if origin is not None:
        xyz = _floats(origin.attrs.get("xyz", "0 0 0"), f"joint {name!r} origin xyz")
        rpy = _floats(origin.attrs.get("rpy", "0 0 0"), f"joint {name!r} origin rpy")
    axis_el = el.child("axis")
    axis = (1.0, 0.0, 0.0)
    if axis_el is not None:
        axis = _floats(axis_el.attrs.get("xyz", "1 0 0"), f"joint {name!r} axis")
    limits = None
    limit_el = el.child("limit")
    if kind in ("revolute", "prismatic") and limit_el is not None:
        lo = float(limit_el.attrs.get("lower", 0.0))
        hi = float(limit_el.attrs.get("upper", 0.0))
        if lo < hi:
            limits = (lo, hi)
    return _Joint(name, kind, parent.attrs["link"], child.attrs["link"], xyz, rpy,
                  axis, limits, el)


def _frame(joint: _Joint) -> FrameSpec:
    kind = _JOINT_KINDS[joint.kind]
    axis = None
    if kind is not JointKind.FIXED:
        norm = np.linalg.norm(joint.axis)
        if norm == 0.0:
            raise InvalidAxisError(f"joint {joint.name!r} has a zero axis")
        axis = tuple(np.asarray(joint.axis) / norm)
    return FrameSpec(joint.rpy, joint.xyz, kind, axis, name=joint.name, limits=joint.limits)


def _resolve_path(joints: List[_Joint], links: set, base: str, tip: str) -> List[_Joint]:
    for link in (base, tip):
        if link not in links:
            raise MissingLinkError(f"link {link!r} is not defined")
    by_child: Dict[str, List[_Joint]] = {}
    for j in joints:
        for link in (j.parent, j.child):
            if link not in links:
                raise MissingLinkError(f"joint {j.name!r} refers to undefined link {link!r}")
        by_child.setdefault(j.child, []).append(j)
    path = []
    link = tip
    seen = {tip}
    while link != base:
        parents = by_child.get(link, [])
        if len(parents) > 1:
            names = ", ".join(p.name for p in parents)
            raise BranchingError(f"link {link!r} has several parent joints ({names})")
        if not parents:
            raise BranchingError(f"no serial path from {base!r} to {tip!r}")
        joint = parents[0]
        path.append(joint)
        link = joint.parent
        if link in seen:
            raise BranchingError(f"kinematic loop through link {link!r}")
        seen.add(link)
    return path[::-1]


@dataclass
class RobotDescription:
    """A parsed description plus what is needed to rewrite it.

    ``ball_appended`` is true when the ball-center frame came from the
    ``ball_offset`` argument rather than from the document; writing then adds
    a fixed joint named ``ball_center_joint`` below the tip link.
    """

    text: str
    base_link: str
    tip_link: str
    chain: KinematicChain
    theta_nominal: np.ndarray
    joints: List[_Joint]
    ball_appended: bool
    _robot: _Element

    @classmethod
    def from_text(cls, text: str, base_link: str, tip_link: str,
                  ball_offset=(0.0, 0.0, 0.0)) -> "RobotDescription":
        """Parse ``text``; ``ball_offset=None`` means ``tip_link`` is the ball center."""
        robot = _parse_tree(text.encode("utf-8"))
        links = {el.attrs.get("name") for el in robot.children if el.tag == "link"}
        joints = [_read_joint(el) for el in robot.children if el.tag == "joint"]
        path = _resolve_path(joints, links, base_link, tip_link)
        frames = [_frame(j) for j in path]
        if ball_offset is not None:
            offset = np.asarray(ball_offset, dtype=float)
            if offset.shape != (3,):
                raise ShapeError("ball offset must be a 3-vector")
            if BALL_LINK in links:
                raise MalformedDescriptionError(
                    f"link {BALL_LINK!r} already exists; parse with tip_link="
                    f"{BALL_LINK!r} and no ball offset"
                )
            frames.append(FrameSpec(displacement=tuple(offset), name=BALL_JOINT))
        if not frames:
            raise BranchingError(f"base and tip are the same link ({base_link!r})")
        chain = KinematicChain(tuple(frames), base_name=base_link)
        return cls(text, base_link, tip_link, chain, pack_params(chain), path,
                   ball_offset is not None, robot)

    @classmethod
    def from_file(cls, path, base_link, tip_link, ball_offset=(0.0, 0.0, 0.0)):
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base_link,
                             tip_link, ball_offset)


def parse_description(text, base_link, tip_link, ball_offset=(0.0, 0.0, 0.0)):
    """Return ``(chain, nominal parameter vector)`` for the path base -> tip."""
    desc = RobotDescription.from_text(text, base_link, tip_link, ball_offset)
    return desc.chain, desc.theta_nominal


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _patch_origin(data: bytes, joint: _Joint, xyz, rpy):
    """Edits ``(start, end, replacement)`` that set one joint's origin."""
    origin = joint.element.child("origin")
    if origin is None:
        if np.array_equal(xyz, joint.xyz) and np.array_equal(rpy, joint.rpy):
            return []
        start = joint.element.offset
        close = data.index(b">", _tag_end(data, start))
        tag = f'\n    <origin xyz="{_fmt(xyz)}" rpy="{_fmt(rpy)}"/>'.encode()
        return [(close + 1, close + 1, tag)]
    match = _TAG.match(data, origin.offset)
    if match is None:
        raise MalformedDescriptionError(f"cannot locate origin of joint {joint.name!r}")
    tag = match.group(0)
    new_tag = tag
    for attr, old, new in (("xyz", joint.xyz, xyz), ("rpy", joint.rpy, rpy)):
        if np.array_equal(old, new):
            continue
        value = f'"{_fmt(new)}"'.encode()
        found = [m for m in _ATTR.finditer(new_tag) if m.group(1) == attr.encode()]
        if found:
            m = found[0]
            new_tag = new_tag[: m.start(2)] + value + new_tag[m.end(2):]
        else:
            cut = len(new_tag) - (2 if new_tag.endswith(b"/>") else 1)
            new_tag = new_tag[:cut].rstrip() + b" " + attr.encode() + b"=" + value + new_tag[cut:]
    if new_tag == tag:
        return []
    return [(match.start(), match.end(), new_tag)]


def _tag_end(data: bytes, start: int) -> int:
    # skip over quoted attribute values so a '>' inside them is not taken as the tag end
    pos = start
    quote = None
    while True:
        ch = data[pos:pos + 1]
        if quote:
            if ch == quote:
                quote = None
        elif ch in (b'"', b"'"):
            quote = ch
        elif ch == b">":
            return pos
        pos += 1


def write_description(desc: RobotDescription, theta) -> str:
    """Return ``desc.text`` with origins on the chain path replaced by ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (desc.chain.n_params,):
        raise ShapeError(
            f"parameter vector has shape {theta.shape}, expected ({desc.chain.n_params},)"
        )
    rows = theta.reshape(-1, 6)
    data = desc.text.encode("utf-8")
    edits = []
    for joint, row in zip(desc.joints, rows):
        edits.extend(_patch_origin(data, joint, tuple(row[3:]), tuple(row[:3])))
    if desc.ball_appended:
        ball = rows[-1]
        block = (
            f'  <link name="{BALL_LINK}"/>\n'
            f'  <joint name="{BALL_JOINT}" type="fixed">\n'
            f'    <parent link="{desc.tip_link}"/>\n'
            f'    <child link="{BALL_LINK}"/>\n'
            f'    <origin xyz="{_fmt(ball[3:])}" rpy="{_fmt(ball[:3])}"/>\n'
            f"  </joint>\n"
        ).encode()
        end = desc._robot.end_offset
        line_start = data.rfind(b"\n", 0, end) + 1
        at = line_start if not data[line_start:end].strip() else end
        edits.append((at, at, block))
    for start, stop, repl in sorted(edits, key=lambda e: e[0], reverse=True):
        data = data[:start] + repl + data[stop:]
    return data.decode("utf-8")


def calibrated_tip(desc: RobotDescription) -> Tuple[str, Optional[tuple]]:
    """``(tip_link, ball_offset)`` to use when re-parsing written output."""
    if desc.ball_appended:
        return BALL_LINK, None
    return desc.tip_link, None
