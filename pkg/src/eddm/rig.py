"""Joint hierarchies, poses and skinning matrices.

Local transforms compose as ``T @ R @ Sh @ S``. A scale-compensating joint
cancels its parent's local scale right after its own translation, so the
joint still rides on the parent's scaled segment but does not inherit the
scale itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .numerics import AffineTransform


class RigError(ValueError):
    pass


class ZeroScale(RigError):
    pass


class SingularBind(RigError):
    pass


def quat_to_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix from a unit quaternion in ``(x, y, z, w)`` order."""
    x, y, z, w = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def shear_matrix(shear: ArrayLike) -> NDArray[np.float64]:
    """Upper-triangular shear from ``(xy, xz, yz)`` factors."""
    xy, xz, yz = np.asarray(shear, dtype=np.float64)
    return np.array([[1.0, xy, xz], [0.0, 1.0, yz], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class LocalTransform:
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)
    r: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    s: tuple[float, float, float] = (1.0, 1.0, 1.0)
    shear: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name, size in (("t", 3), ("r", 4), ("s", 3), ("shear", 3)):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != size or not all(np.isfinite(vals)):
                raise RigError(f"{name} must hold {size} finite numbers, got {getattr(self, name)!r}")
            object.__setattr__(self, name, vals)
        if abs(float(np.linalg.norm(self.r)) - 1.0) > 1e-9:
            raise RigError(f"rotation quaternion {self.r} is not normalised")
        if any(v == 0.0 for v in self.s):
            raise ZeroScale(f"scale components must be nonzero, got {self.s}")

    def linear_without_translation(self) -> NDArray[np.float64]:
        return quat_to_matrix(self.r) @ shear_matrix(self.shear) @ np.diag(self.s)

    def affine(self) -> AffineTransform:
        return AffineTransform(self.linear_without_translation(), np.array(self.t))

    def to_json(self) -> dict:
        out = {"t": list(self.t), "r": list(self.r), "s": list(self.s)}
        if any(self.shear):
            out["shear"] = list(self.shear)
        return out

    @classmethod
    def from_json(cls, obj: dict, default: LocalTransform | None = None) -> LocalTransform:
        base = default or cls()
        return cls(
            t=obj.get("t", base.t),
            r=obj.get("r", base.r),
            s=obj.get("s", base.s),
            shear=obj.get("shear", base.shear),
        )


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None = None
    bind_local: LocalTransform = field(default_factory=LocalTransform)
    scale_compensate: bool = False


@dataclass(frozen=True)
class JointHierarchy:
    joints: tuple[Joint, ...]

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        names = [j.name for j in joints]
        if len(set(names)) != len(names):
            raise RigError("joint names must be unique")
        n = len(joints)
        for k, j in enumerate(joints):
            if j.parent is not None and not 0 <= j.parent < n:
                raise RigError(f"joint {j.name!r} has invalid parent {j.parent}")
            if j.parent == k:
                raise RigError(f"joint {j.name!r} is its own parent")
        object.__setattr__(self, "_order", self._topological_order())

    def _topological_order(self) -> tuple[int, ...]:
        children: dict[int | None, list[int]] = {}
        for k, j in enumerate(self.joints):
            children.setdefault(j.parent, []).append(k)
        order: list[int] = []
        stack = list(reversed(children.get(None, [])))
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(children.get(k, [])))
        if len(order) != len(self.joints):
            raise RigError("joint parents contain a cycle")
        return tuple(order)

    @property
    def order(self) -> tuple[int, ...]:
        return self._order  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.joints)

    def index(self, name: str) -> int:
        for k, j in enumerate(self.joints):
            if j.name == name:
                return k
        raise RigError(f"unknown joint {name!r}")

    def bind_pose(self) -> Pose:
        return Pose(tuple(j.bind_local for j in self.joints))


@dataclass(frozen=True)
class Pose:
    locals: tuple[LocalTransform, ...]

    def __len__(self) -> int:
        return len(self.locals)

    def with_joint(self, index: int, **changes) -> Pose:
        items = list(self.locals)
        items[index] = replace(items[index], **changes)
        return Pose(tuple(items))


def world_transforms(h: JointHierarchy, pose: Pose) -> list[AffineTransform]:
    """World transform of every joint for ``pose``."""
    if len(pose) != len(h):
        raise RigError(f"pose has {len(pose)} joints, hierarchy has {len(h)}")
    world: list[AffineTransform | None] = [None] * len(h)
    for k in h.order:
        joint, local = h.joints[k], pose.locals[k]
        lin = local.linear_without_translation()
        if joint.parent is None:
            parent = AffineTransform.identity()
        else:
            parent = world[joint.parent]
            if joint.scale_compensate:
                ps = np.array(pose.locals[joint.parent].s)
                if np.any(ps == 0.0):
                    raise ZeroScale(f"parent of {joint.name!r} has zero scale {tuple(ps)}")
                lin = np.diag(1.0 / ps) @ lin
        world[k] = parent @ AffineTransform(lin, np.array(local.t))
    return world  # type: ignore[return-value]


def skinning_matrices(h: JointHierarchy, pose: Pose) -> list[AffineTransform]:
    """``M_j = world(pose)_j @ world(bind)_j^-1``; identity wherever the pose matches bind."""
    bind = world_transforms(h, h.bind_pose())
    cur = world_transforms(h, pose)
    out = []
    for b, c in zip(bind, cur):
        if np.array_equal(b.linear, c.linear) and np.array_equal(b.translation, c.translation):
            out.append(AffineTransform.identity())
            continue
        if abs(np.linalg.det(b.linear)) <= 1e-12 * max(1.0, float(np.abs(b.linear).max()) ** 3):
            raise SingularBind("bind world transform is not invertible")
        out.append(c @ b.inverse())
    return out


def load_rig(text: str | bytes) -> JointHierarchy:
    data = json.loads(text)
    joints = []
    for k, obj in enumerate(data["joints"]):
        parent = obj.get("parent", -1)
        parent = None if parent is None or parent < 0 else int(parent)
        joints.append(
            Joint(
                name=str(obj.get("name", f"joint{k}")),
                parent=parent,
                bind_local=LocalTransform.from_json(obj.get("bind_local", {})),
                scale_compensate=bool(obj.get("scale_compensate", False)),
            )
        )
    return JointHierarchy(tuple(joints))


def dump_rig(h: JointHierarchy) -> str:
    joints = [
        {
            "name": j.name,
            "parent": -1 if j.parent is None else j.parent,
            "bind_local": j.bind_local.to_json(),
            "scale_compensate": j.scale_compensate,
        }
        for j in h.joints
    ]
    return json.dumps({"joints": joints}, indent=2)


def load_pose(text: str | bytes, h: JointHierarchy) -> Pose:
    """Parse a pose file; joints that are not listed keep their bind-local values."""
    data = json.loads(text)
    items = list(h.bind_pose().locals)
    for obj in data["pose"]:
        k = h.index(obj["joint"])
        items[k] = LocalTransform.from_json(obj, default=items[k])
    return Pose(tuple(items))


def dump_pose(h: JointHierarchy, pose: Pose, joints: Sequence[int] | None = None) -> str:
    which = range(len(h)) if joints is None else joints
    entries = [{"joint": h.joints[k].name, **pose.locals[k].to_json()} for k in which]
    return json.dumps({"pose": entries}, indent=2)
