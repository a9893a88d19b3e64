"""Generated fixtures: capped tubes, two-joint chains and a sliver-heavy stress mesh."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deform import SkinWeights
from .mesh import TriMesh
from .rig import Joint, JointHierarchy, LocalTransform, Pose


@dataclass(frozen=True)
class TubeParams:
    radial: int = 24
    height: int = 48
    radius: float = 1.0
    length: float = 6.0

    def __post_init__(self):
        if self.radial < 3 or self.height < 1 or self.radius <= 0 or self.length <= 0:
            raise ValueError(f"tube parameters must be positive: {self}")


@dataclass(frozen=True)
class Scenario:
    name: str
    mesh: TriMesh
    rig: JointHierarchy
    weights: SkinWeights
    pose: Pose
    extra_poses: dict[str, Pose] = field(default_factory=dict)
    params: TubeParams | None = None


def capped_tube(params: TubeParams = TubeParams()) -> TriMesh:
    """Closed tube along +Y from ``y = 0`` to ``y = length`` with fan caps, outward winding."""
    nr, nh = params.radial, params.height
    theta = 2.0 * np.pi * np.arange(nr) / nr
    ys = np.linspace(0.0, params.length, nh + 1)
    ring = np.stack([params.radius * np.cos(theta), np.zeros(nr), params.radius * np.sin(theta)], axis=1)
    pos = np.concatenate([ring + [0.0, y, 0.0] for y in ys])
    bottom, top = len(pos), len(pos) + 1
    pos = np.concatenate([pos, [[0.0, 0.0, 0.0], [0.0, params.length, 0.0]]])

    tris = []
    for k in range(nh):
        for s in range(nr):
            a, b = k * nr + s, k * nr + (s + 1) % nr
            c, d = a + nr, b + nr
            tris += [(a, c, b), (b, c, d)]
    last = nh * nr
    for s in range(nr):
        tris.append((bottom, s, (s + 1) % nr))
        tris.append((top, last + (s + 1) % nr, last + s))
    return TriMesh(pos, np.array(tris))


def smoothstep(x):
    t = np.clip(x, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def two_joint_chain(length: float, compensate: bool = True) -> JointHierarchy:
    third = length / 3.0
    return JointHierarchy(
        (
            Joint("joint1", None, LocalTransform(t=(0.0, third, 0.0))),
            Joint("joint2", 0, LocalTransform(t=(0.0, third, 0.0)), scale_compensate=compensate),
        )
    )


def ramp_weights(mesh: TriMesh, length: float) -> SkinWeights:
    """Joint 1 below ``length/3``, joint 2 above ``2 length/3``, smoothstep between."""
    third = length / 3.0
    w2 = smoothstep((mesh.positions[:, 1] - third) / third)
    return SkinWeights.from_dense(np.stack([1.0 - w2, w2], axis=1))


def fig1(params: TubeParams = TubeParams()) -> Scenario:
    """First joint stretched 2x along Y, second joint scaled uniformly by 0.5."""
    mesh = capped_tube(params)
    rig = two_joint_chain(params.length)
    bind = rig.bind_pose()
    pose = bind.with_joint(0, s=(1.0, 2.0, 1.0)).with_joint(1, s=(0.5, 0.5, 0.5))
    # same rotations/translations with unit scale, for the rigid reduction check
    c, s = np.cos(0.4), np.sin(0.4)
    rigid = bind.with_joint(0, r=(0.0, 0.0, np.sin(0.2), np.cos(0.2))).with_joint(
        1, r=(np.sin(0.35), 0.0, 0.0, np.cos(0.35)), t=(0.1 * c, params.length / 3.0, 0.1 * s)
    )
    return Scenario("fig1", mesh, rig, ramp_weights(mesh, params.length), pose, {"rigid": rigid}, params)


def fig2(params: TubeParams = TubeParams()) -> Scenario:
    """Single joint scaled uniformly by 3; every vertex fully bound to it."""
    mesh = capped_tube(params)
    rig = JointHierarchy((Joint("joint1", None, LocalTransform(t=(0.0, params.length / 2.0, 0.0))),))
    pose = rig.bind_pose().with_joint(0, s=(3.0, 3.0, 3.0))
    weights = SkinWeights.from_dense(np.ones((mesh.n_vertices, 1)))
    return Scenario("fig2", mesh, rig, weights, pose, {}, params)


def stress(
    segments: int = 720, radius: float = 1.0, apex: float = 1.5, base: float = 1.0, wave: float = 0.2
) -> Scenario:
    """Bicone whose two high-valence fans are made of sub-degree sliver triangles.

    The shared ring undulates in Y (three lobes) so that smoothed one-ring
    neighbourhoods, which the sliver cotangents confine to the ring, stay
    non-planar.
    """
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack(
        [radius * np.cos(theta), wave * np.sin(3.0 * theta), radius * np.sin(theta)], axis=1
    )
    top, bottom = segments, segments + 1
    pos = np.concatenate([ring, [[0.0, apex, 0.0], [0.0, -base, 0.0]]])
    tris = []
    for s in range(segments):
        n = (s + 1) % segments
        tris.append((top, n, s))
        tris.append((bottom, s, n))
    mesh = TriMesh(pos, np.array(tris))

    rig = JointHierarchy(
        (
            Joint("joint1", None, LocalTransform(t=(0.0, -base / 2.0, 0.0))),
            Joint("joint2", 0, LocalTransform(t=(0.0, base / 2.0 + apex / 2.0, 0.0)), scale_compensate=True),
        )
    )
    w2 = smoothstep((pos[:, 1] + base / 2.0) / (base / 2.0 + apex / 2.0))
    weights = SkinWeights.from_dense(np.stack([1.0 - w2, w2], axis=1))
    q = (0.0, 0.0, np.sin(0.15), np.cos(0.15))
    pose = rig.bind_pose().with_joint(0, s=(1.0, 1.5, 1.0)).with_joint(1, s=(0.7, 0.7, 0.7), r=q)
    return Scenario("stress", mesh, rig, weights, pose)


SCENARIOS = {"fig1": fig1, "fig2": fig2, "stress": stress}


def min_angle_degrees(mesh: TriMesh) -> float:
    p = mesh.positions
    t = mesh.triangles
    out = np.inf
    for k in range(3):
        a = p[t[:, (k + 1) % 3]] - p[t[:, k]]
        b = p[t[:, (k + 2) % 3]] - p[t[:, k]]
        cosang = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out = min(out, float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))).min()))
    return out
