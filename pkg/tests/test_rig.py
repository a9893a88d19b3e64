import json

import numpy as np
import pytest

from eddm.numerics import AffineTransform
from eddm.rig import (
    Joint,
    JointHierarchy,
    LocalTransform,
    Pose,
    RigError,
    SingularBind,
    ZeroScale,
    dump_pose,
    dump_rig,
    load_pose,
    load_rig,
    quat_to_matrix,
    shear_matrix,
    skinning_matrices,
    world_transforms,
)
from eddm.scenarios import fig1

from conftest import random_unit_quat


def homogeneous(local: LocalTransform) -> np.ndarray:
    """Explicit 4x4 product T @ R @ Sh @ S."""
    t = np.eye(4)
    t[:3, 3] = local.t
    r = np.eye(4)
    r[:3, :3] = quat_to_matrix(local.r)
    sh = np.eye(4)
    sh[:3, :3] = shear_matrix(local.shear)
    s = np.diag([*local.s, 1.0])
    return t @ r @ sh @ s


def chain(compensate: bool) -> JointHierarchy:
    return JointHierarchy(
        (
            Joint("root", None, LocalTransform(t=(0.0, 1.0, 0.0))),
            Joint("child", 0, LocalTransform(t=(0.0, 2.0, 0.0)), scale_compensate=compensate),
        )
    )


class TestLocalTransform:
    def test_quaternion_convention(self):
        q = (0.0, 0.0, np.sin(np.pi / 4), np.cos(np.pi / 4))
        np.testing.assert_allclose(quat_to_matrix(q), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_unnormalised_quaternion(self):
        with pytest.raises(RigError):
            LocalTransform(r=(0.0, 0.0, 0.0, 1.1))

    def test_zero_scale(self):
        with pytest.raises(ZeroScale):
            LocalTransform(s=(1.0, 0.0, 1.0))

    def test_affine_matches_explicit_product(self):
        rng = np.random.default_rng(0)
        local = LocalTransform(t=(1.0, -2.0, 0.5), r=random_unit_quat(rng), s=(1.5, 0.5, -2.0), shear=(0.2, -0.1, 0.3))
        np.testing.assert_allclose(local.affine().matrix(), homogeneous(local), atol=1e-14)

    def test_json_round_trip(self):
        local = LocalTransform(t=(1.0, 2.0, 3.0), s=(2.0, 1.0, 1.0), shear=(0.1, 0.0, 0.0))
        assert LocalTransform.from_json(json.loads(json.dumps(local.to_json()))) == local


class TestHierarchy:
    def test_unique_names(self):
        with pytest.raises(RigError):
            JointHierarchy((Joint("a"), Joint("a")))

    def test_cycle(self):
        with pytest.raises(RigError):
            JointHierarchy((Joint("a", 1), Joint("b", 0)))

    def test_order_parents_first(self):
        h = JointHierarchy((Joint("leaf", 2), Joint("root"), Joint("mid", 1)))
        pos = {k: i for i, k in enumerate(h.order)}
        assert pos[1] < pos[2] < pos[0]
        assert h.index("mid") == 2
        with pytest.raises(RigError):
            h.index("nope")


class TestWorldTransforms:
    def test_bind_pose_composes_bind_locals(self):
        h = chain(False)
        w = world_transforms(h, h.bind_pose())
        np.testing.assert_allclose(w[1].translation, [0.0, 3.0, 0.0])

    def test_compensating_child_has_unit_scale(self):
        h = chain(True)
        pose = h.bind_pose().with_joint(0, s=(2.0, 2.0, 2.0))
        w = world_transforms(h, pose)
        np.testing.assert_allclose(np.linalg.svd(w[1].linear, compute_uv=False), 1.0, atol=1e-15)
        # still rides on the scaled parent segment
        np.testing.assert_allclose(w[1].translation, [0.0, 5.0, 0.0])

    def test_propagating_child_inherits_scale(self):
        h = chain(False)
        pose = h.bind_pose().with_joint(0, s=(2.0, 2.0, 2.0))
        w = world_transforms(h, pose)
        np.testing.assert_allclose(np.linalg.svd(w[1].linear, compute_uv=False), 2.0, atol=1e-15)

    def test_explicit_chain_oracle(self):
        rng = np.random.default_rng(1)
        h = JointHierarchy(
            (
                Joint("a", None),
                Joint("b", 0, scale_compensate=True),
                Joint("c", 1),
                Joint("d", 0),
            )
        )
        locs = tuple(
            LocalTransform(
                t=rng.normal(size=3), r=random_unit_quat(rng), s=rng.uniform(0.5, 2.0, 3), shear=rng.uniform(-0.3, 0.3, 3)
            )
            for _ in range(4)
        )
        w = world_transforms(h, Pose(locs))
        mats = [homogeneous(l) for l in locs]

        def at_origin_compensation(k, parent):
            # T_k @ diag(1/s_parent) @ (R Sh S)_k
            m = mats[k].copy()
            m[:3, :3] = np.diag(1.0 / np.array(locs[parent].s)) @ m[:3, :3]
            return m

        expected = [
            mats[0],
            mats[0] @ at_origin_compensation(1, 0),
            mats[0] @ at_origin_compensation(1, 0) @ mats[2],
            mats[0] @ mats[3],
        ]
        for got, ref in zip(w, expected):
            np.testing.assert_allclose(got.matrix(), ref, atol=1e-12)

    def test_joint_count_mismatch(self):
        h = chain(False)
        with pytest.raises(RigError):
            world_transforms(h, Pose(h.bind_pose().locals[:1]))


class TestSkinningMatrices:
    def test_bind_is_exact_identity(self):
        sc = fig1()
        for m in skinning_matrices(sc.rig, sc.rig.bind_pose()):
            np.testing.assert_array_equal(m.matrix(), np.eye(4))

    def test_root_translation(self):
        h = JointHierarchy((Joint("root", None, LocalTransform(t=(0.5, 0.0, 0.0), s=(2.0, 1.0, 1.0))),))
        pose = h.bind_pose().with_joint(0, t=(0.5, 1.0, 0.0))
        (m,) = skinning_matrices(h, pose)
        np.testing.assert_allclose(m.matrix(), AffineTransform(np.eye(3), np.array([0.0, 1.0, 0.0])).matrix(), atol=1e-15)

    def test_fig1_matrices(self):
        sc = fig1()
        m1, m2 = skinning_matrices(sc.rig, sc.pose)
        third = sc.params.length / 3.0
        # joint 1 stretches Y about its own origin at y = L/3
        np.testing.assert_allclose(m1.linear, np.diag([1.0, 2.0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(m1.translation, [0.0, -third, 0.0], atol=1e-15)
        # joint 2 sits at the stretched end of segment 1 and scales by 0.5 about itself
        np.testing.assert_allclose(m2.linear, 0.5 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(m2.apply([[0.0, 2 * third, 0.0]]), [[0.0, 3 * third, 0.0]], atol=1e-15)

    def test_global_root_motion_prefixes_every_matrix(self):
        rng = np.random.default_rng(2)
        sc = fig1()
        g_r = random_unit_quat(rng)
        g = AffineTransform(quat_to_matrix(g_r), np.array([0.3, -1.0, 2.0]))
        root = sc.rig.bind_pose().locals[0]
        moved = sc.pose.with_joint(0, t=g.apply([root.t])[0], r=tuple(_qmul(g_r, root.r)))
        for a, b in zip(skinning_matrices(sc.rig, moved), skinning_matrices(sc.rig, sc.pose)):
            np.testing.assert_allclose(a.matrix(), (g @ b).matrix(), atol=1e-12)

    def test_singular_bind(self):
        h = JointHierarchy((Joint("root"), Joint("c", 0, LocalTransform(s=(1e-9, 1e-9, 1e-9)))))
        pose = h.bind_pose().with_joint(1, t=(1.0, 0.0, 0.0))
        with pytest.raises(SingularBind):
            skinning_matrices(h, pose)


def _qmul(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    )


class TestJson:
    def test_rig_round_trip(self):
        sc = fig1()
        assert load_rig(dump_rig(sc.rig)) == sc.rig

    def test_pose_round_trip(self):
        sc = fig1()
        assert load_pose(dump_pose(sc.rig, sc.pose), sc.rig) == sc.pose

    def test_omitted_joints_keep_bind(self):
        sc = fig1()
        text = json.dumps({"pose": [{"joint": "joint2", "s": [0.5, 0.5, 0.5]}]})
        pose = load_pose(text, sc.rig)
        assert pose.locals[0] == sc.rig.bind_pose().locals[0]
        assert pose.locals[1].s == (0.5, 0.5, 0.5)
        assert pose.locals[1].t == sc.rig.joints[1].bind_local.t

    def test_unknown_joint(self):
        sc = fig1()
        with pytest.raises(RigError):
            load_pose(json.dumps({"pose": [{"joint": "ghost"}]}), sc.rig)

    def test_fig1_pose_file_scales(self):
        sc = fig1()
        data = json.loads(dump_pose(sc.rig, sc.pose))["pose"]
        assert data[0]["s"] == [1.0, 2.0, 1.0]
        assert data[1]["s"] == [0.5, 0.5, 0.5]
