import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as SciRot

from real2sim.geometry import RigidTransform, Rotation3, rotvec_to_matrix
from real2sim.kinematics import (HumanBodyState, RobotState, clamp_to_limits, default_robot, default_skeleton,
                                 fk_batch, forward_kinematics, joint_positions, link_position_jacobian,
                                 load_tree, point_jacobian, tree_from_dict)


@pytest.fixture(scope="module")
def robot():
    return default_robot()


@pytest.fixture(scope="module")
def human():
    return default_skeleton()


def chain_oracle(tree, root, q):
    """Naive 4x4 matrix chain, one link at a time, using scipy rotations."""
    out = [root]
    k = 0
    dof = []
    for l in tree.links:
        n = {"fixed": 0, "revolute": 1, "spherical": 3}[l.joint_type] if l.parent >= 0 else 0
        dof.append(q[k:k + n])
        k += n
    for i, l in enumerate(tree.links[1:], start=1):
        off = np.eye(4)
        off[:3, :3] = l.offset_rotation
        off[:3, 3] = l.offset
        jnt = np.eye(4)
        if l.joint_type == "revolute":
            jnt[:3, :3] = SciRot.from_rotvec(l.axis * dof[i][0]).as_matrix()
        elif l.joint_type == "spherical":
            jnt[:3, :3] = SciRot.from_rotvec(dof[i]).as_matrix()
        out.append(out[l.parent] @ off @ jnt)
    return out


def random_q(tree, rng, scale=1.0):
    lo = np.where(np.isfinite(tree.lower), tree.lower, -1.0)
    hi = np.where(np.isfinite(tree.upper), tree.upper, 1.0)
    return lo + (hi - lo) * rng.uniform(size=tree.n_dof) * scale


def test_bundled_models(robot, human):
    assert robot.n_dof == 23
    assert robot.n_feet == 2
    assert len(robot.tracked_links) == 13
    assert human.n_feet == 2
    assert human.n_dof == 3 * len(human.spherical_links)


def test_rest_pose_is_cumulative_offsets(robot):
    P = joint_positions(robot, RobotState(RigidTransform.identity(), np.zeros(23)))
    for i, l in enumerate(robot.links[1:], start=1):
        # offsets carry no rotation in the bundled model, so positions just add up
        np.testing.assert_allclose(P[i], P[l.parent] + l.offset, atol=1e-12)


def test_quarter_turn_single_joint():
    doc = {"format_version": 1, "links": [
        {"name": "base"},
        {"name": "arm", "parent": "base", "joint": {"type": "revolute", "axis": [0, 0, 1]}},
        {"name": "tip", "parent": "arm", "offset": [1, 0, 0]},
    ]}
    tree = tree_from_dict(doc)
    P = joint_positions(tree, RobotState(RigidTransform.identity(), np.array([np.pi / 2])))
    np.testing.assert_allclose(P[2], [0, 1, 0], atol=1e-12)


def test_robot_matches_chain_oracle(robot):
    rng = np.random.default_rng(0)
    for _ in range(20):
        root = RigidTransform(Rotation3.from_rotvec(rng.normal(size=3)), rng.normal(size=3))
        q = random_q(robot, rng)
        fk = forward_kinematics(robot, RobotState(root, q))
        ref = chain_oracle(robot, root.as_matrix(), q)
        for a, b in zip(fk, ref):
            np.testing.assert_allclose(a.as_matrix(), b, atol=1e-9)


def test_human_matches_chain_oracle(human):
    rng = np.random.default_rng(1)
    for _ in range(10):
        phi = Rotation3.from_rotvec(rng.normal(size=3))
        theta = rng.normal(size=human.n_dof) * 0.7
        state = HumanBodyState(gamma=rng.normal(size=3), phi=phi, theta=theta)
        root = RigidTransform(phi, state.gamma).as_matrix()
        ref = chain_oracle(human, root, theta)
        np.testing.assert_allclose(joint_positions(human, state), np.array([m[:3, 3] for m in ref]), atol=1e-9)


def test_fk_equivariance(robot):
    rng = np.random.default_rng(2)
    for _ in range(10):
        root = RigidTransform(Rotation3.from_rotvec(rng.normal(size=3)), rng.normal(size=3))
        T = RigidTransform(Rotation3.from_rotvec(rng.normal(size=3)), rng.normal(size=3))
        q = random_q(robot, rng)
        a = forward_kinematics(robot, RobotState(T @ root, q))
        b = forward_kinematics(robot, RobotState(root, q))
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.as_matrix(), (T @ y).as_matrix(), atol=1e-9)


def test_root_link_is_root_pose(robot):
    root = RigidTransform(Rotation3.from_rotvec([0.2, 0.1, -0.3]), [1, 2, 3])
    fk = forward_kinematics(robot, RobotState(root, np.zeros(23)))
    np.testing.assert_allclose(fk[0].as_matrix(), root.as_matrix(), atol=1e-12)


def test_translation_lifts_joints(human):
    base = HumanBodyState(np.zeros(3), Rotation3.identity(), np.zeros(human.n_dof))
    up = HumanBodyState(np.array([0, 0, 1.0]), Rotation3.identity(), np.zeros(human.n_dof))
    np.testing.assert_allclose(joint_positions(human, up) - joint_positions(human, base),
                               np.tile([0, 0, 1.0], (human.n_links, 1)), atol=1e-12)


def test_beta_homogeneity(human):
    rng = np.random.default_rng(3)
    theta = rng.normal(size=human.n_dof) * 0.5
    phi = Rotation3.from_rotvec([0.1, 0.2, 0.3])
    a = joint_positions(human, HumanBodyState(np.zeros(3), phi, theta, np.ones(human.n_links - 1)))
    b = joint_positions(human, HumanBodyState(np.zeros(3), phi, theta, 2 * np.ones(human.n_links - 1)))
    np.testing.assert_allclose(b, 2 * a, atol=1e-12)


def test_nonpositive_beta_rejected(human):
    with pytest.raises(ValueError):
        HumanBodyState(np.zeros(3), Rotation3.identity(), np.zeros(human.n_dof), np.zeros(human.n_links - 1))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_limb_length_preserved(seed):
    human = default_skeleton()
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=human.n_dof) * 1.5
    state = HumanBodyState(rng.normal(size=3), Rotation3.from_rotvec(rng.normal(size=3)), theta)
    P = joint_positions(human, state)
    for parent, child in human.edges:
        assert abs(np.linalg.norm(P[child] - P[parent]) - human.segment_lengths[child]) < 1e-9


def test_dimension_mismatch(robot):
    with pytest.raises(ValueError):
        forward_kinematics(robot, RobotState(RigidTransform.identity(), np.zeros(22)))


def test_clamp_examples(robot):
    rng = np.random.default_rng(4)
    q = random_q(robot, rng)
    np.testing.assert_array_equal(clamp_to_limits(robot, q), q)
    over = robot.upper + 0.1
    np.testing.assert_array_equal(clamp_to_limits(robot, over), robot.upper)
    wild = rng.normal(size=23) * 5
    expect = [min(max(x, lo), hi) for x, lo, hi in zip(wild, robot.lower, robot.upper)]
    np.testing.assert_array_equal(clamp_to_limits(robot, wild), expect)


def test_continuity(robot):
    rng = np.random.default_rng(5)
    q = random_q(robot, rng)
    dq = rng.normal(size=23)
    dq *= 1e-6 / np.linalg.norm(dq)
    P0 = joint_positions(robot, RobotState(RigidTransform.identity(), q))
    P1 = joint_positions(robot, RobotState(RigidTransform.identity(), q + dq))
    bound = robot.segment_lengths.sum() * 1e-6
    assert np.max(np.linalg.norm(P1 - P0, axis=1)) <= bound


@pytest.mark.parametrize("which", ["robot", "human"])
def test_jacobian_matches_finite_differences(which, robot, human):
    tree = robot if which == "robot" else human
    rng = np.random.default_rng(6)
    T = 3
    root_R = rotvec_to_matrix(rng.normal(size=(T, 3)))
    root_t = rng.normal(size=(T, 3))
    q = np.stack([random_q(tree, rng) for _ in range(T)])
    fk = fk_batch(tree, root_R, root_t, q)
    dq, drot = link_position_jacobian(tree, fk)
    h = 1e-6
    for k in range(tree.n_dof):
        e = np.zeros(tree.n_dof)
        e[k] = h
        num = (fk_batch(tree, root_R, root_t, q + e).P - fk_batch(tree, root_R, root_t, q - e).P) / (2 * h)
        np.testing.assert_allclose(dq[..., k], num, atol=1e-7)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        Rp = rotvec_to_matrix(e) @ root_R
        Rm = rotvec_to_matrix(-e) @ root_R
        num = (fk_batch(tree, Rp, root_t, q).P - fk_batch(tree, Rm, root_t, q).P) / (2 * h)
        np.testing.assert_allclose(drot[..., k], num, atol=1e-7)


def test_point_jacobian_for_attached_point(robot):
    rng = np.random.default_rng(7)
    q = random_q(robot, rng)[None]
    link = robot.index("left_foot")
    local = np.array([0.05, -0.01, 0.02])

    def point(qq):
        fk = fk_batch(robot, np.eye(3), np.zeros(3), qq)
        return fk.P[:, link] + fk.R[:, link] @ local

    fk = fk_batch(robot, np.eye(3), np.zeros(3), q)
    dq, _ = point_jacobian(robot, fk, link, point(q))
    h = 1e-6
    for k in range(23):
        e = np.zeros(23)
        e[k] = h
        np.testing.assert_allclose(dq[0, :, k], ((point(q + e) - point(q - e)) / (2 * h))[0], atol=1e-7)


def test_load_tree_round_trip(tmp_path):
    doc = {"format_version": 1, "name": "tiny", "links": [
        {"name": "base"},
        {"name": "l1", "parent": "base", "offset": [0, 0, 1],
         "joint": {"type": "revolute", "axis": [1, 0, 0], "lower": -1, "upper": 1}},
    ], "foot_links": ["l1"]}
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(doc))
    tree = load_tree(p)
    assert tree.n_dof == 1 and tree.n_feet == 1


@pytest.mark.parametrize("doc", [
    {"format_version": 2, "links": [{"name": "a"}]},
    {"format_version": 1, "links": [{"name": "a"}, {"name": "b"}]},
    {"format_version": 1, "links": [{"name": "a"}, {"name": "b", "parent": "a",
                                                   "joint": {"type": "revolute", "axis": [0, 0, 1],
                                                             "lower": 1, "upper": -1}}]},
])
def test_invalid_descriptions(doc):
    with pytest.raises(ValueError):
        tree_from_dict(doc)
