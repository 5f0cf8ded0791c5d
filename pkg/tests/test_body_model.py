import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bodybench.body_model import (
    JOINT_GROUPS, NUM_JOINTS, SMPLX_PARENTS, BodyModelDef, KinematicTree, forward_kinematics,
    make_toy_model, model_keypoints, posed_vertex_keypoints, regress_rest_joints, rodrigues,
    rotation_to_axis_angle, shaped_vertices, skin,
)
from bodybench.errors import DimensionError, ValidationError

finite = st.floats(-6.0, 6.0, allow_nan=False, allow_infinity=False)
axis_angles = arrays(np.float64, 3, elements=finite)


def quaternion_rotation(aa):
    """Independent oracle: unit quaternion -> rotation matrix."""
    theta = np.linalg.norm(aa)
    if theta == 0:
        return np.eye(3)
    w = np.cos(theta / 2)
    x, y, z = np.sin(theta / 2) * np.asarray(aa) / theta
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def homogeneous(R=np.eye(3), t=np.zeros(3)):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


# -- layout -------------------------------------------------------------------

def test_smplx_layout_counts():
    assert len(SMPLX_PARENTS) == NUM_JOINTS == 55
    sizes = {k: len(v) for k, v in JOINT_GROUPS.items()}
    assert sizes == {"global": 1, "body": 21, "jaw": 1, "eyes": 2, "left_hand": 15, "right_hand": 15}
    assert KinematicTree.smplx().joint_count == 55


@pytest.mark.parametrize("parents", [(), (0,), (-1, -1), (-1, 2, 0), (-1, 1)])
def test_malformed_tree_rejected(parents):
    with pytest.raises(ValidationError) as info:
        KinematicTree(parents)
    assert info.value.code == "malformed_tree"


# -- rodrigues ------------------------------------------------------------------

def test_rodrigues_zero_is_identity():
    assert np.array_equal(rodrigues(np.zeros(3)), np.eye(3))


def test_rodrigues_half_turn_about_x():
    np.testing.assert_allclose(rodrigues([np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_rodrigues_matches_quaternion_oracle(rng):
    aa = rng.normal(scale=2.0, size=(500, 3))
    ours = rodrigues(aa)
    for a, R in zip(aa, ours):
        np.testing.assert_allclose(R, quaternion_rotation(a), atol=1e-12)


def test_rodrigues_small_angle_branch_is_continuous():
    axis = np.array([0.3, -0.4, 0.5]) / np.linalg.norm([0.3, -0.4, 0.5])
    for angle in (0.99e-8, 1e-8, 1.01e-8):
        np.testing.assert_allclose(rodrigues(axis * angle), quaternion_rotation(axis * angle),
                                   atol=1e-16)


@given(axis_angles)
def test_rodrigues_is_a_rotation(aa):
    R = rodrigues(aa)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-10
    assert abs(np.linalg.det(R) - 1.0) < 1e-10


@given(axis_angles)
def test_axis_angle_inverse_recovers_rotation(aa):
    back = rotation_to_axis_angle(rodrigues(aa))
    assert np.linalg.norm(back) <= np.pi + 1e-12
    np.testing.assert_allclose(rodrigues(back), rodrigues(aa), atol=1e-9)


def test_axis_angle_inverse_canonical_representative(rng):
    # inside the open ball of radius pi the representative is the input itself
    aa = rng.normal(size=(200, 3))
    aa *= (rng.uniform(0.0, 3.0, size=(200, 1)) / np.linalg.norm(aa, axis=1, keepdims=True))
    np.testing.assert_allclose(rotation_to_axis_angle(rodrigues(aa)), aa, atol=1e-9)


# -- shaping and regression ------------------------------------------------------

def test_rest_joints_at_zero_shape(toy):
    np.testing.assert_allclose(regress_rest_joints(toy, np.zeros(10)),
                               toy.joint_regressor @ toy.template, atol=1e-12)


def test_one_hot_beta_on_pure_z_offset_basis():
    base = make_toy_model(verts_per_joint=2, seed=1)
    basis = np.zeros_like(base.shape_basis)
    basis[:, 2, 0] = 5.0
    model = BodyModelDef(base.template, basis, base.joint_regressor, base.skinning_weights,
                         base.tree, part_masks=base.part_masks)
    beta = np.eye(10)[0]
    shift = regress_rest_joints(model, beta) - regress_rest_joints(model, np.zeros(10))
    np.testing.assert_allclose(shift, np.tile([0.0, 0.0, 5.0], (55, 1)), atol=1e-12)


def test_rest_joints_match_brute_force(toy, rng):
    beta, psi = rng.normal(size=10), rng.normal(size=10)
    coeffs = np.concatenate([beta, psi])
    V, J = toy.vertex_count, toy.joint_count
    verts = [[toy.template[v, k] + sum(toy.shape_basis[v, k, c] * coeffs[c] for c in range(20))
              for k in range(3)] for v in range(V)]
    expected = [[sum(toy.joint_regressor[j, v] * verts[v][k] for v in range(V)) for k in range(3)]
                for j in range(J)]
    np.testing.assert_allclose(regress_rest_joints(toy, beta, psi), expected, atol=1e-9)


def test_coefficient_length_checked(toy):
    with pytest.raises(DimensionError):
        shaped_vertices(toy, np.zeros(9))
    with pytest.raises(DimensionError):
        shaped_vertices(toy, np.zeros(10), np.zeros(3))


# -- forward kinematics -------------------------------------------------------------

def test_fk_identity_rotations_place_joints_at_rest(toy):
    joints = regress_rest_joints(toy, np.zeros(10))
    world = forward_kinematics(toy.tree, np.broadcast_to(np.eye(3), (55, 3, 3)), joints)
    np.testing.assert_allclose(world[:, :3, :3], np.broadcast_to(np.eye(3), (55, 3, 3)))
    np.testing.assert_allclose(world[:, :3, 3], joints, atol=1e-12)


def test_fk_root_rotation_rotates_all_joints(toy, rng):
    joints = regress_rest_joints(toy, rng.normal(size=10))
    rots = np.broadcast_to(np.eye(3), (55, 3, 3)).copy()
    R = rodrigues(rng.normal(size=3))
    rots[0] = R
    world = forward_kinematics(toy.tree, rots, joints)
    # root sits at its rest location; downstream joints rotate about it
    expected = (joints - joints[0]) @ R.T + joints[0]
    np.testing.assert_allclose(world[:, :3, 3], expected, atol=1e-9)


def test_fk_three_joint_chain_hand_worked():
    parents = (-1, 0, 1)
    rest = np.array([[0.0, 0.0, 0.0], [0.0, 100.0, 0.0], [0.0, 200.0, 0.0]])
    Rz90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Rx90 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    local = np.stack([Rz90, Rx90, np.eye(3)])
    world = forward_kinematics(parents, local, rest)

    G0 = homogeneous(Rz90, rest[0])
    G1 = G0 @ homogeneous(Rx90, rest[1] - rest[0])
    G2 = G1 @ homogeneous(np.eye(3), rest[2] - rest[1])
    np.testing.assert_allclose(world, np.stack([G0, G1, G2]), atol=1e-12)
    # worked by hand: the root's quarter turn about z sends +y to -x
    np.testing.assert_allclose(world[1, :3, 3], [-100.0, 0.0, 0.0], atol=1e-12)
    # joint 1 bends the next segment about x: +y -> +z, then the root turn leaves z alone
    np.testing.assert_allclose(world[2, :3, 3], [-100.0, 0.0, 100.0], atol=1e-12)
    np.testing.assert_allclose(world[2, :3, :3], Rz90 @ Rx90, atol=1e-12)


# -- skinning -----------------------------------------------------------------------

def test_zero_pose_gives_template(toy):
    np.testing.assert_allclose(skin(toy, np.zeros((55, 3)), np.zeros(10)), toy.template, atol=1e-12)


def test_one_joint_one_vertex_closed_form(rng):
    joint = np.array([10.0, -20.0, 30.0])
    vertex = np.array([[15.0, 5.0, -2.0]])
    model = BodyModelDef(vertex, np.zeros((1, 3, 1)), np.array([[1.0]]), np.array([[1.0]]),
                         KinematicTree((-1,)), num_betas=1)
    # regressor maps the single vertex onto itself, so the joint is the vertex
    aa = rng.normal(size=(1, 3))
    out = skin(model, aa, np.zeros(1))
    np.testing.assert_allclose(out, vertex, atol=1e-12)

    # two vertices, the second one defines the joint
    tpl = np.vstack([vertex, joint])
    model = BodyModelDef(tpl, np.zeros((2, 3, 1)), np.array([[0.0, 1.0]]), np.ones((2, 1)),
                         KinematicTree((-1,)), num_betas=1)
    R = rodrigues(aa[0])
    out = skin(model, aa, np.zeros(1))
    np.testing.assert_allclose(out[0], R @ (vertex[0] - joint) + joint, atol=1e-12)
    np.testing.assert_allclose(out[1], joint, atol=1e-12)


def _random_pose(rng, n=None, scale=0.4):
    shape = (55, 3) if n is None else (n, 55, 3)
    return rng.normal(scale=scale, size=shape)


def test_global_rotation_equivariance(toy, rng):
    for _ in range(20):
        pose, beta = _random_pose(rng), rng.normal(size=10)
        R = rodrigues(rng.normal(size=3))
        base = skin(toy, pose, beta)
        rotated_pose = pose.copy()
        rotated_pose[0] = rotation_to_axis_angle(R @ rodrigues(pose[0]))
        root = regress_rest_joints(toy, beta)[0]
        expected = (base - root) @ R.T + root
        out = skin(toy, rotated_pose, beta)
        assert np.max(np.abs(out - expected)) <= 1e-9 * np.max(np.abs(expected))


@pytest.mark.parametrize("correctives", [False, True])
def test_beta_affinity(rng, correctives):
    model = make_toy_model(seed=5, pose_correctives=correctives)
    pose = _random_pose(rng)
    b1, b2 = rng.normal(size=10), rng.normal(size=10)

    def V(b):
        return skin(model, pose, b, pose_correctives=correctives)

    resid = V(b1 + b2) - V(b1) - V(b2) + V(np.zeros(10))
    assert np.max(np.abs(resid)) < 1e-9


def test_pose_correctives_off_by_default():
    model = make_toy_model(seed=5, pose_correctives=True)
    pose = np.zeros((55, 3))
    pose[4] = [0.5, 0.0, 0.0]
    with_c = skin(model, pose, np.zeros(10), pose_correctives=True)
    without = skin(model, pose, np.zeros(10))
    assert not np.allclose(with_c, without)
    # correctives vanish at rest pose
    np.testing.assert_allclose(skin(model, np.zeros((55, 3)), np.zeros(10), pose_correctives=True),
                               model.template, atol=1e-12)


def test_batched_skin_matches_loop(toy, rng):
    pose, beta = _random_pose(rng, 4), rng.normal(size=(4, 10))
    batched = skin(toy, pose, beta)
    for i in range(4):
        np.testing.assert_allclose(batched[i], skin(toy, pose[i], beta[i]), atol=1e-12)


def test_translation_is_added(toy, rng):
    pose, beta, t = _random_pose(rng), rng.normal(size=10), np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(skin(toy, pose, beta, transl=t), skin(toy, pose, beta) + t)


def test_pose_shape_checked(toy):
    with pytest.raises(DimensionError):
        skin(toy, np.zeros((54, 3)), np.zeros(10))
    with pytest.raises(ValidationError):
        skin(toy, np.full((55, 3), np.nan), np.zeros(10))


# -- keypoints ------------------------------------------------------------------------

def test_keypoints_zero_pose_are_rest_joints(toy, rng):
    beta = rng.normal(size=10)
    np.testing.assert_allclose(model_keypoints(toy, np.zeros((55, 3)), beta),
                               regress_rest_joints(toy, beta), atol=1e-12)


def test_keypoints_root_rotation(toy, rng):
    beta = rng.normal(size=10)
    pose = np.zeros((55, 3))
    pose[0] = rng.normal(size=3)
    joints = regress_rest_joints(toy, beta)
    R = rodrigues(pose[0])
    np.testing.assert_allclose(model_keypoints(toy, pose, beta), (joints - joints[0]) @ R.T + joints[0],
                               atol=1e-9)


def test_keypoints_equal_skinned_virtual_vertices(toy, rng):
    """Oracle: one virtual vertex per joint, at the regressed joint, fully bound to it."""
    virtual = BodyModelDef(
        template=toy.joint_regressor @ toy.template,
        shape_basis=np.einsum("jv,vkc->jkc", toy.joint_regressor, toy.shape_basis),
        joint_regressor=np.eye(55),
        skinning_weights=np.eye(55),
        tree=toy.tree,
    )
    for _ in range(10):
        pose, beta, psi = _random_pose(rng, scale=0.8), rng.normal(size=10), rng.normal(size=10)
        np.testing.assert_allclose(model_keypoints(toy, pose, beta, psi),
                                   skin(virtual, pose, beta, psi), atol=1e-9)


def test_posed_vertex_keypoints_brute_force(toy, rng):
    pose, beta = _random_pose(rng), rng.normal(size=10)
    verts = skin(toy, pose, beta)
    expected = np.array([sum(toy.joint_regressor[j, v] * verts[v] for v in range(toy.vertex_count))
                         for j in range(55)])
    np.testing.assert_allclose(posed_vertex_keypoints(toy, pose, beta), expected, atol=1e-9)


# -- model validation ---------------------------------------------------------------------

def test_model_rejects_non_partition_weights(toy):
    w = toy.skinning_weights.copy()
    w[0, 0] += 0.01
    with pytest.raises(ValidationError) as info:
        BodyModelDef(toy.template, toy.shape_basis, toy.joint_regressor, w, toy.tree)
    assert info.value.code == "partition"


def test_model_rejects_overlapping_masks(toy):
    with pytest.raises(ValidationError):
        BodyModelDef(toy.template, toy.shape_basis, toy.joint_regressor, toy.skinning_weights,
                     toy.tree, part_masks={"a": [0, 1], "b": [1, 2]})


def test_toy_model_part_masks_cover_all_vertices(toy):
    covered = np.sort(np.concatenate(list(toy.part_masks.values())))
    np.testing.assert_array_equal(covered, np.arange(toy.vertex_count))
    assert set(toy.part_masks) == {"body", "left_hand", "right_hand", "face"}


def test_expression_only_moves_face(toy, rng):
    psi = rng.normal(size=10)
    delta = shaped_vertices(toy, np.zeros(10), psi) - toy.template
    non_face = np.setdiff1d(np.arange(toy.vertex_count), toy.part_masks["face"])
    assert np.all(delta[non_face] == 0)
    assert np.any(delta[toy.part_masks["face"]] != 0)
