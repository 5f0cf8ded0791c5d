"""SMPL-X-style parametric body model.

The model is fully data-driven: a :class:`BodyModelDef` holds the template
mesh, the concatenated shape/expression blend basis, the joint regressor,
skinning weights and the kinematic tree.  All lengths are millimetres.

Every function here is pure and accepts either a single sample or a batch
with arbitrary leading dimensions, e.g. ``pose`` of shape ``(55, 3)`` or
``(B, 55, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, ValidationError

# global(1) + body(21) + jaw(1) + eyes(2) + left hand(15) + right hand(15)
SMPLX_PARENTS: tuple[int, ...] = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
    15, 15, 15,
    20, 25, 26, 20, 28, 29, 20, 31, 32, 20, 34, 35, 20, 37, 38,
    21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50, 21, 52, 53,
)
NUM_JOINTS = 55
NUM_BODY_JOINTS = 21
NUM_HAND_JOINTS = 15
NUM_BETAS = 10
NUM_EXPRESSION = 10

# joint-index groups of the default layout
JOINT_GROUPS: dict[str, tuple[int, ...]] = {
    "global": (0,),
    "body": tuple(range(1, 22)),
    "jaw": (22,),
    "eyes": (23, 24),
    "left_hand": tuple(range(25, 40)),
    "right_hand": tuple(range(40, 55)),
}

PART_NAMES = ("body", "left_hand", "right_hand", "face")

_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class KinematicTree:
    """Parent table of a topologically sorted joint hierarchy."""

    parents: tuple[int, ...]

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        object.__setattr__(self, "parents", parents)
        if not parents:
            raise ValidationError("kinematic tree has no joints", code="malformed_tree")
        if parents[0] != -1:
            raise ValidationError("joint 0 must be the root (parent -1)", code="malformed_tree")
        for i, p in enumerate(parents[1:], start=1):
            if p == -1:
                raise ValidationError(f"joint {i} is a second root", code="malformed_tree")
            if not 0 <= p < i:
                raise ValidationError(
                    f"parent of joint {i} is {p}; parents must precede children",
                    code="malformed_tree",
                )

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @classmethod
    def smplx(cls) -> "KinematicTree":
        return cls(SMPLX_PARENTS)


@dataclass(frozen=True, eq=False)
class BodyModelDef:
    """Arrays defining a linear-blend-skinned body model.

    ``shape_basis`` has shape ``(V, 3, num_betas + num_expression)``; the
    first ``num_betas`` columns are identity shape, the rest expression.
    ``pose_corrective_basis``, when given, has shape ``(V, 3, 9 * (J - 1))``.
    """

    template: np.ndarray
    shape_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    tree: KinematicTree
    num_betas: int = NUM_BETAS
    part_masks: Mapping[str, np.ndarray] = field(default_factory=dict)
    part_joint_masks: Mapping[str, np.ndarray] = field(default_factory=dict)
    pose_corrective_basis: np.ndarray | None = None

    def __post_init__(self):
        tpl = np.asarray(self.template, dtype=np.float64)
        basis = np.asarray(self.shape_basis, dtype=np.float64)
        reg = np.asarray(self.joint_regressor, dtype=np.float64)
        w = np.asarray(self.skinning_weights, dtype=np.float64)
        object.__setattr__(self, "template", tpl)
        object.__setattr__(self, "shape_basis", basis)
        object.__setattr__(self, "joint_regressor", reg)
        object.__setattr__(self, "skinning_weights", w)

        if tpl.ndim != 2 or tpl.shape[1] != 3:
            raise DimensionError(f"template must be V x 3, got {tpl.shape}")
        V, J = tpl.shape[0], self.tree.joint_count
        if basis.ndim != 3 or basis.shape[:2] != (V, 3):
            raise DimensionError(f"shape_basis must be {V} x 3 x B, got {basis.shape}")
        if not 0 <= self.num_betas <= basis.shape[2]:
            raise DimensionError(
                f"num_betas={self.num_betas} exceeds basis width {basis.shape[2]}"
            )
        if reg.shape != (J, V):
            raise DimensionError(f"joint_regressor must be {J} x {V}, got {reg.shape}")
        if w.shape != (V, J):
            raise DimensionError(f"skinning_weights must be {V} x {J}, got {w.shape}")
        for name, arr in (("template", tpl), ("shape_basis", basis),
                          ("joint_regressor", reg), ("skinning_weights", w)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if np.any(reg < 0) or np.any(w < 0):
            raise ValidationError("regressor and skinning weights must be nonnegative")
        if not np.allclose(reg.sum(axis=1), 1.0, rtol=0, atol=1e-6):
            raise ValidationError("joint_regressor rows must sum to 1", code="partition")
        if not np.allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-6):
            raise ValidationError("skinning_weights rows must sum to 1", code="partition")

        masks = {k: np.asarray(v, dtype=np.int64).reshape(-1) for k, v in self.part_masks.items()}
        seen = np.zeros(V, dtype=bool)
        for name, idx in masks.items():
            if idx.size and (idx.min() < 0 or idx.max() >= V):
                raise ValidationError(f"part mask {name!r} indexes outside [0, {V})")
            if np.any(seen[idx]) or len(np.unique(idx)) != idx.size:
                raise ValidationError(f"part mask {name!r} overlaps another part")
            seen[idx] = True
        object.__setattr__(self, "part_masks", masks)
        jmasks = {k: np.asarray(v, dtype=np.int64).reshape(-1)
                  for k, v in self.part_joint_masks.items()}
        for name, idx in jmasks.items():
            if idx.size and (idx.min() < 0 or idx.max() >= J):
                raise ValidationError(f"joint mask {name!r} indexes outside [0, {J})")
        object.__setattr__(self, "part_joint_masks", jmasks)

        if self.pose_corrective_basis is not None:
            pc = np.asarray(self.pose_corrective_basis, dtype=np.float64)
            if pc.shape != (V, 3, 9 * (J - 1)):
                raise DimensionError(
                    f"pose_corrective_basis must be {V} x 3 x {9 * (J - 1)}, got {pc.shape}"
                )
            object.__setattr__(self, "pose_corrective_basis", pc)

    @property
    def vertex_count(self) -> int:
        return self.template.shape[0]

    @property
    def joint_count(self) -> int:
        return self.tree.joint_count

    @property
    def num_expression(self) -> int:
        return self.shape_basis.shape[2] - self.num_betas

    @property
    def parents(self) -> tuple[int, ...]:
        return self.tree.parents


def _skew(v: np.ndarray) -> np.ndarray:
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def rodrigues(axis_angle) -> np.ndarray:
    """Axis-angle (..., 3) in radians to rotation matrices (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    if aa.shape[-1] != 3:
        raise DimensionError(f"axis-angle must end in 3, got {aa.shape}")
    if not np.all(np.isfinite(aa)):
        raise ValidationError("axis-angle contains non-finite values")
    theta = np.linalg.norm(aa, axis=-1)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    K = _skew(aa / safe[..., None])
    K2 = K @ K
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    R = np.eye(3) + s * K + c * K2
    if np.any(small):
        # second-order Taylor expansion in the raw (unnormalised) vector
        Ks = _skew(aa)
        taylor = np.eye(3) + Ks + 0.5 * (Ks @ Ks)
        R = np.where(small[..., None, None], taylor, R)
    return R


def rotation_to_axis_angle(R) -> np.ndarray:
    """Inverse of :func:`rodrigues`, returning the representative with angle in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    out = np.zeros(R.shape[:-2] + (3,))
    flatR = R.reshape(-1, 3, 3)
    flat = out.reshape(-1, 3)
    for n, m in enumerate(flatR):
        cos = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
        angle = np.arccos(cos)
        vee = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0
        if angle < 1e-6:
            flat[n] = vee
        elif np.pi - angle < 1e-4:
            # near a half turn: axis from the symmetric part
            B = (m + m.T) / 2.0 - cos * np.eye(3)
            k = int(np.argmax(np.diag(B)))
            axis = B[k] / np.sqrt(max(B[k, k], 1e-300))
            axis /= np.linalg.norm(axis)
            if np.dot(axis, vee) < 0:
                axis = -axis
            elif abs(np.dot(axis, vee)) < 1e-12:
                nz = axis[np.abs(axis) > 1e-12]
                if nz.size and nz[0] < 0:
                    axis = -axis
            flat[n] = axis * angle
        else:
            flat[n] = vee / np.sin(angle) * angle
    return out


def _coefficients(model: BodyModelDef, beta, psi) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if psi is None:
        psi = np.zeros(beta.shape[:-1] + (model.num_expression,))
    psi = np.asarray(psi, dtype=np.float64)
    if beta.shape[-1] != model.num_betas:
        raise DimensionError(f"expected {model.num_betas} shape coefficients, got {beta.shape[-1]}")
    if psi.shape[-1] != model.num_expression:
        raise DimensionError(
            f"expected {model.num_expression} expression coefficients, got {psi.shape[-1]}"
        )
    lead = np.broadcast_shapes(beta.shape[:-1], psi.shape[:-1])
    beta = np.broadcast_to(beta, lead + beta.shape[-1:])
    psi = np.broadcast_to(psi, lead + psi.shape[-1:])
    return np.concatenate([beta, psi], axis=-1)


def shaped_vertices(model: BodyModelDef, beta, psi=None) -> np.ndarray:
    """Template plus shape and expression blend shapes, (..., V, 3)."""
    coeffs = _coefficients(model, beta, psi)
    V, K = model.vertex_count, model.shape_basis.shape[2]
    flat = coeffs @ model.shape_basis.reshape(V * 3, K).T
    return model.template + flat.reshape(coeffs.shape[:-1] + (V, 3))


def regress_rest_joints(model: BodyModelDef, beta, psi=None) -> np.ndarray:
    """Rest-pose joint locations of the shaped template, (..., J, 3)."""
    return model.joint_regressor @ shaped_vertices(model, beta, psi)


def _chain(tree: KinematicTree, rot: np.ndarray, joints: np.ndarray):
    """World rotations (rot batch, J, 3, 3) and joint positions (broadcast batch, J, 3).

    Rotations do not depend on the rest joints, so they are composed over the
    rotation batch only.
    """
    J = tree.joint_count
    if rot.shape[-3:] != (J, 3, 3):
        raise DimensionError(f"local rotations must end in ({J}, 3, 3), got {rot.shape}")
    if joints.shape[-2:] != (J, 3):
        raise DimensionError(f"rest joints must end in ({J}, 3), got {joints.shape}")
    parents = tree.parents
    batch = np.broadcast_shapes(rot.shape[:-3], joints.shape[:-2])

    offsets = joints.copy()
    offsets[..., 1:, :] -= joints[..., list(parents[1:]), :]

    Rw = np.empty(rot.shape)
    Rw[..., 0, :, :] = rot[..., 0, :, :]
    tw = np.empty(batch + (J, 3))
    tw[..., 0, :] = offsets[..., 0, :]
    for i in range(1, J):
        p = parents[i]
        Rw[..., i, :, :] = Rw[..., p, :, :] @ rot[..., i, :, :]
        tw[..., i, :] = (Rw[..., p, :, :] @ offsets[..., i, :, None])[..., 0] + tw[..., p, :]
    return Rw, tw


def forward_kinematics(tree: KinematicTree | Sequence[int], local_rotations, rest_joints) -> np.ndarray:
    """World transforms (..., J, 4, 4) of every joint.

    ``local_rotations`` (..., J, 3, 3) are rotations relative to the parent;
    slot 0 is the global orientation.  The translation of each world
    transform is the posed joint location.
    """
    if not isinstance(tree, KinematicTree):
        tree = KinematicTree(tuple(tree))
    rot = np.asarray(local_rotations, dtype=np.float64)
    joints = np.asarray(rest_joints, dtype=np.float64)
    Rw, tw = _chain(tree, rot, joints)
    batch = tw.shape[:-2]
    J = tree.joint_count
    world = np.zeros(batch + (J, 4, 4))
    world[..., :3, :3] = Rw
    world[..., :3, 3] = tw
    world[..., 3, 3] = 1.0
    return world


def _check_pose(model: BodyModelDef, pose) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    J = model.joint_count
    if pose.shape[-2:] != (J, 3):
        if pose.shape[-1:] == (J * 3,):
            pose = pose.reshape(pose.shape[:-1] + (J, 3))
        else:
            raise DimensionError(f"pose must end in ({J}, 3), got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValidationError("pose contains non-finite values")
    return pose


def skin(model: BodyModelDef, pose, beta, psi=None, *, pose_correctives: bool = False,
         transl=None) -> np.ndarray:
    """Posed mesh vertices (..., V, 3) by linear blend skinning."""
    pose = _check_pose(model, pose)
    v_shaped = shaped_vertices(model, beta, psi)
    joints = model.joint_regressor @ v_shaped
    rot = rodrigues(pose)

    v_posed = v_shaped
    if pose_correctives and model.pose_corrective_basis is not None:
        feat = (rot[..., 1:, :, :] - np.eye(3)).reshape(rot.shape[:-3] + (-1,))
        V, P = model.vertex_count, model.pose_corrective_basis.shape[2]
        corr = feat @ model.pose_corrective_basis.reshape(V * 3, P).T
        v_posed = v_shaped + corr.reshape(feat.shape[:-1] + (V, 3))

    Rw, tw = _chain(model.tree, rot, joints)
    # transforms relative to the rest joint locations, blended per vertex
    J, V = model.joint_count, model.vertex_count
    t_rel = tw - (Rw @ joints[..., None])[..., 0]
    R_blend = (model.skinning_weights @ Rw.reshape(Rw.shape[:-3] + (J, 9)))
    R_blend = R_blend.reshape(R_blend.shape[:-1] + (3, 3))
    verts = (R_blend @ v_posed[..., None])[..., 0] + model.skinning_weights @ t_rel
    if transl is not None:
        verts = verts + np.asarray(transl, dtype=np.float64)[..., None, :]
    return verts


def model_keypoints(model: BodyModelDef, pose, beta, psi=None, *, transl=None) -> np.ndarray:
    """Posed skeleton joints (..., J, 3): rest joints carried through the kinematic chain."""
    pose = _check_pose(model, pose)
    joints = regress_rest_joints(model, beta, psi)
    _, kp = _chain(model.tree, rodrigues(pose), joints)
    if transl is not None:
        kp = kp + np.asarray(transl, dtype=np.float64)[..., None, :]
    return kp


def posed_vertex_keypoints(model: BodyModelDef, pose, beta, psi=None, *,
                           pose_correctives: bool = False, transl=None) -> np.ndarray:
    """Alternative keypoints: the joint regressor applied to the skinned mesh."""
    verts = skin(model, pose, beta, psi, pose_correctives=pose_correctives, transl=transl)
    return model.joint_regressor @ verts


def default_part_joint_masks() -> dict[str, np.ndarray]:
    g = JOINT_GROUPS
    return {
        "body": np.array(g["global"] + g["body"]),
        "left_hand": np.array(g["left_hand"]),
        "right_hand": np.array(g["right_hand"]),
        "face": np.array(g["jaw"] + g["eyes"]),
    }


def _joint_part(parents: Sequence[int]) -> list[str]:
    if tuple(parents) == SMPLX_PARENTS:
        lookup = {}
        for part, idx in default_part_joint_masks().items():
            for j in idx:
                lookup[int(j)] = part
        return [lookup[j] for j in range(len(parents))]
    return ["body"] * len(parents)


def make_toy_model(*, verts_per_joint: int = 4, parents: Sequence[int] = SMPLX_PARENTS,
                   num_betas: int = NUM_BETAS, num_expression: int = NUM_EXPRESSION,
                   shape_scale: float = 5.0, pose_correctives: bool = False,
                   seed: int = 0) -> BodyModelDef:
    """Small synthetic model with the same structure as a real one.

    Vertices are scattered around each joint; each vertex is skinned mostly
    to its own joint and partly to the parent.  Expression columns only move
    face vertices.
    """
    rng = np.random.default_rng(seed)
    tree = KinematicTree(tuple(parents))
    J = tree.joint_count
    joints = np.zeros((J, 3))
    for i in range(1, J):
        joints[i] = joints[tree.parents[i]] + rng.normal(0.0, 60.0, size=3)

    V = J * verts_per_joint
    owner = np.repeat(np.arange(J), verts_per_joint)
    template = joints[owner] + rng.normal(0.0, 20.0, size=(V, 3))

    weights = np.zeros((V, J))
    own = rng.uniform(0.6, 1.0, size=V)
    weights[np.arange(V), owner] = own
    par = np.array([tree.parents[o] for o in owner])
    has_parent = par >= 0
    weights[np.arange(V)[has_parent], par[has_parent]] += 1.0 - own[has_parent]
    weights[~has_parent, owner[~has_parent]] = 1.0

    regressor = np.zeros((J, V))
    for j in range(J):
        w = rng.uniform(0.5, 1.5, size=verts_per_joint)
        regressor[j, owner == j] = w / w.sum()

    parts = _joint_part(tree.parents)
    vertex_part = np.array([parts[o] for o in owner])
    basis = rng.normal(0.0, shape_scale, size=(V, 3, num_betas + num_expression))
    basis[vertex_part != "face", :, num_betas:] = 0.0

    pc = None
    if pose_correctives:
        pc = rng.normal(0.0, 0.5, size=(V, 3, 9 * (J - 1)))

    part_masks = {p: np.flatnonzero(vertex_part == p) for p in dict.fromkeys(parts)}
    joint_masks = {p: np.array([j for j in range(J) if parts[j] == p]) for p in dict.fromkeys(parts)}
    return BodyModelDef(
        template=template,
        shape_basis=basis,
        joint_regressor=regressor,
        skinning_weights=weights,
        tree=tree,
        num_betas=num_betas,
        part_masks=part_masks,
        part_joint_masks=joint_masks,
        pose_corrective_basis=pc,
    )
