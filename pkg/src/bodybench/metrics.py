"""Vertex and joint error metrics.

All inputs are corresponding point sets in millimetres (index i of the
prediction matches index i of the ground truth).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateAlignmentError, DimensionError, ValidationError

# rank test for the cross-covariance; collinear sets leave only one direction
_RANK_TOL = 1e-10

HAND_PARTS = ("left_hand", "right_hand")


def _points(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionError(f"{name} must be N x 3, got {x.shape}")
    if x.shape[0] < 1:
        raise ValidationError(f"{name} is empty", code="empty")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = _points(pred, "pred"), _points(gt, "gt")
    if pred.shape != gt.shape:
        raise DimensionError(f"cardinality mismatch: {pred.shape[0]} vs {gt.shape[0]} points")
    return pred, gt


def mean_l2(pred, gt) -> float:
    """Mean Euclidean distance between corresponding points."""
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation
        T[:3, 3] = self.translation
        return T


def umeyama_align(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity transform taking ``src`` onto ``dst``.

    Minimises ``sum ||s R x_i + t - y_i||^2`` in closed form.  The SVD sign
    correction keeps ``det(R) = +1`` even for mirrored inputs.
    """
    src, dst = _pair(src, dst)
    n = src.shape[0]
    if n < 3:
        raise DegenerateAlignmentError(f"need at least 3 points, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, yd = src - mu_s, dst - mu_d
    var_s = np.sum(xs * xs) / n
    if var_s <= 0.0:
        raise DegenerateAlignmentError("source points are coincident")

    cov = yd.T @ xs / n
    U, d, Vt = np.linalg.svd(cov)
    # collinear source: every cross-covariance has rank <= 1
    sx = np.linalg.svd(xs, compute_uv=False)
    if sx[1] <= _RANK_TOL * sx[0]:
        raise DegenerateAlignmentError("source points are collinear")
    if d[0] <= 0.0 or d[1] <= _RANK_TOL * d[0]:
        raise DegenerateAlignmentError("rank-deficient cross-covariance")

    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    s = float(np.dot(d, S) / var_s) if with_scale else 1.0
    if s <= 0.0:
        raise DegenerateAlignmentError("alignment produced a non-positive scale")
    t = mu_d - s * R @ mu_s
    return SimilarityTransform(s, R, t)


def pa_error(pred, gt, with_scale: bool = True) -> float:
    """Mean L2 error after aligning ``pred`` onto ``gt``."""
    pred, gt = _pair(pred, gt)
    tf = umeyama_align(pred, gt, with_scale=with_scale)
    return mean_l2(tf.apply(pred), gt)


def _check_f1(f1: float) -> float:
    f1 = float(f1)
    if not (0.0 < f1 <= 1.0):
        raise ValidationError(f"F1 score must lie in (0, 1], got {f1}", code="bad_f1")
    return f1


def nmve(mve: float, f1: float) -> float:
    """Vertex error normalised by detection F1."""
    return float(mve) / _check_f1(f1)


def nmje(mpjpe: float, f1: float) -> float:
    """Joint error normalised by detection F1."""
    return float(mpjpe) / _check_f1(f1)


def f1_from_normalized(error: float, normalized: float) -> float:
    """Back out the F1 that maps ``error`` to ``normalized``."""
    return _check_f1(float(error) / float(normalized))


@dataclass
class PartErrorReport:
    """Raw and aligned errors (mm) per named part.

    ``hands`` is the mean of the left- and right-hand errors.
    """

    raw: dict[str, float] = field(default_factory=dict)
    pa: dict[str, float] = field(default_factory=dict)
    pa_scope: str = "part"

    @property
    def parts(self) -> list[str]:
        return list(self.raw)

    def rows(self) -> list[tuple[str, float, float]]:
        return [(p, self.pa.get(p, float("nan")), self.raw[p]) for p in self.raw]


def _part_errors(pred, gt, idx, whole_tf, pa_scope, with_scale):
    p, g = pred[idx], gt[idx]
    raw = mean_l2(p, g)
    if pa_scope == "whole":
        pa = mean_l2(whole_tf.apply(p), g)
    else:
        pa = pa_error(p, g, with_scale=with_scale)
    return raw, pa


def per_part_report(pred_vertices, gt_vertices, masks: Mapping[str, Sequence[int]], *,
                    pa_scope: str = "part", with_scale: bool = True,
                    parts: Sequence[str] | None = None) -> PartErrorReport:
    """Errors for ``all``, ``body``, ``hands`` and ``face`` (whichever masks exist).

    ``pa_scope="part"`` fits the alignment on each part's own points (each
    hand separately, then averaged); ``"whole"`` reuses the whole-set
    alignment for every part.
    """
    if pa_scope not in ("part", "whole"):
        raise ValidationError(f"pa_scope must be 'part' or 'whole', got {pa_scope!r}")
    pred, gt = _pair(pred_vertices, gt_vertices)
    masks = {k: np.asarray(v, dtype=np.int64).reshape(-1) for k, v in masks.items()}
    for name, idx in masks.items():
        if idx.size == 0:
            raise ValidationError(f"part mask {name!r} is empty", code="empty_mask")
        if idx.min() < 0 or idx.max() >= pred.shape[0]:
            raise ValidationError(f"part mask {name!r} indexes outside the point set")

    whole_tf = umeyama_align(pred, gt, with_scale=with_scale)
    report = PartErrorReport(pa_scope=pa_scope)
    wanted = list(parts) if parts is not None else ["all", "body", "hands", "face"]

    for name in wanted:
        if name == "all":
            raw = mean_l2(pred, gt)
            pa = mean_l2(whole_tf.apply(pred), gt)
        elif name == "hands":
            if not all(h in masks for h in HAND_PARTS):
                if parts is not None:
                    raise ValidationError("hands requested but hand masks missing", code="empty_mask")
                continue
            pairs = [_part_errors(pred, gt, masks[h], whole_tf, pa_scope, with_scale)
                     for h in HAND_PARTS]
            raw = float(np.mean([r for r, _ in pairs]))
            pa = float(np.mean([a for _, a in pairs]))
        elif name in masks:
            raw, pa = _part_errors(pred, gt, masks[name], whole_tf, pa_scope, with_scale)
        else:
            if parts is not None:
                raise ValidationError(f"no mask for part {name!r}", code="empty_mask")
            continue
        report.raw[name] = raw
        report.pa[name] = pa
    return report


def mean_report(reports: Sequence[PartErrorReport]) -> PartErrorReport:
    """Average per-frame reports in index order (independent of how they were computed)."""
    if not reports:
        raise ValidationError("no reports to average", code="empty")
    out = PartErrorReport(pa_scope=reports[0].pa_scope)
    for name in reports[0].raw:
        raw = pa = 0.0
        for r in reports:
            raw += r.raw[name]
            pa += r.pa[name]
        out.raw[name] = raw / len(reports)
        out.pa[name] = pa / len(reports)
    return out


def remap_joints(joints, table: Sequence[int]) -> np.ndarray:
    """Select/reorder joints with a user-supplied index table (e.g. to 14 LSP joints)."""
    joints = np.asarray(joints)
    idx = np.asarray(table, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= joints.shape[-2]):
        raise ValidationError("joint remap table indexes outside the joint set")
    return joints[..., idx, :]
