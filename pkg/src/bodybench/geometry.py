"""Deterministic geometry of the whole-body estimation pipeline.

Token-grid arithmetic for the patch-based backbone, bilinear ROI cropping
of hand/face feature regions, and the flat parameter-vector layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

DEFAULT_ROI_SIZE = (8, 8)


@dataclass(frozen=True)
class TokenGrid:
    rows: int
    cols: int
    patch: int
    image_h: int
    image_w: int

    @property
    def num_tokens(self) -> int:
        return self.rows * self.cols


def token_grid(image_h: int, image_w: int, patch: int) -> TokenGrid:
    if patch <= 0 or image_h <= 0 or image_w <= 0:
        raise ValidationError("image size and patch must be positive", code="bad_grid")
    if image_h % patch or image_w % patch:
        raise ValidationError(
            f"image {image_h}x{image_w} is not divisible by patch size {patch}", code="not_divisible")
    return TokenGrid(image_h // patch, image_w // patch, patch, image_h, image_w)


@dataclass(frozen=True)
class NormalizedBox:
    """Box center and size as fractions of the image extent."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("box has non-finite coordinates", code="bad_box")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError("box has zero area", code="degenerate_box")
        x0, x1 = self.cx - self.w / 2, self.cx + self.w / 2
        y0, y1 = self.cy - self.h / 2, self.cy + self.h / 2
        if x1 <= 0 or x0 >= 1 or y1 <= 0 or y0 >= 1:
            raise ValidationError("box does not intersect the image", code="bad_box")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "NormalizedBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def sub_box(self, inner: "NormalizedBox") -> "NormalizedBox":
        """Compose: ``inner`` is expressed in this box's fractional coordinates."""
        x0, y0 = self.cx - self.w / 2, self.cy - self.h / 2
        return NormalizedBox(x0 + inner.cx * self.w, y0 + inner.cy * self.h,
                             inner.w * self.w, inner.h * self.h)


def _sample_coords(start: float, extent: float, n_out: int, n_in: int) -> np.ndarray:
    # cell centres of the output lattice, in input pixel units (half-pixel convention)
    frac = start + (np.arange(n_out) + 0.5) / n_out * extent
    return np.clip(frac * n_in - 0.5, 0.0, n_in - 1)


def _interp_axis(coords: np.ndarray, n_in: int):
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, coords - lo


def roi_crop(features, box: NormalizedBox, out: tuple[int, int] = DEFAULT_ROI_SIZE) -> np.ndarray:
    """Bilinearly resample an ``H x W x C`` feature grid over ``box`` to ``out``.

    Samples outside the grid clamp to the border.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 2:
        return roi_crop(F[..., None], box, out)[..., 0]
    if F.ndim != 3:
        raise DimensionError(f"features must be H x W x C, got {F.shape}")
    oh, ow = int(out[0]), int(out[1])
    if oh <= 0 or ow <= 0:
        raise ValidationError("output size must be positive", code="bad_size")
    H, W = F.shape[:2]
    ys = _sample_coords(box.cy - box.h / 2, box.h, oh, H)
    xs = _sample_coords(box.cx - box.w / 2, box.w, ow, W)
    y0, y1, wy = _interp_axis(ys, H)
    x0, x1, wx = _interp_axis(xs, W)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = F[y0][:, x0] * (1 - wx) + F[y0][:, x1] * wx
    bottom = F[y1][:, x0] * (1 - wx) + F[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


@dataclass(frozen=True)
class ParamLayout:
    """Named contiguous slices over a flat parameter vector."""

    pose: slice = slice(0, 165)
    betas: slice = slice(165, 175)
    expression: slice = slice(175, 185)
    camera: slice = slice(185, 188)

    @property
    def size(self) -> int:
        return self.camera.stop

    def fields(self) -> dict[str, slice]:
        return {"pose": self.pose, "betas": self.betas, "expression": self.expression,
                "camera": self.camera}


LAYOUT = ParamLayout()
_SHAPES = {"pose": (55, 3), "betas": (10,), "expression": (10,), "camera": (3,)}


def pack_params(pose, betas, expression, camera, layout: ParamLayout = LAYOUT) -> np.ndarray:
    """Flatten (pose 55x3, betas 10, expression 10, camera 3) into one vector.

    Leading batch dimensions are allowed and must agree.
    """
    parts = {"pose": pose, "betas": betas, "expression": expression, "camera": camera}
    arrays = {}
    lead = None
    for name, value in parts.items():
        a = np.asarray(value, dtype=np.float64)
        shp = _SHAPES[name]
        if a.shape[a.ndim - len(shp):] != shp:
            raise DimensionError(f"{name} must end in {shp}, got {a.shape}")
        this_lead = a.shape[:a.ndim - len(shp)]
        if lead is None:
            lead = this_lead
        elif this_lead != lead:
            raise DimensionError("parameter groups disagree on batch shape")
        arrays[name] = a.reshape(lead + (-1,))
    out = np.empty(lead + (layout.size,))
    for name, sl in layout.fields().items():
        out[..., sl] = arrays[name]
    return out


def unpack_params(vector, layout: ParamLayout = LAYOUT) -> dict[str, np.ndarray]:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != layout.size:
        raise DimensionError(f"parameter vector must have length {layout.size}, got {v.shape}")
    lead = v.shape[:-1]
    return {name: v[..., sl].reshape(lead + _SHAPES[name]).copy()
            for name, sl in layout.fields().items()}
