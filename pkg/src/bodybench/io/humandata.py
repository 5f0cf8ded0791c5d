"""HumanData-style annotation containers (an ``.npz`` of keyed arrays).

Recognised keys, ``N`` being the instance count shared by every array:

==========================  =============  =====================================
key                         shape          notes
==========================  =============  =====================================
``<space>.global_orient``   N x 3          axis-angle, radians
``smplx.body_pose``         N x 21 x 3
``smpl.body_pose``          N x 23 x 3
``<space>.betas``           N x 10
``smplx.expression``        N x 10
``keypoints3d``             N x K x 3      mm
``bbox_xywh``               N x 4          px, w and h positive
``meta.name``               u8 bytes       UTF-8 dataset name
``meta.param_space``        u8 bytes       ``smpl`` or ``smplx``
==========================  =============  =====================================

``<space>`` is ``smpl`` or ``smplx``.  Keys under ``meta.`` are free-form
and skip the ``N`` check.  Other keys are kept as-is and must still have
leading dimension ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import SchemaError, ValidationError
from .npy import read_npz, write_npz

PARAM_SPACES = ("smpl", "smplx")

# trailing shape after the leading N; None marks a free dimension
_SHAPES: dict[str, tuple[int | None, ...]] = {
    "smplx.global_orient": (3,),
    "smplx.body_pose": (21, 3),
    "smplx.betas": (10,),
    "smplx.expression": (10,),
    "smpl.global_orient": (3,),
    "smpl.body_pose": (23, 3),
    "smpl.betas": (10,),
    "keypoints3d": (None, 3),
    "bbox_xywh": (4,),
}
# at least one of these must be present
REQUIRED_ANY = ("smplx.body_pose", "smplx.global_orient", "smplx.betas", "smplx.expression",
                "smpl.body_pose", "smpl.global_orient", "smpl.betas",
                "keypoints3d", "bbox_xywh", "meta.name")


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf8"), dtype=np.uint8).copy()


def decode_text(arr: np.ndarray, key: str) -> str:
    if arr.dtype != np.uint8 or arr.ndim != 1:
        raise SchemaError(f"{key} must be a 1-D u8 array of UTF-8 bytes", code="bad_shape")
    try:
        return arr.tobytes().decode("utf8")
    except UnicodeDecodeError:
        raise SchemaError(f"{key} is not valid UTF-8", code="bad_shape") from None


@dataclass
class HumanDataDoc:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    param_space: str = "smplx"
    count: int = 0

    @property
    def name(self) -> str | None:
        a = self.arrays.get("meta.name")
        return None if a is None else decode_text(a, "meta.name")

    def annotation(self) -> dict:
        """Minimal mapping understood by :func:`bodybench.shape_adapter.apply_label_policy`."""
        return {"param_space": self.param_space}


def _param_space(arrays: Mapping[str, np.ndarray]) -> str:
    prefixes = {k.split(".", 1)[0] for k in arrays if k.startswith(("smpl.", "smplx."))}
    declared = None
    if "meta.param_space" in arrays:
        declared = decode_text(arrays["meta.param_space"], "meta.param_space")
        if declared not in PARAM_SPACES:
            raise ValidationError(f"unknown parameter space {declared!r}", code="unknown_param_space")
    if len(prefixes) > 1:
        raise SchemaError("document mixes smpl.* and smplx.* keys", code="mixed_param_space")
    inferred = prefixes.pop() if prefixes else None
    if declared and inferred and declared != inferred:
        raise SchemaError(f"meta.param_space says {declared!r} but keys are {inferred}.*",
                          code="mixed_param_space")
    return declared or inferred or "smplx"


def validate_humandata(arrays: Mapping[str, np.ndarray]) -> HumanDataDoc:
    arrays = {str(k): np.asarray(v) for k, v in arrays.items()}
    if not any(k in arrays for k in REQUIRED_ANY):
        raise SchemaError(f"document has none of the recognised keys {REQUIRED_ANY}",
                          code="missing_keys")
    space = _param_space(arrays)
    if "meta.name" in arrays:
        decode_text(arrays["meta.name"], "meta.name")

    count = None
    for key in sorted(arrays):
        if key.startswith("meta."):
            continue
        a = arrays[key]
        if a.ndim == 0:
            raise SchemaError(f"{key} must have a leading instance dimension", code="bad_shape")
        want = _SHAPES.get(key)
        if want is not None:
            tail = a.shape[1:]
            if len(tail) != len(want) or any(w is not None and w != t for w, t in zip(want, tail)):
                shown = "x".join("K" if w is None else str(w) for w in want)
                raise SchemaError(f"{key} must be N x {shown}, got {a.shape}", code="bad_shape")
            if a.dtype.kind not in "fi":
                raise SchemaError(f"{key} must be numeric", code="bad_shape")
        if count is None:
            count = a.shape[0]
        elif a.shape[0] != count:
            raise SchemaError(f"{key} has {a.shape[0]} instances, expected {count}",
                              code="n_mismatch")
    if "bbox_xywh" in arrays and np.any(arrays["bbox_xywh"][:, 2:] <= 0):
        raise SchemaError("bbox_xywh widths and heights must be positive", code="bad_bbox")
    return HumanDataDoc(arrays, space, count or 0)


def read_humandata(data: bytes) -> HumanDataDoc:
    return validate_humandata(read_npz(data))


def write_humandata(doc: HumanDataDoc | Mapping[str, np.ndarray]) -> bytes:
    arrays = doc.arrays if isinstance(doc, HumanDataDoc) else dict(doc)
    validate_humandata(arrays)
    return write_npz(arrays)


def load_humandata(path: str | Path) -> HumanDataDoc:
    return read_humandata(Path(path).read_bytes())


def save_humandata(path: str | Path, doc: HumanDataDoc | Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(write_humandata(doc))
