"""JSON model-definition files.

Layout (version 1)::

    {
      "version": 1, "units": "mm",
      "joint_count": J, "vertex_count": V, "num_betas": 10, "basis_width": B,
      "parents": [...],
      "template": [V*3],                 row-major V x 3
      "shape_basis": [V*3*B],            row-major V x 3 x B
      "joint_regressor": [J*V],          row-major J x V
      "skinning_weights": [V*J],         row-major V x J
      "pose_corrective_basis": [...],    optional, V x 3 x 9(J-1)
      "part_masks": {"body": [...], ...},
      "part_joint_masks": {...}
    }

Any array field may instead be ``{"npz": "<file>", "key": "<member>"}``,
resolved relative to the JSON file.  Lengths in ``m`` or ``cm`` are
converted to millimetres on load.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..body_model import BodyModelDef, KinematicTree
from ..errors import SchemaError
from .npy import load_npz

FORMAT_VERSION = 1
UNIT_SCALE = {"mm": 1.0, "cm": 10.0, "m": 1000.0}
_LENGTH_FIELDS = ("template", "shape_basis", "pose_corrective_basis")


def model_to_dict(model: BodyModelDef) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "units": "mm",
        "joint_count": model.joint_count,
        "vertex_count": model.vertex_count,
        "num_betas": model.num_betas,
        "basis_width": int(model.shape_basis.shape[2]),
        "parents": list(model.parents),
        "template": model.template.ravel().tolist(),
        "shape_basis": model.shape_basis.ravel().tolist(),
        "joint_regressor": model.joint_regressor.ravel().tolist(),
        "skinning_weights": model.skinning_weights.ravel().tolist(),
        "part_masks": {k: v.tolist() for k, v in model.part_masks.items()},
        "part_joint_masks": {k: v.tolist() for k, v in model.part_joint_masks.items()},
    }
    if model.pose_corrective_basis is not None:
        doc["pose_corrective_basis"] = model.pose_corrective_basis.ravel().tolist()
    return doc


def _array(doc: dict, key: str, shape: tuple[int, ...], base: Path | None, cache: dict) -> np.ndarray:
    value = doc[key]
    if isinstance(value, dict):
        if set(value) != {"npz", "key"}:
            raise SchemaError(f"{key}: container reference needs exactly 'npz' and 'key'",
                              code="bad_reference")
        if base is None:
            raise SchemaError(f"{key}: container references need a file location",
                              code="bad_reference")
        path = (base / value["npz"]).resolve()
        if path not in cache:
            cache[path] = load_npz(path)
        if value["key"] not in cache[path]:
            raise SchemaError(f"{key}: member {value['key']!r} not in {value['npz']}",
                              code="bad_reference")
        arr = np.asarray(cache[path][value["key"]], dtype=np.float64)
    else:
        try:
            arr = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError):
            raise SchemaError(f"{key} must be a numeric list", code="bad_type") from None
    if arr.size != int(np.prod(shape)):
        raise SchemaError(f"{key} has {arr.size} values, expected {shape}", code="bad_shape")
    return arr.reshape(shape)


def model_from_dict(doc: dict, base: Path | None = None) -> BodyModelDef:
    if not isinstance(doc, dict):
        raise SchemaError("model file must hold a JSON object", code="bad_type")
    required = ("version", "joint_count", "vertex_count", "parents", "template", "shape_basis",
                "joint_regressor", "skinning_weights")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaError(f"model file is missing {missing}", code="missing_key")
    if doc["version"] != FORMAT_VERSION:
        raise SchemaError(f"unsupported model file version {doc['version']!r}",
                          code="unsupported_version")
    units = doc.get("units", "mm")
    if units not in UNIT_SCALE:
        raise SchemaError(f"unknown length unit {units!r}", code="bad_units")
    J, V = int(doc["joint_count"]), int(doc["vertex_count"])
    if len(doc["parents"]) != J:
        raise SchemaError(f"parents has {len(doc['parents'])} entries, joint_count is {J}",
                          code="bad_shape")
    num_betas = int(doc.get("num_betas", 10))
    shape_basis = doc["shape_basis"]
    width = doc.get("basis_width")
    if width is None:
        n = len(shape_basis) if isinstance(shape_basis, list) else None
        if n is None or n % (V * 3):
            raise SchemaError("basis_width is required with this shape_basis", code="missing_key")
        width = n // (V * 3)
    width = int(width)

    cache: dict = {}
    arrays = {
        "template": _array(doc, "template", (V, 3), base, cache),
        "shape_basis": _array(doc, "shape_basis", (V, 3, width), base, cache),
        "joint_regressor": _array(doc, "joint_regressor", (J, V), base, cache),
        "skinning_weights": _array(doc, "skinning_weights", (V, J), base, cache),
    }
    if doc.get("pose_corrective_basis") is not None:
        arrays["pose_corrective_basis"] = _array(doc, "pose_corrective_basis",
                                                 (V, 3, 9 * (J - 1)), base, cache)
    scale = UNIT_SCALE[units]
    for key in _LENGTH_FIELDS:
        if key in arrays and scale != 1.0:
            arrays[key] = arrays[key] * scale

    masks = {}
    for field_name in ("part_masks", "part_joint_masks"):
        raw = doc.get(field_name, {})
        if not isinstance(raw, dict):
            raise SchemaError(f"{field_name} must be an object", code="bad_type")
        masks[field_name] = {k: np.asarray(v, dtype=np.int64) for k, v in raw.items()}
    return BodyModelDef(tree=KinematicTree(tuple(doc["parents"])), num_betas=num_betas,
                        **arrays, **masks)


def save_model(path: str | Path, model: BodyModelDef) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf8")


def load_model(path: str | Path) -> BodyModelDef:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed model JSON: {exc}", code="bad_json") from None
    return model_from_dict(doc, base=path.parent)
