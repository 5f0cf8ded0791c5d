"""COCO-format annotation documents.

Only the fields the toolkit uses are validated; everything else in the
document is carried through untouched so that load/write round-trips
byte-for-byte on files this module wrote.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import SchemaError

# per-instance SMPL-X parameter lengths (flattened)
SMPLX_PARAM_SIZES = {"global_orient": 3, "body_pose": 63, "betas": 10, "expression": 10,
                     "left_hand_pose": 45, "right_hand_pose": 45, "jaw_pose": 3, "transl": 3}


@dataclass
class CocoAnnotationDoc:
    images: list[dict] = field(default_factory=list)
    annotations: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    key_order: list[str] = field(default_factory=list)

    def image(self, image_id: int) -> dict:
        for im in self.images:
            if im["id"] == image_id:
                return im
        raise KeyError(image_id)

    def annotations_for(self, image_id: int) -> list[dict]:
        return [a for a in self.annotations if a["image_id"] == image_id]

    def to_dict(self) -> dict:
        body = {**self.extra, "images": self.images, "annotations": self.annotations}
        # keep the source document's top-level order, new keys go last
        order = [k for k in self.key_order if k in body]
        order += [k for k in body if k not in order]
        return {k: body[k] for k in order}


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (_is_int(x) or isinstance(x, float)) and math.isfinite(x)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}", code="missing_key")
    return obj[key]


def _check_images(images) -> set:
    if not isinstance(images, list):
        raise SchemaError("'images' must be a list", code="bad_type")
    ids = set()
    for i, im in enumerate(images):
        where = f"images[{i}]"
        if not isinstance(im, dict):
            raise SchemaError(f"{where} must be an object", code="bad_type")
        iid = _require(im, "id", where)
        if not _is_int(iid):
            raise SchemaError(f"{where}: id must be an integer", code="bad_type")
        if iid in ids:
            raise SchemaError(f"{where}: duplicate image id {iid}", code="duplicate_id")
        ids.add(iid)
        if not isinstance(_require(im, "file_name", where), str):
            raise SchemaError(f"{where}: file_name must be a string", code="bad_type")
        for k in ("width", "height"):
            v = _require(im, k, where)
            if not _is_int(v) or v <= 0:
                raise SchemaError(f"{where}: {k} must be a positive integer", code="bad_type")
    return ids


def _check_smplx(params, where: str) -> None:
    if not isinstance(params, dict):
        raise SchemaError(f"{where}: smplx must be an object", code="bad_type")
    for key, value in params.items():
        size = SMPLX_PARAM_SIZES.get(key)
        flat = value
        while flat and isinstance(flat, list) and isinstance(flat[0], list):
            flat = [x for row in flat for x in row]
        if not isinstance(flat, list) or not all(_is_num(x) for x in flat):
            raise SchemaError(f"{where}: smplx.{key} must be a numeric list", code="bad_type")
        if size is not None and len(flat) != size:
            raise SchemaError(f"{where}: smplx.{key} has {len(flat)} values, expected {size}",
                              code="bad_shape")


def _check_annotations(annotations, image_ids: set) -> None:
    if not isinstance(annotations, list):
        raise SchemaError("'annotations' must be a list", code="bad_type")
    ids = set()
    for i, ann in enumerate(annotations):
        where = f"annotations[{i}]"
        if not isinstance(ann, dict):
            raise SchemaError(f"{where} must be an object", code="bad_type")
        aid = _require(ann, "id", where)
        if not _is_int(aid):
            raise SchemaError(f"{where}: id must be an integer", code="bad_type")
        if aid in ids:
            raise SchemaError(f"{where}: duplicate annotation id {aid}", code="duplicate_id")
        ids.add(aid)
        if _require(ann, "image_id", where) not in image_ids:
            raise SchemaError(f"{where}: image_id {ann['image_id']!r} does not exist",
                              code="dangling_image_id")
        bbox = _require(ann, "bbox", where)
        if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_num(v) for v in bbox)):
            raise SchemaError(f"{where}: bbox must be [x, y, w, h]", code="bad_bbox")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise SchemaError(f"{where}: bbox width and height must be positive", code="bad_bbox")
        if "smplx" in ann:
            _check_smplx(ann["smplx"], where)
        for key in ("keypoints", "keypoints3d"):
            if key in ann:
                kp = ann[key]
                if not isinstance(kp, list) or not all(_is_num(v) for v in kp) or len(kp) % 3:
                    raise SchemaError(f"{where}: {key} must be a flat numeric list of triples",
                                      code="bad_shape")


def validate_coco(doc) -> CocoAnnotationDoc:
    if not isinstance(doc, dict):
        raise SchemaError("COCO document must be a JSON object", code="bad_type")
    images = _require(doc, "images", "document")
    annotations = _require(doc, "annotations", "document")
    _check_annotations(annotations, _check_images(images))
    extra = {k: v for k, v in doc.items() if k not in ("images", "annotations")}
    return CocoAnnotationDoc(images, annotations, extra, list(doc))


def read_coco(text: str) -> CocoAnnotationDoc:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc}", code="bad_json") from None
    return validate_coco(doc)


def write_coco(doc: CocoAnnotationDoc) -> str:
    validate_coco(doc.to_dict())
    return json.dumps(doc.to_dict(), indent=1, allow_nan=False) + "\n"


def load_coco(path: str | Path) -> CocoAnnotationDoc:
    return read_coco(Path(path).read_text(encoding="utf8"))


def save_coco(path: str | Path, doc: CocoAnnotationDoc) -> None:
    Path(path).write_text(write_coco(doc), encoding="utf8")
