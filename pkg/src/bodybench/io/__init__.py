"""Readers and writers for arrays, annotations, model files and reports."""

from .coco import CocoAnnotationDoc, load_coco, read_coco, save_coco, write_coco
from .humandata import HumanDataDoc, load_humandata, read_humandata, save_humandata, write_humandata
from .model_file import load_model, model_from_dict, model_to_dict, save_model
from .npy import load_npy, load_npz, read_npy, read_npz, save_npy, save_npz, write_npy, write_npz
from .report import emit_report

__all__ = [
    "CocoAnnotationDoc", "HumanDataDoc", "emit_report",
    "load_coco", "load_humandata", "load_model", "load_npy", "load_npz",
    "model_from_dict", "model_to_dict",
    "read_coco", "read_humandata", "read_npy", "read_npz",
    "save_coco", "save_humandata", "save_model", "save_npy", "save_npz",
    "write_coco", "write_humandata", "write_npy", "write_npz",
]
