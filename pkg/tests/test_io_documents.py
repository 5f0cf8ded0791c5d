import json

import numpy as np
import pytest

from bodybench.benchmark import InDomainMask, ResultsMatrix, rank_datasets
from bodybench.body_model import make_toy_model, skin
from bodybench.errors import SchemaError, ValidationError
from bodybench.io import (
    HumanDataDoc, emit_report, load_coco, load_humandata, load_model, model_from_dict,
    model_to_dict, read_coco, read_humandata, save_model, save_npz, write_coco, write_humandata,
)
from bodybench.io.humandata import encode_text, validate_humandata
from bodybench.metrics import PartErrorReport
from bodybench.sampling import DatasetSpec, SamplingPlan, plan_weighted
from bodybench.shape_adapter import apply_label_policy

from conftest import FIXTURES

REF = FIXTURES / "reference"


# -- HumanData ------------------------------------------------------------------------

def test_minimal_doc_loads():
    doc = validate_humandata({"smplx.betas": np.zeros((1, 10))})
    assert doc.count == 1 and doc.param_space == "smplx"


def test_n_mismatch():
    with pytest.raises(SchemaError) as info:
        validate_humandata({"smplx.betas": np.zeros((2, 10)), "smplx.body_pose": np.zeros((3, 21, 3))})
    assert info.value.code == "n_mismatch"


def test_ten_instance_fixture_round_trips_bit_exactly():
    raw = (REF / "humandata_10.npz").read_bytes()
    doc = read_humandata(raw)
    assert doc.count == 10 and doc.name == "synthetic-10"
    assert "image_index" in doc.arrays  # unknown keys are kept
    again = read_humandata(write_humandata(doc))
    assert list(again.arrays) == list(doc.arrays)
    for k, v in doc.arrays.items():
        assert again.arrays[k].dtype == v.dtype and again.arrays[k].tobytes() == v.tobytes()
    # our own output is a fixed point
    assert write_humandata(again) == write_humandata(doc)


def test_smpl_docs_are_tagged_for_label_policy(tmp_path):
    arrays = {"smpl.body_pose": np.zeros((2, 23, 3)), "smpl.betas": np.zeros((2, 10))}
    save_npz(tmp_path / "smpl.npz", arrays)
    doc = load_humandata(tmp_path / "smpl.npz")
    assert doc.param_space == "smpl"
    assert apply_label_policy(None, doc.annotation()).joint_count == 22


def test_declared_param_space():
    doc = validate_humandata({"keypoints3d": np.zeros((3, 5, 3)),
                              "meta.param_space": encode_text("smpl")})
    assert doc.param_space == "smpl"


def test_write_rejects_invalid_doc():
    with pytest.raises(SchemaError):
        write_humandata(HumanDataDoc({"bbox_xywh": np.zeros((1, 4))}))


# -- COCO -------------------------------------------------------------------------------

def test_coco_fixture_round_trips_bit_exactly():
    text = (REF / "coco_small.json").read_text()
    doc = load_coco(REF / "coco_small.json")
    assert len(doc.images) == 3 and len(doc.annotations) == 3
    assert [a["id"] for a in doc.annotations_for(1)] == [10, 11]
    assert write_coco(doc) == text
    assert read_coco(write_coco(doc)).to_dict() == json.loads(text)


def test_coco_preserves_unknown_fields():
    doc = read_coco((REF / "coco_small.json").read_text())
    assert doc.extra["categories"] == [{"id": 1, "name": "person"}]
    assert doc.annotations[0]["iscrowd"] == 0


def test_coco_dangling_reference():
    with pytest.raises(SchemaError) as info:
        read_coco(json.dumps({"images": [], "annotations": [{"id": 1, "image_id": 5, "bbox": [0, 0, 1, 1]}]}))
    assert info.value.code == "dangling_image_id"


# -- model files ---------------------------------------------------------------------------

def test_model_json_round_trip(tmp_path, rng):
    model = make_toy_model(seed=6, pose_correctives=True)
    save_model(tmp_path / "m.json", model)
    back = load_model(tmp_path / "m.json")
    for name in ("template", "shape_basis", "joint_regressor", "skinning_weights",
                 "pose_corrective_basis"):
        np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
    assert back.parents == model.parents
    assert {k: v.tolist() for k, v in back.part_masks.items()} == \
           {k: v.tolist() for k, v in model.part_masks.items()}
    # partition of unity survives the text round trip
    np.testing.assert_allclose(back.skinning_weights.sum(1), 1.0, atol=1e-12)
    pose = rng.normal(scale=0.3, size=(55, 3))
    np.testing.assert_array_equal(skin(back, pose, np.ones(10)), skin(model, pose, np.ones(10)))


def test_model_arrays_from_container_reference(tmp_path):
    model = make_toy_model(seed=1)
    doc = model_to_dict(model)
    save_npz(tmp_path / "arrays.npz", {"basis": model.shape_basis, "tpl": model.template})
    doc["shape_basis"] = {"npz": "arrays.npz", "key": "basis"}
    doc["template"] = {"npz": "arrays.npz", "key": "tpl"}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.shape_basis, model.shape_basis)


def test_model_units_converted_to_mm():
    model = make_toy_model(seed=1)
    doc = model_to_dict(model)
    doc["units"] = "m"
    doc["template"] = (model.template / 1000.0).ravel().tolist()
    doc["shape_basis"] = (model.shape_basis / 1000.0).ravel().tolist()
    back = model_from_dict(doc)
    np.testing.assert_allclose(back.template, model.template, rtol=1e-12)
    np.testing.assert_allclose(back.shape_basis, model.shape_basis, rtol=1e-12)


# -- reports -------------------------------------------------------------------------------

def test_one_row_ranking():
    m = ResultsMatrix.from_rows({"only": [10.0, 20.0]}, ["a", "b"])
    lines = emit_report(rank_datasets(m, mask=InDomainMask())).splitlines()
    assert len(lines) == 2
    assert lines[0].split() == ["rank", "dataset", "a", "b", "MPE"]
    assert lines[1].split() == ["1", "only", "10.0", "20.0", "15.0"]


def test_four_bench_report_prints_bedlam_mpe():
    ranking = rank_datasets(ResultsMatrix.from_csv(FIXTURES / "four_benchmarks.csv"))
    text = emit_report(ranking)
    bedlam = next(line for line in text.splitlines() if " BEDLAM " in f" {line} ")
    assert bedlam.split()[-1] == "124.7"
    rows = emit_report(ranking, "csv").splitlines()
    assert rows[0] == "rank,dataset,AGORA,UBody,EgoBody,3DPW,MPE"
    assert rows[1].endswith(",124.7")


def test_full_precision_csv():
    ranking = rank_datasets(ResultsMatrix.from_csv(FIXTURES / "four_benchmarks.csv"))
    row = emit_report(ranking, "csv", precision="full").splitlines()[1].split(",")
    assert float(row[-1]) == ranking.mpe("BEDLAM")
    assert row[-1] == repr(ranking.mpe("BEDLAM"))


def test_empty_plan_is_header_only():
    plan = SamplingPlan("balanced", [], 0)
    assert emit_report(plan).splitlines() == ["rank  dataset  native_length  target_length"]
    assert emit_report(plan, "csv") == "rank,dataset,native_length,target_length\n"


def test_plan_and_part_reports():
    plan = plan_weighted([DatasetSpec(f"d{k}", 50, k + 1) for k in range(4)], 100)
    assert emit_report(plan, "csv").splitlines()[1] == "1,d0,50,40"
    rep = PartErrorReport({"all": 12.345, "hands": 3.0}, {"all": 6.789, "hands": float("nan")})
    assert emit_report(rep, "csv").splitlines() == ["part,pa_error_mm,error_mm", "all,6.8,12.3",
                                                    "hands,-,3.0"]


def test_report_errors():
    with pytest.raises(ValidationError):
        emit_report(object())
    with pytest.raises(ValidationError):
        emit_report(SamplingPlan("concat", [], 0), fmt="xml")
