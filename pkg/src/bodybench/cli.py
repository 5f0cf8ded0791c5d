"""Command-line interface: ``bodybench <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 file-system error, 1 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark, metrics, sampling
from .body_model import make_toy_model, model_keypoints, posed_vertex_keypoints, skin
from .errors import DivergenceError, ValidationError
from .geometry import LAYOUT, unpack_params
from .io import emit_report, load_model, load_npz, save_model, save_npz
from .io.report import render
from .shape_adapter import AdapterTrainConfig, fit_adapter

EXIT_OK, EXIT_NUMERIC, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("bodybench")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _figure(args, plot, *plot_args) -> None:
    if getattr(args, "figure", None):
        from . import plotting
        path = getattr(plotting, plot)(*plot_args, args.figure)
        log.info("figure written to %s", path)


def _load_ranking(args) -> benchmark.RankingTable:
    matrix = benchmark.ResultsMatrix.from_csv(args.results)
    mask = benchmark.InDomainMask.from_json(args.mask) if args.mask else benchmark.DEFAULT_MASK
    return benchmark.rank_datasets(matrix, mask, strict_mask=args.strict_mask)


def cmd_rank(args) -> int:
    ranking = _load_ranking(args)
    _emit(emit_report(ranking, args.format, args.precision), args.out)
    _figure(args, "plot_ranking", ranking)
    return EXIT_OK


def cmd_select(args) -> int:
    ranking = _load_ranking(args)
    _emit("".join(f"{name}\n" for name in benchmark.select_top_n(ranking, args.top)), args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    specs = sampling.load_specs(args.specs)
    plan = sampling.make_plan(args.strategy, specs, args.total)
    for note in plan.notes:
        log.warning(note)
    text = plan.to_json() + "\n" if args.format == "json" else emit_report(plan, args.format)
    _emit(text, args.out)
    if args.schedule:
        save_npz(args.schedule, sampling.realize_schedule(plan, seed=args.seed))
    _figure(args, "plot_plan", plan)
    return EXIT_OK


def _mesh_inputs(path: str, model, keypoint_path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Vertices (F, V, 3) and joints (F, J, 3) from an npz of meshes or parameters."""
    arrays = load_npz(path)
    if "vertices" in arrays:
        verts = np.asarray(arrays["vertices"], dtype=np.float64)
        joints = arrays.get("joints")
        verts = verts[None] if verts.ndim == 2 else verts
        if joints is not None:
            joints = np.asarray(joints, dtype=np.float64)
            joints = joints[None] if joints.ndim == 2 else joints
        return verts, joints
    if "params" in arrays:
        p = unpack_params(arrays["params"])
        pose, beta, psi = p["pose"], p["betas"], p["expression"]
    elif "pose" in arrays:
        pose = arrays["pose"]
        beta = arrays.get("betas", np.zeros(pose.shape[:-2] + (model.num_betas,)))
        psi = arrays.get("expression")
    else:
        raise ValidationError(f"{path}: expected 'vertices', 'params' ({LAYOUT.size} values) "
                              "or 'pose' arrays", code="missing_key")
    pose = np.asarray(pose, dtype=np.float64)
    pose = pose[None] if pose.ndim == 2 else pose
    beta = np.asarray(beta, dtype=np.float64).reshape(pose.shape[0], -1)
    if psi is not None:
        psi = np.asarray(psi, dtype=np.float64).reshape(pose.shape[0], -1)
    verts = skin(model, pose, beta, psi)
    kp_fn = model_keypoints if keypoint_path == "rest" else posed_vertex_keypoints
    return verts, kp_fn(model, pose, beta, psi)


def _raw_report(pred, gt, masks, parts) -> metrics.PartErrorReport:
    report = metrics.PartErrorReport(pa_scope="none")
    for name in parts:
        if name == "all":
            report.raw[name] = metrics.mean_l2(pred, gt)
        elif name == "hands":
            report.raw[name] = float(np.mean([metrics.mean_l2(pred[masks[h]], gt[masks[h]])
                                              for h in metrics.HAND_PARTS]))
        else:
            report.raw[name] = metrics.mean_l2(pred[masks[name]], gt[masks[name]])
        report.pa[name] = float("nan")
    return report


def cmd_eval(args) -> int:
    model = load_model(args.model)
    pred_v, pred_j = _mesh_inputs(args.pred, model, args.keypoints)
    gt_v, gt_j = _mesh_inputs(args.gt, model, args.keypoints)
    if pred_v.shape != gt_v.shape:
        raise ValidationError(f"prediction {pred_v.shape} and ground truth {gt_v.shape} differ",
                              code="dimension_mismatch")
    masks = model.part_masks
    parts = args.parts.split(",") if args.parts else ["all"] + [
        p for p in ("body", "hands", "face")
        if p in masks or (p == "hands" and all(h in masks for h in metrics.HAND_PARTS))]
    for p in parts:
        if p not in ("all", "hands") and p not in masks:
            raise ValidationError(f"model has no part mask {p!r}", code="empty_mask")

    scope = "part" if args.per_hand_pa else "whole"
    if args.pa:
        frames = [metrics.per_part_report(pv, gv, masks, pa_scope=scope, parts=parts)
                  for pv, gv in zip(pred_v, gt_v)]
    else:
        frames = [_raw_report(pv, gv, masks, parts) for pv, gv in zip(pred_v, gt_v)]
    report = metrics.mean_report(frames)

    rows = [["PVE", report.raw["all"]]] if "all" in report.raw else []
    if args.pa and "all" in report.pa:
        rows.append(["PA-PVE", report.pa["all"]])
    if pred_j is not None and gt_j is not None:
        mpjpe = float(np.mean([metrics.mean_l2(p, g) for p, g in zip(pred_j, gt_j)]))
        rows.append(["MPJPE", mpjpe])
        if args.pa:
            rows.append(["PA-MPJPE", float(np.mean([metrics.pa_error(p, g)
                                                    for p, g in zip(pred_j, gt_j)]))])
        if args.f1 is not None:
            rows.append(["NMJE", metrics.nmje(mpjpe, args.f1)])
    if args.f1 is not None and "all" in report.raw:
        rows.append(["NMVE", metrics.nmve(report.raw["all"], args.f1)])

    fmt_num = (lambda v: repr(float(v))) if args.precision == "full" else (lambda v: f"{v:.1f}")
    text = emit_report(report, args.format, args.precision)
    text += ("\n" if args.format == "text" else "") + render(
        ["metric", "value_mm"], [[k, fmt_num(v)] for k, v in rows], args.format)
    _emit(text, args.out)
    _figure(args, "plot_part_report", report)
    return EXIT_OK


def cmd_adapter_fit(args) -> int:
    src, dst = load_model(args.src), load_model(args.dst)
    config = AdapterTrainConfig(iterations=args.iters, step=args.step, sigma=args.sigma,
                                seed=args.seed, tolerance=args.tolerance)
    result = fit_adapter(src, dst, config=config)
    if args.out:
        result.adapter.save(args.out)
    print(f"iterations\t{result.iterations}")
    print(f"initial_error_mm\t{result.initial_error_mm:.6g}")
    print(f"heldout_error_mm\t{result.error_mm:.6g}")
    return EXIT_OK


def cmd_npz_inspect(args) -> int:
    arrays = load_npz(args.file)
    rows = [[k, a.dtype.str.lstrip("<>|="), "x".join(map(str, a.shape)) or "scalar"]
            for k, a in arrays.items()]
    _emit(render(["key", "dtype", "shape"], rows, args.format), None)
    return EXIT_OK


def cmd_model_info(args) -> int:
    m = load_model(args.file)
    rows = [["joints", str(m.joint_count)], ["vertices", str(m.vertex_count)],
            ["betas", str(m.num_betas)], ["expression", str(m.num_expression)],
            ["pose_correctives", "yes" if m.pose_corrective_basis is not None else "no"]]
    rows += [[f"part:{k}", str(len(v))] for k, v in m.part_masks.items()]
    _emit(render(["field", "value"], rows, args.format), None)
    return EXIT_OK


def cmd_model_toy(args) -> int:
    m = make_toy_model(verts_per_joint=args.verts_per_joint, seed=args.seed,
                       shape_scale=args.shape_scale)
    save_model(args.out, m)
    return EXIT_OK


def cmd_finetune(args) -> int:
    plan = benchmark.plan_finetune(args.scope)
    print(json.dumps({"scope": plan.scope, "trainable_params": plan.trainable_params,
                      "modules": list(plan.modules)}))
    return EXIT_OK


def _table_opts(p: argparse.ArgumentParser, precision: bool = True) -> None:
    p.add_argument("--format", choices=("text", "csv"), default="text")
    if precision:
        p.add_argument("--precision", choices=("1", "full"), default="1",
                       help="decimals in numeric cells (default one)")
    p.add_argument("--out", help="write the table here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodybench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("rank", cmd_rank), ("select", cmd_select)):
        p = sub.add_parser(name, help=f"{name} training datasets from a results CSV")
        p.add_argument("results", help="CSV: dataset,<benchmark>... ; blank or '-' = absent")
        p.add_argument("--mask", help='JSON {"exclude": [[dataset, benchmark], ...]}')
        p.add_argument("--strict-mask", action="store_true",
                       help="reject mask pairs not present in the matrix")
        p.set_defaults(func=fn)
        if name == "rank":
            _table_opts(p)
            p.add_argument("--figure", help="also save a bar chart (png/pdf/svg)")
        else:
            p.add_argument("--top", type=int, required=True)
            p.add_argument("--out")

    p = sub.add_parser("plan", help="per-dataset sampling quotas")
    p.add_argument("--strategy", choices=sampling.STRATEGIES, required=True)
    p.add_argument("--specs", required=True, help="JSON list of {name, native_length, rank}")
    p.add_argument("--total", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", help="write realised index lists to this .npz")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("eval", help="vertex and joint errors between two npz files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--pa", action="store_true", help="also report aligned errors")
    p.add_argument("--per-hand-pa", action="store_true",
                   help="align every part on its own points (each hand separately)")
    p.add_argument("--parts", help="comma list from all,body,hands,face,left_hand,...")
    p.add_argument("--f1", type=float, help="detection F1 for NMVE/NMJE")
    p.add_argument("--keypoints", choices=("rest", "posed"), default="rest",
                   help="joints from the kinematic chain (rest) or the skinned mesh (posed)")
    _table_opts(p)
    p.add_argument("--figure")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("adapter", help="shape adapter tools")
    asub = p.add_subparsers(dest="adapter_command", required=True)
    f = asub.add_parser("fit", help="fit a source->target shape adapter")
    f.add_argument("--src", required=True, help="source (gendered) model JSON")
    f.add_argument("--dst", required=True, help="target (neutral) model JSON")
    f.add_argument("--sigma", type=float, default=0.3, help="pose sampler spread (rad)")
    f.add_argument("--iters", type=int, default=2000)
    f.add_argument("--step", type=float, default=3e-3)
    f.add_argument("--tolerance", type=float, default=1e-9)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", help="save the adapter JSON here")
    f.set_defaults(func=cmd_adapter_fit)

    p = sub.add_parser("npz", help="container tools")
    nsub = p.add_subparsers(dest="npz_command", required=True)
    f = nsub.add_parser("inspect")
    f.add_argument("file")
    f.add_argument("--format", choices=("text", "csv"), default="text")
    f.set_defaults(func=cmd_npz_inspect)

    p = sub.add_parser("model", help="model-definition tools")
    msub = p.add_subparsers(dest="model_command", required=True)
    f = msub.add_parser("info")
    f.add_argument("file")
    f.add_argument("--format", choices=("text", "csv"), default="text")
    f.set_defaults(func=cmd_model_info)
    f = msub.add_parser("toy", help="write a synthetic model")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--verts-per-joint", type=int, default=4)
    f.add_argument("--shape-scale", type=float, default=5.0)
    f.set_defaults(func=cmd_model_toy)

    p = sub.add_parser("finetune", help="trainable modules for a finetune scope")
    p.add_argument("scope", choices=benchmark.FINETUNE_SCOPES)
    p.set_defaults(func=cmd_finetune)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
