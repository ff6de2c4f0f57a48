"""Command-line surface.

Exit codes: 0 success, 2 input error (bad file/flag), 3 numerical error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .bboxreg import collect_training_pairs, fit_regressor, iterate_boxes
from .boxes import Box
from .config import Config, load_config
from .dataset import Dataset, read_manifest
from .errors import InputError, NumericalError, SegDetectError
from .evaluate import (average_best_overlap, evaluate_detections, write_pr_curves,
                       write_report)
from .masks import SegmentMask, rect_count
from .model import (build_bundle, detect_image, load_model, read_detections,
                    save_model, write_detections)
from .segfeat import GridSpec, grid_cells, seggrid_in
from .synth import SynthConfig, generate
from .training import train, write_training_log


def _effective_threads(flag):
    if flag and flag > 0:
        return flag
    return os.cpu_count() or 1


def _load_dataset(manifest_path, cfg: Config) -> Dataset:
    if not os.path.exists(manifest_path):
        raise InputError(f"manifest not found: {manifest_path}")
    return Dataset(read_manifest(manifest_path),
                   min_segment_pixels=cfg.min_segment_pixels)


def _load_config(path) -> Config:
    return load_config(path) if path else Config()


def _gts_by_image(dataset):
    return {image_id: list(dataset.record(image_id).gts)
            for image_id in dataset.image_order}


def cmd_synth(args):
    cfg = SynthConfig(seed=args.seed, n_images=args.images, n_classes=args.classes,
                      boxes_per_image=args.boxes, segments_per_image=args.segments,
                      width=args.width, height=args.height,
                      box_jitter=args.box_jitter, seg_noise=args.seg_noise,
                      feature_noise=args.feat_noise, score_noise=args.score_noise,
                      d_app=args.dapp, d_ctx=args.dctx)
    generate(cfg, args.out)
    print(f"synthetic dataset written to {args.out}")
    return 0


def cmd_featdump(args):
    cfg = _load_config(args.config)
    dataset = _load_dataset(args.manifest, cfg)
    with open(args.out, "w") as f:
        header = ["image_id", "box_id", "segment_id", "class_id"]
        f.write(",".join(header) + ",features\n")
        for image_id in dataset.image_order:
            bundle = build_bundle(dataset, image_id, cfg.grid_k, cfg.lambda_bias)
            for b, box_id in enumerate(bundle.box_ids):
                for s, seg_id in enumerate(bundle.seg_ids):
                    base = bundle.seg_base[b, s]
                    for c in range(dataset.n_classes):
                        block = base.copy()
                        block[-1] = bundle.sigmoid_scores[s, c]
                        vals = ";".join(repr(v) for v in block)
                        f.write(f"{image_id},{box_id},{seg_id},{c + 1},{vals}\n")
    print(f"feature dump written to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    dataset = _load_dataset(args.manifest, cfg)
    result = train(dataset, cfg, use_seg=not args.no_seg,
                   threads=_effective_threads(args.threads or cfg.threads))
    save_model(args.out, result.weights)
    if args.log:
        write_training_log(args.log, result.rounds)
    print(f"model written to {args.out}")
    return 0


def cmd_detect(args):
    cfg = _load_config(args.config)
    if not os.path.exists(args.model):
        raise InputError(f"model file not found: {args.model}")
    weights = load_model(args.model)
    dataset = _load_dataset(args.manifest, cfg)
    threads = _effective_threads(args.threads or cfg.threads)

    def run(image_id):
        bundle = build_bundle(dataset, image_id, weights.grid_k, weights.lam)
        return detect_image(bundle, weights, cfg.nms_iou, cfg.top_k)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(run, dataset.image_order))
    else:
        per_image = [run(i) for i in dataset.image_order]
    detections = [d for dets in per_image for d in dets]
    write_detections(args.out, detections)
    print(f"{len(detections)} detections written to {args.out}")
    return 0


def cmd_regress(args):
    cfg = _load_config(args.config)
    dataset = _load_dataset(args.manifest, cfg)
    if args.mode == "fit":
        pairs = collect_training_pairs(dataset, cfg.reg_pair_iou)
        if not pairs:
            raise InputError("no regression training pairs above the IoU threshold")
        d_reg = dataset.regression.shape[1]
        regressor = fit_regressor(pairs, d_reg, cfg.ridge)
        _save_regressor(args.out, regressor)
        print(f"regressor written to {args.out}")
        return 0
    # iterate: refine boxes and rescore
    if not os.path.exists(args.model):
        raise InputError(f"model file not found: {args.model}")
    weights = load_model(args.model)
    regressor = _load_regressor(args.regressor)
    if dataset.regression is None:
        raise InputError("manifest declares no regression feature file")
    lookup = _nearest_box_provider(dataset)
    detections = []
    for image_id in dataset.image_order:
        bundle = build_bundle(dataset, image_id, weights.grid_k, weights.lam)
        rec = dataset.record(image_id)
        reg_rows = dataset.regression[np.asarray(rec.rows, dtype=int)]
        for detector in range(1, weights.n_classes + 1):
            dets, _ = iterate_boxes(bundle, regressor, weights, detector,
                                    reg_rows, lookup, cfg.bbox_max_iters,
                                    cfg.change_thresh)
            detections.extend(dets)
    write_detections(args.out, detections)
    print(f"{len(detections)} refined detections written to {args.out}")
    return 0


def _nearest_box_provider(dataset):
    """Precomputed-feature lookup with nearest-box fallback."""
    from .boxes import iou as box_iou

    def provider(image_id, box):
        rec = dataset.record(image_id)
        if not rec.boxes:
            raise KeyError(image_id)
        best = max(range(len(rec.boxes)),
                   key=lambda i: box_iou(box, rec.boxes[i]))
        row = rec.rows[best]
        return (dataset.appearance[row], dataset.context[row],
                dataset.regression[row])

    return provider


def _save_regressor(path, regressor):
    with open(path, "w") as f:
        f.write("segdetect-regressor 1\n")
        f.write(f"d_reg {regressor.d_reg}\n")
        f.write(f"ridge {regressor.ridge!r}\n")
        for class_id in sorted(regressor.per_class):
            reg = regressor.per_class[class_id]
            f.write(f"class {class_id}\n")
            f.write("intercepts " + " ".join(repr(float(v))
                                             for v in reg.intercepts) + "\n")
            for row in reg.weights:
                f.write("w " + " ".join(repr(float(v)) for v in row) + "\n")


def _load_regressor(path):
    from .bboxreg import BoxRegressor, ClassRegressor
    if not os.path.exists(path):
        raise InputError(f"regressor file not found: {path}")
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != "segdetect-regressor 1":
        raise InputError(f"{path}:1: not a regressor file")
    try:
        d_reg = int(lines[1].split()[1])
        ridge = float(lines[2].split()[1])
        regressor = BoxRegressor(d_reg=d_reg, ridge=ridge)
        i = 3
        while i < len(lines):
            class_id = int(lines[i].split()[1])
            intercepts = np.array([float(v) for v in lines[i + 1].split()[1:]])
            weights = np.array([[float(v) for v in lines[i + 2 + r].split()[1:]]
                                for r in range(4)])
            regressor.per_class[class_id] = ClassRegressor(weights, intercepts)
            i += 6
    except (IndexError, ValueError) as e:
        raise InputError(f"{path}: malformed regressor file: {e}") from e
    return regressor


def cmd_eval(args):
    cfg = _load_config(args.config)
    dataset = _load_dataset(args.manifest, cfg)
    if not os.path.exists(args.detections):
        raise InputError(f"detections file not found: {args.detections}")
    detections = read_detections(args.detections)
    gts = _gts_by_image(dataset)
    report = evaluate_detections(detections, gts, dataset.n_classes,
                                 cfg.eval_iou, cfg.eleven_point)
    candidates = {image_id: list(dataset.record(image_id).boxes)
                  for image_id in dataset.image_order}
    report.abo, report.mean_abo = average_best_overlap(candidates, gts,
                                                       dataset.n_classes)
    write_report(args.out, report, dataset.class_names)
    if args.curves:
        write_pr_curves(args.curves, report, dataset.class_names)
    print(f"mAP {report.mean_ap:.4f}  mABO {report.mean_abo:.4f} -> {args.out}")
    return 0


def cmd_bench(args):
    """Micro-benchmark: naive per-pixel grid feature vs integral-image kernel."""
    rng = np.random.default_rng(0)
    grid = GridSpec(args.grid)
    sizes = [int(s) for s in args.sizes.split(",")]
    lines = ["size,naive_s,integral_s"]
    for size in sizes:
        arr = rng.random((size, size)) < 0.4
        mask = SegmentMask.from_array(arr, "bench", 0)
        box = Box(size * 0.1, size * 0.1, size * 0.8, size * 0.8)
        reps = max(1, 2048 // size)
        t0 = time.perf_counter()
        for _ in range(reps):
            _naive_grid(box, arr, grid)
        naive = (time.perf_counter() - t0) / reps
        mask.integral()   # build once, as production code does
        t0 = time.perf_counter()
        for _ in range(reps):
            seggrid_in(box, mask, grid)
        fast = (time.perf_counter() - t0) / reps
        lines.append(f"{size},{naive!r},{fast!r}")
    out = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
    else:
        sys.stdout.write(out)
    return 0


def _naive_grid(box, arr, grid):
    total = arr.sum()
    vals = []
    for x1, y1, x2, y2 in grid_cells(box, grid):
        x1 = max(x1, 0)
        y1 = max(y1, 0)
        x2 = min(x2, arr.shape[1] - 1)
        y2 = min(y2, arr.shape[0] - 1)
        if x1 > x2 or y1 > y2:
            vals.append(0.0)
            continue
        count = 0
        for yy in range(y1, y2 + 1):
            for xx in range(x1, x2 + 1):
                if arr[yy, xx]:
                    count += 1
        vals.append(count / total if total else 0.0)
    return vals


def build_parser():
    parser = argparse.ArgumentParser(prog="segdetect")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--boxes", type=int, default=8)
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--box-jitter", type=float, default=0.0)
    p.add_argument("--seg-noise", type=float, default=0.0)
    p.add_argument("--feat-noise", type=float, default=0.0)
    p.add_argument("--score-noise", type=float, default=0.0)
    p.add_argument("--dapp", type=int, default=16)
    p.add_argument("--dctx", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featdump", help="dump segmentation feature blocks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featdump)

    p = sub.add_parser("train", help="train detectors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--no-seg", action="store_true",
                   help="ablation: zero segmentation weights")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score all boxes and run NMS")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("regress", help="fit or apply the box regressor")
    p.add_argument("mode", choices=["fit", "iterate"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--regressor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("eval", help="evaluate a detections dump")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="directory for per-class PR curve CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="naive vs integral-image feature timings")
    p.add_argument("--grid", type=int, default=3)
    p.add_argument("--sizes", default="32,64,128,256")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except SegDetectError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
