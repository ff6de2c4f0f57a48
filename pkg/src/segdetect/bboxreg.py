"""Linear bounding-box regression and the iterative predict/re-extract/rescore loop.

Targets use the usual center/size parameterization: normalized center shifts
and log size ratios between proposal and ground truth.  Features for moved
boxes are re-extracted only when the box changed by more than the threshold
(1 - IoU), which is the expensive part on real features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, clip_box, iou
from .errors import InputError, InsufficientPairs, ProviderError
from .model import Detection, score_box


def regression_targets(proposal: Box, gt: Box):
    px, py, pw, ph = proposal.center_size()
    gx, gy, gw, gh = gt.center_size()
    return np.array([(gx - px) / pw, (gy - py) / ph,
                     np.log(gw / pw), np.log(gh / ph)])


def apply_targets(proposal: Box, t, width, height) -> Box:
    px, py, pw, ph = proposal.center_size()
    cx = px + t[0] * pw
    cy = py + t[1] * ph
    w = pw * np.exp(t[2])
    h = ph * np.exp(t[3])
    return clip_box(Box(cx - 0.5 * (w - 1.0), cy - 0.5 * (h - 1.0),
                        cx + 0.5 * (w - 1.0), cy + 0.5 * (h - 1.0)),
                    width, height)


def box_change(old: Box, new: Box) -> float:
    """Relative change between two boxes: 1 - IoU."""
    return 1.0 - iou(old, new)


@dataclass
class ClassRegressor:
    weights: np.ndarray     # (4, d_reg)
    intercepts: np.ndarray  # (4,)

    def predict(self, features):
        return self.weights @ np.asarray(features, dtype=np.float64) + self.intercepts


@dataclass
class BoxRegressor:
    d_reg: int
    ridge: float
    per_class: dict = field(default_factory=dict)   # class_id -> ClassRegressor

    def refine(self, class_id, features, box: Box, width, height) -> Box:
        reg = self.per_class.get(class_id)
        if reg is None:
            return clip_box(box, width, height)
        return apply_targets(box, reg.predict(features), width, height)


def fit_class_regressor(features, proposals, gts, ridge) -> ClassRegressor:
    """Ridge least squares per target dimension; the intercept is not penalized."""
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if n < d + 1:
        raise InsufficientPairs(f"need at least {d + 1} pairs, got {n}")
    T = np.stack([regression_targets(p, g) for p, g in zip(proposals, gts)])
    Z = np.hstack([X, np.ones((n, 1))])
    penalty = ridge * np.eye(d + 1)
    penalty[d, d] = 0.0
    beta = np.linalg.solve(Z.T @ Z + penalty, Z.T @ T)
    return ClassRegressor(weights=beta[:d].T.copy(), intercepts=beta[d].copy())


def fit_regressor(pairs_by_class, d_reg, ridge) -> BoxRegressor:
    """pairs_by_class: class_id -> list of (feature_row, proposal Box, gt Box)."""
    reg = BoxRegressor(d_reg=d_reg, ridge=ridge)
    for class_id in sorted(pairs_by_class):
        pairs = pairs_by_class[class_id]
        if not pairs:
            continue
        feats = [f for f, _, _ in pairs]
        reg.per_class[class_id] = fit_class_regressor(
            feats, [p for _, p, _ in pairs], [g for _, _, g in pairs], ridge)
    return reg


def collect_training_pairs(dataset, pair_iou=0.6):
    """Proposal/GT pairs per class from boxes overlapping same-class GT enough."""
    if dataset.regression is None:
        raise InputError("manifest declares no regression feature file")
    pairs = {}
    for image_id in dataset.image_order:
        rec = dataset.record(image_id)
        for box, row in zip(rec.boxes, rec.rows):
            for class_id, gt, difficult in rec.gts:
                if difficult:
                    continue
                if iou(box, gt) >= pair_iou:
                    pairs.setdefault(class_id, []).append(
                        (dataset.regression[row], box, gt))
    return pairs


@dataclass
class IterationStats:
    changed_fraction: list = field(default_factory=list)
    provider_calls: int = 0


def iterate_boxes(bundle, regressor: BoxRegressor, weights, detector,
                  reg_features, feature_provider, max_iters=2,
                  change_thresh=0.2):
    """Alternate regression and rescoring for one image and one detector class.

    reg_features: (n_boxes, d_reg) rows aligned with bundle boxes.
    feature_provider(image_id, box) -> (app_row, ctx_row, reg_row) is called
    only for boxes whose change exceeds change_thresh; segment kernels are
    cheap and are recomputed for every moved box.
    Returns (detections, stats).
    """
    from .segfeat import GridSpec, assemble_block

    bundle = _copy_bundle(bundle)
    reg_rows = np.array(reg_features, dtype=np.float64)
    stats = IterationStats()
    grid = GridSpec(weights.grid_k)
    for _ in range(max_iters):
        changed = 0
        for b in range(bundle.n_boxes):
            new_box = regressor.refine(detector, reg_rows[b], bundle.boxes[b],
                                       bundle.width, bundle.height)
            change = box_change(bundle.boxes[b], new_box)
            moved = change > change_thresh
            if moved:
                changed += 1
                try:
                    app, ctx, reg = feature_provider(bundle.image_id, new_box)
                except KeyError:
                    raise ProviderError(bundle.image_id, new_box) from None
                stats.provider_calls += 1
                bundle.appearance[b] = app
                bundle.context[b] = ctx
                reg_rows[b] = reg
            if bundle.boxes[b].rounded() != new_box.rounded():
                for s, mask in enumerate(bundle.segments):
                    bundle.seg_base[b, s] = assemble_block(
                        new_box, mask, 0.0, grid, weights.lam, bundle.largest_area)
            bundle.boxes[b] = new_box
        stats.changed_fraction.append(
            changed / bundle.n_boxes if bundle.n_boxes else 0.0)
        if changed == 0:
            break
    detections = []
    for b in range(bundle.n_boxes):
        score, chosen = score_box(bundle, weights, detector, b)
        detections.append(Detection(bundle.image_id, detector, bundle.box_ids[b],
                                    bundle.boxes[b], score, chosen))
    return detections, stats


def _copy_bundle(bundle):
    from copy import copy
    fresh = copy(bundle)
    fresh.boxes = list(bundle.boxes)
    fresh.appearance = bundle.appearance.copy()
    fresh.context = bundle.context.copy()
    fresh.seg_base = bundle.seg_base.copy()
    return fresh
