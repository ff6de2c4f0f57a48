"""Seeded synthetic dataset generator for desk-scale verification.

The world is deliberately simple: ground-truth objects are axis-aligned
rectangles, "segments" are eroded/dilated copies of those rectangles, segment
class scores mimic an IoU-predicting ranker, and appearance/context vectors
are noisy class prototypes.  Everything is a pure function of the seed, so a
regenerated tree is byte-identical.

The generator also serves as the feature provider for iterative box
regression: regression rows linearly encode the offset to the nearest
ground-truth object, so a ridge regressor can recover the exact corrective
mapping when noise is zero.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .boxes import Box, clip_box, expand_box, iou, round_half_away
from .config import Config, save_config
from .dataset import (Manifest, write_boxes_file, write_feature_matrix,
                      write_gt_file, write_manifest, write_masks_file,
                      write_seg_scores_file)
from .masks import SegmentMask

D_REG = 5   # [dx, dy, dlogw, dlogh, 1]


@dataclass
class SynthConfig:
    seed: int = 0
    n_images: int = 50
    n_classes: int = 3
    boxes_per_image: int = 8
    segments_per_image: int = 4
    width: int = 64
    height: int = 64
    objects_per_image: int = 2
    box_jitter: float = 0.0     # fraction of object size
    seg_noise: float = 0.0      # fractional erosion/dilation of segment rects
    feature_noise: float = 0.0  # stddev on appearance/context vectors
    score_noise: float = 0.0    # stddev on raw segment class scores
    d_app: int = 16
    d_ctx: int = 8
    train_fraction: float = 0.8
    proto_scale: float = 2.0


def _logit(x):
    x = min(max(x, 0.02), 0.98)
    return math.log(x / (1.0 - x))


@dataclass
class SynthImage:
    image_id: str
    gts: list            # (class_id, Box)
    boxes: list          # (box_id, Box)
    segments: list       # (segment_id, Box source rect, class_id or 0, mask Box)


class SynthWorld:
    """In-memory world; `write` dumps it to disk, `features_for_box` is the
    noise-free feature function used as the re-extraction provider."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.app_protos = self._prototypes(rng, cfg.d_app, cfg.n_classes,
                                           cfg.proto_scale)
        self.ctx_protos = self._prototypes(rng, cfg.d_ctx, cfg.n_classes,
                                           cfg.proto_scale)
        self.images = [self._make_image(rng, i) for i in range(cfg.n_images)]
        # per-box feature noise drawn once so files are reproducible
        self._noise = {}
        for img in self.images:
            for box_id, _ in img.boxes:
                self._noise[(img.image_id, box_id)] = (
                    rng.normal(0.0, 1.0, cfg.d_app),
                    rng.normal(0.0, 1.0, cfg.d_ctx))
        self._score_noise = {}
        for img in self.images:
            for seg_id, _, _, _ in img.segments:
                self._score_noise[(img.image_id, seg_id)] = rng.normal(
                    0.0, 1.0, cfg.n_classes)

    @staticmethod
    def _prototypes(rng, dim, n_classes, scale):
        # one prototype per class plus a background prototype, well separated
        protos = np.zeros((n_classes + 1, dim))
        for c in range(n_classes + 1):
            protos[c, c % dim] = scale
            protos[c] += 0.1 * rng.normal(0.0, 1.0, dim)
        return protos

    def _make_image(self, rng, index):
        cfg = self.cfg
        image_id = f"img{index:04d}"
        gts = []
        for _ in range(cfg.objects_per_image):
            class_id = int(rng.integers(1, cfg.n_classes + 1))
            # objects must not overlap much, or NMS legitimately merges them
            for _attempt in range(50):
                w = int(rng.integers(cfg.width // 4, cfg.width // 2))
                h = int(rng.integers(cfg.height // 4, cfg.height // 2))
                x1 = int(rng.integers(0, cfg.width - w))
                y1 = int(rng.integers(0, cfg.height - h))
                candidate = Box(float(x1), float(y1),
                                float(x1 + w - 1), float(y1 + h - 1))
                if all(iou(candidate, g) < 0.2 for _, g in gts):
                    gts.append((class_id, candidate))
                    break
        boxes = []
        box_id = 0
        for class_id, gt in gts:
            for _ in range(2):
                boxes.append((box_id, self._jitter(rng, gt, cfg.box_jitter)))
                box_id += 1
        while box_id < cfg.boxes_per_image:
            w = int(rng.integers(cfg.width // 4, cfg.width // 2))
            h = int(rng.integers(cfg.height // 4, cfg.height // 2))
            x1 = int(rng.integers(0, cfg.width - w))
            y1 = int(rng.integers(0, cfg.height - h))
            boxes.append((box_id, Box(float(x1), float(y1),
                                      float(x1 + w - 1), float(y1 + h - 1))))
            box_id += 1
        segments = []
        seg_id = 0
        for class_id, gt in gts:
            segments.append((seg_id, gt, class_id,
                             self._erode(rng, gt, cfg.seg_noise)))
            seg_id += 1
        while seg_id < cfg.segments_per_image:
            w = int(rng.integers(cfg.width // 5, cfg.width // 3))
            h = int(rng.integers(cfg.height // 5, cfg.height // 3))
            x1 = int(rng.integers(0, cfg.width - w))
            y1 = int(rng.integers(0, cfg.height - h))
            rect = Box(float(x1), float(y1), float(x1 + w - 1), float(y1 + h - 1))
            segments.append((seg_id, rect, 0, rect))
            seg_id += 1
        return SynthImage(image_id, gts, boxes, segments)

    def _jitter(self, rng, gt: Box, amount):
        if amount == 0.0:
            return gt
        w = gt.x2 - gt.x1 + 1
        h = gt.y2 - gt.y1 + 1
        dx, dy, dw, dh = rng.normal(0.0, amount, 4)
        jittered = Box(gt.x1 + dx * w, gt.y1 + dy * h,
                       gt.x2 + dx * w + dw * w, gt.y2 + dy * h + dh * h)
        lo_x = min(jittered.x1, jittered.x2)
        hi_x = max(jittered.x1, jittered.x2)
        lo_y = min(jittered.y1, jittered.y2)
        hi_y = max(jittered.y1, jittered.y2)
        return clip_box(Box(lo_x, lo_y, hi_x, hi_y),
                        self.cfg.width, self.cfg.height)

    def _erode(self, rng, gt: Box, amount):
        if amount == 0.0:
            return gt
        w = gt.x2 - gt.x1 + 1
        h = gt.y2 - gt.y1 + 1
        dx1, dy1, dx2, dy2 = rng.uniform(0.0, amount, 4)
        shrunk = Box(gt.x1 + dx1 * w * 0.5, gt.y1 + dy1 * h * 0.5,
                     gt.x2 - dx2 * w * 0.5, gt.y2 - dy2 * h * 0.5)
        if shrunk.x1 > shrunk.x2 or shrunk.y1 > shrunk.y2:
            return gt
        return shrunk

    # -- feature functions -------------------------------------------------

    def _proto_row(self, img: SynthImage, box: Box):
        """Prototype row index: matched class row, or the background row."""
        best_class = 0
        best = 0.0
        for class_id, gt in img.gts:
            ov = iou(box, gt)
            if ov > best:
                best = ov
                best_class = class_id
        return best_class - 1 if best >= 0.5 else self.cfg.n_classes

    def features_for_box(self, image_id, box: Box):
        """Noise-free (appearance, context, regression) rows for any box.

        Context looks at the box grown by half its size in each direction,
        mimicking an expanded-receptive-field descriptor.
        """
        img = self._image(image_id)
        row = self._proto_row(img, box)
        grown = expand_box(box, 0.5, self.cfg.width, self.cfg.height)
        ctx_row = self._proto_row(img, grown)
        return (self.app_protos[row].copy(), self.ctx_protos[ctx_row].copy(),
                self._reg_row(img, box))

    def _reg_row(self, img: SynthImage, box: Box):
        nearest = max(img.gts, key=lambda cg: iou(box, cg[1]))[1]
        px, py, pw, ph = box.center_size()
        gx, gy, gw, gh = nearest.center_size()
        return np.array([(gx - px) / pw, (gy - py) / ph,
                         math.log(gw / pw), math.log(gh / ph), 1.0])

    def _image(self, image_id) -> SynthImage:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)

    def provider(self, image_id, box):
        return self.features_for_box(image_id, box)

    # -- serialization -----------------------------------------------------

    def _rect_mask(self, image_id, seg_id, rect: Box) -> SegmentMask:
        x1, y1, x2, y2 = rect.rounded()
        x1 = max(x1, 0)
        y1 = max(y1, 0)
        x2 = min(x2, self.cfg.width - 1)
        y2 = min(y2, self.cfg.height - 1)
        runs = [(row * self.cfg.width + x1, x2 - x1 + 1)
                for row in range(y1, y2 + 1)]
        return SegmentMask(image_id, seg_id, self.cfg.height, self.cfg.width, runs)

    def write(self, out_dir):
        """Dump the world plus train/test split manifests and a matching config."""
        cfg = self.cfg
        os.makedirs(out_dir, exist_ok=True)
        box_rows = []
        masks = []
        score_rows = []
        gt_rows = []
        app_rows = []
        ctx_rows = []
        reg_rows = []
        for img in self.images:
            for class_id, gt in img.gts:
                gt_rows.append((img.image_id, class_id, gt, False))
            for box_id, box in img.boxes:
                box_rows.append((img.image_id, box_id, box))
                app, ctx, reg = self.features_for_box(img.image_id, box)
                na, nc = self._noise[(img.image_id, box_id)]
                app_rows.append(app + cfg.feature_noise * na)
                ctx_rows.append(ctx + cfg.feature_noise * nc)
                reg_rows.append(reg)
            for seg_id, source, source_class, rect in img.segments:
                mask = self._rect_mask(img.image_id, seg_id, rect)
                masks.append(mask)
                noise = self._score_noise[(img.image_id, seg_id)]
                for c in range(1, cfg.n_classes + 1):
                    if source_class == c:
                        raw = _logit(iou(rect, source))
                    else:
                        raw = _logit(0.05)
                    score_rows.append((img.image_id, seg_id, c,
                                       raw + cfg.score_noise * noise[c - 1]))
        write_boxes_file(os.path.join(out_dir, "boxes.csv"), box_rows)
        write_masks_file(os.path.join(out_dir, "masks.txt"), masks)
        write_seg_scores_file(os.path.join(out_dir, "seg_scores.csv"), score_rows)
        write_gt_file(os.path.join(out_dir, "gt.csv"), gt_rows)
        write_feature_matrix(os.path.join(out_dir, "app.feat"), np.array(app_rows))
        write_feature_matrix(os.path.join(out_dir, "ctx.feat"), np.array(ctx_rows))
        write_feature_matrix(os.path.join(out_dir, "reg.feat"), np.array(reg_rows))

        class_names = [f"class{c}" for c in range(1, cfg.n_classes + 1)]
        all_images = [(img.image_id, cfg.width, cfg.height) for img in self.images]
        n_train = max(1, round_half_away(cfg.train_fraction * len(all_images)))
        n_train = min(n_train, len(all_images))
        splits = {"manifest.txt": all_images,
                  "manifest_train.txt": all_images[:n_train],
                  "manifest_test.txt": all_images[n_train:] or all_images[-1:]}
        for name, images in splits.items():
            write_manifest(os.path.join(out_dir, name), Manifest(
                class_names=class_names, images=images,
                boxes_file="boxes.csv", masks_file="masks.txt",
                seg_scores_file="seg_scores.csv", ground_truth_file="gt.csv",
                appearance_file="app.feat", context_file="ctx.feat",
                regression_file="reg.feat"))
        run_cfg = Config(min_segment_pixels=0, grid_k=2)
        save_config(os.path.join(out_dir, "config.txt"), run_cfg)
        return out_dir


def generate(cfg: SynthConfig, out_dir):
    world = SynthWorld(cfg)
    world.write(out_dir)
    return world
