"""File formats and the in-memory dataset index.

Text formats are line-oriented for diffability; feature matrices are binary.
All readers raise InputError with the offending file and line.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box
from .errors import BadRle, InputError
from .masks import SegmentMask

FEATURE_MAGIC = b"SDMF"
FEATURE_VERSION = 1


def _fail(path, lineno, msg):
    raise InputError(f"{path}:{lineno}: {msg}")


# ---------------------------------------------------------------------------
# feature matrices: binary container for appearance/context/regression rows

def write_feature_matrix(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<I", FEATURE_VERSION))
        f.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
        f.write(matrix.tobytes())


def read_feature_matrix(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise InputError(f"cannot read feature file {path}: {e}") from e
    if len(blob) < 24 or blob[:4] != FEATURE_MAGIC:
        raise InputError(f"{path}:0: not a feature matrix file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FEATURE_VERSION:
        raise InputError(f"{path}:0: unsupported feature format version {version}")
    rows, cols = struct.unpack_from("<QQ", blob, 8)
    payload = blob[24:]
    if len(payload) != rows * cols * 4:
        raise InputError(f"{path}:0: payload length {len(payload)} does not match "
                         f"{rows}x{cols} float32 header")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise InputError(f"{path}:0: feature matrix contains NaN/Inf")
    return matrix


# ---------------------------------------------------------------------------
# line-oriented text files

def write_boxes_file(path, rows):
    """rows: iterable of (image_id, box_id, Box)."""
    with open(path, "w") as f:
        for image_id, box_id, b in rows:
            f.write(f"{image_id},{box_id},{float(b.x1)!r},{float(b.y1)!r},"
                    f"{float(b.x2)!r},{float(b.y2)!r}\n")


def read_boxes_file(path):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                _fail(path, lineno, f"expected 6 fields, got {len(parts)}")
            try:
                box = Box(float(parts[2]), float(parts[3]),
                          float(parts[4]), float(parts[5]))
                rows.append((parts[0], int(parts[1]), box))
            except ValueError as e:
                _fail(path, lineno, str(e))
    return rows


def write_masks_file(path, masks):
    with open(path, "w") as f:
        for m in masks:
            runs = ",".join(f"{s}:{l}" for s, l in m.runs) or "-"
            f.write(f"{m.image_id} {m.segment_id} {m.height} {m.width} {runs}\n")


def read_masks_file(path):
    masks = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                _fail(path, lineno, f"expected 5 fields, got {len(parts)}")
            image_id, seg_id, h, w, runs_txt = parts
            try:
                runs = []
                if runs_txt != "-":
                    for tok in runs_txt.split(","):
                        start, length = tok.split(":")
                        runs.append((int(start), int(length)))
                masks.append(SegmentMask(image_id, int(seg_id), int(h), int(w), runs))
            except (ValueError, BadRle) as e:
                _fail(path, lineno, str(e))
    return masks


def write_gt_file(path, gts):
    """gts: iterable of (image_id, class_id, Box, difficult)."""
    with open(path, "w") as f:
        for image_id, class_id, b, difficult in gts:
            f.write(f"{image_id},{class_id},{float(b.x1)!r},{float(b.y1)!r},"
                    f"{float(b.x2)!r},{float(b.y2)!r},{1 if difficult else 0}\n")


def read_gt_file(path):
    gts = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                _fail(path, lineno, f"expected 7 fields, got {len(parts)}")
            try:
                box = Box(float(parts[2]), float(parts[3]),
                          float(parts[4]), float(parts[5]))
                difficult = int(parts[6])
                if difficult not in (0, 1):
                    raise ValueError(f"difficult flag must be 0 or 1, got {parts[6]}")
                gts.append((parts[0], int(parts[1]), box, bool(difficult)))
            except ValueError as e:
                _fail(path, lineno, str(e))
    return gts


def write_seg_scores_file(path, rows):
    """rows: iterable of (image_id, segment_id, class_id, score)."""
    with open(path, "w") as f:
        for image_id, seg_id, class_id, score in rows:
            f.write(f"{image_id},{seg_id},{class_id},{float(score)!r}\n")


def read_seg_scores_file(path):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                _fail(path, lineno, f"expected 4 fields, got {len(parts)}")
            try:
                score = float(parts[3])
                if not np.isfinite(score):
                    raise ValueError(f"non-finite score {parts[3]}")
                rows.append((parts[0], int(parts[1]), int(parts[2]), score))
            except ValueError as e:
                _fail(path, lineno, str(e))
    return rows


# ---------------------------------------------------------------------------
# manifest

@dataclass
class Manifest:
    class_names: list
    images: list          # (image_id, width, height) in file order
    boxes_file: str
    masks_file: str
    seg_scores_file: str
    ground_truth_file: str
    appearance_file: str
    context_file: str
    regression_file: str = ""
    base_dir: str = "."

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def write_manifest(path, manifest: Manifest):
    with open(path, "w") as f:
        f.write("version 1\n")
        for name in manifest.class_names:
            f.write(f"class {name}\n")
        for image_id, w, h in manifest.images:
            f.write(f"image {image_id} {w} {h}\n")
        f.write(f"boxes {manifest.boxes_file}\n")
        f.write(f"masks {manifest.masks_file}\n")
        f.write(f"seg_scores {manifest.seg_scores_file}\n")
        f.write(f"ground_truth {manifest.ground_truth_file}\n")
        f.write(f"appearance {manifest.appearance_file}\n")
        f.write(f"context {manifest.context_file}\n")
        if manifest.regression_file:
            f.write(f"regression {manifest.regression_file}\n")


def read_manifest(path):
    classes = []
    images = []
    files = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            key = parts[0]
            if key == "version":
                if parts[1:] != ["1"]:
                    _fail(path, lineno, f"unsupported manifest version {parts[1:]}")
            elif key == "class":
                if len(parts) != 2:
                    _fail(path, lineno, "class line needs one name")
                classes.append(parts[1])
            elif key == "image":
                if len(parts) != 4:
                    _fail(path, lineno, "image line needs id, width, height")
                try:
                    images.append((parts[1], int(parts[2]), int(parts[3])))
                except ValueError as e:
                    _fail(path, lineno, str(e))
            elif key in ("boxes", "masks", "seg_scores", "ground_truth",
                         "appearance", "context", "regression"):
                if len(parts) != 2:
                    _fail(path, lineno, f"{key} line needs one path")
                files[key] = parts[1]
            else:
                _fail(path, lineno, f"unknown manifest key {key!r}")
    for key in ("boxes", "masks", "seg_scores", "ground_truth", "appearance", "context"):
        if key not in files:
            raise InputError(f"{path}: missing {key} entry")
    if not classes:
        raise InputError(f"{path}: no classes declared")
    if not images:
        raise InputError(f"{path}: no images declared")
    return Manifest(class_names=classes, images=images,
                    boxes_file=files["boxes"], masks_file=files["masks"],
                    seg_scores_file=files["seg_scores"],
                    ground_truth_file=files["ground_truth"],
                    appearance_file=files["appearance"],
                    context_file=files["context"],
                    regression_file=files.get("regression", ""),
                    base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# dataset

@dataclass
class ImageRecord:
    image_id: str
    width: int
    height: int
    box_ids: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    rows: list = field(default_factory=list)      # global feature row indices
    masks: list = field(default_factory=list)
    gts: list = field(default_factory=list)       # (class_id, Box, difficult)


class Dataset:
    """Everything a detector run needs, loaded and cross-validated in memory.

    Feature matrix rows follow the boxes file's line order over all images,
    so train/test manifests over disjoint image subsets can share files.
    """

    def __init__(self, manifest: Manifest, min_segment_pixels=1500):
        self.manifest = manifest
        self.class_names = list(manifest.class_names)
        self.n_classes = len(self.class_names)
        self.images = {}
        order = []
        for image_id, w, h in manifest.images:
            if image_id in self.images:
                raise InputError(f"duplicate image id {image_id}")
            self.images[image_id] = ImageRecord(image_id, w, h)
            order.append(image_id)
        self.image_order = order

        box_rows = read_boxes_file(manifest.resolve(manifest.boxes_file))
        for row_idx, (image_id, box_id, box) in enumerate(box_rows):
            rec = self.images.get(image_id)
            if rec is None:
                continue
            if box_id in rec.box_ids:
                raise InputError(f"duplicate box id {box_id} in image {image_id}")
            rec.box_ids.append(box_id)
            rec.boxes.append(box)
            rec.rows.append(row_idx)
        self._n_feature_rows = len(box_rows)

        for mask in read_masks_file(manifest.resolve(manifest.masks_file)):
            rec = self.images.get(mask.image_id)
            if rec is None:
                continue
            if (mask.height, mask.width) != (rec.height, rec.width):
                raise InputError(
                    f"segment {mask.segment_id}: mask dims {mask.height}x{mask.width} "
                    f"differ from image {mask.image_id} dims {rec.height}x{rec.width}")
            if mask.pixel_count < min_segment_pixels:
                continue
            rec.masks.append(mask)
        for rec in self.images.values():
            rec.masks.sort(key=lambda m: m.segment_id)

        self.seg_scores = {}
        for image_id, seg_id, class_id, score in read_seg_scores_file(
                manifest.resolve(manifest.seg_scores_file)):
            if class_id < 1 or class_id > self.n_classes:
                raise InputError(f"segment score with invalid class id {class_id}")
            self.seg_scores[(image_id, seg_id, class_id)] = score

        for image_id, class_id, box, difficult in read_gt_file(
                manifest.resolve(manifest.ground_truth_file)):
            rec = self.images.get(image_id)
            if rec is None:
                continue
            if class_id < 1 or class_id > self.n_classes:
                raise InputError(f"ground truth with invalid class id {class_id}")
            rec.gts.append((class_id, box, difficult))

        self.appearance = read_feature_matrix(manifest.resolve(manifest.appearance_file))
        self.context = read_feature_matrix(manifest.resolve(manifest.context_file))
        self.regression = None
        if manifest.regression_file:
            self.regression = read_feature_matrix(
                manifest.resolve(manifest.regression_file))
        for name, mat in (("appearance", self.appearance), ("context", self.context),
                          ("regression", self.regression)):
            if mat is not None and mat.shape[0] != self._n_feature_rows:
                raise InputError(
                    f"{name} matrix has {mat.shape[0]} rows, boxes file has "
                    f"{self._n_feature_rows}")

        for rec in self.images.values():
            for mask in rec.masks:
                for c in range(1, self.n_classes + 1):
                    if (rec.image_id, mask.segment_id, c) not in self.seg_scores:
                        raise InputError(
                            f"missing score for segment {mask.segment_id} of "
                            f"{rec.image_id}, class {c}")

    @property
    def d_app(self):
        return self.appearance.shape[1]

    @property
    def d_ctx(self):
        return self.context.shape[1]

    def record(self, image_id) -> ImageRecord:
        rec = self.images.get(image_id)
        if rec is None:
            raise InputError(f"unknown image id {image_id}")
        return rec
