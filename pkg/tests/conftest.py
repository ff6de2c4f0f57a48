import numpy as np
import pytest

from segdetect.boxes import Box
from segdetect.masks import SegmentMask, largest_segment_area
from segdetect.model import FeatureBundle
from segdetect.segfeat import GridSpec, assemble_block, segclass_feat


def make_bundle(image_id, width, height, boxes, masks, raw_scores,
                appearance, context, grid_k, lam):
    """Assemble a FeatureBundle directly from in-memory pieces.

    raw_scores: (n_segs, C) raw ranker scores per segment.
    """
    raw_scores = np.atleast_2d(np.asarray(raw_scores, dtype=np.float64))
    n_boxes = len(boxes)
    n_segs = len(masks)
    grid = GridSpec(grid_k)
    m = largest_segment_area(masks) if masks else 0
    L = 2 * grid_k * grid_k + 4
    seg_base = np.zeros((n_boxes, n_segs, L))
    for s, mask in enumerate(masks):
        for b, box in enumerate(boxes):
            seg_base[b, s] = assemble_block(box, mask, 0.0, grid, lam, m)
    sig = np.vectorize(segclass_feat)(raw_scores) if n_segs else \
        np.zeros((0, raw_scores.shape[1]))
    return FeatureBundle(
        image_id=image_id, width=width, height=height,
        box_ids=list(range(n_boxes)), boxes=list(boxes),
        appearance=np.asarray(appearance, dtype=np.float64),
        context=np.asarray(context, dtype=np.float64),
        seg_ids=[m_.segment_id for m_ in masks], seg_base=seg_base,
        sigmoid_scores=sig, segments=list(masks), largest_area=m)


def random_masks(rng, n_segs, width, height):
    masks = []
    for s in range(n_segs):
        while True:
            arr = rng.random((height, width)) < rng.uniform(0.1, 0.6)
            if arr.any():
                break
        masks.append(SegmentMask.from_array(arr, "img", s))
    return masks


def random_boxes(rng, n, width, height):
    boxes = []
    for _ in range(n):
        x1 = int(rng.integers(0, width - 2))
        y1 = int(rng.integers(0, height - 2))
        boxes.append(Box(x1, y1, int(x1 + rng.integers(1, width - x1)),
                         int(y1 + rng.integers(1, height - y1))))
    return boxes


@pytest.fixture
def rng():
    return np.random.default_rng(0)
