import numpy as np
import pytest

from segdetect.boxes import Box
from segdetect.errors import APUndefined
from segdetect.evaluate import (FP, IGNORED, TP, average_best_overlap,
                                average_precision, evaluate_detections,
                                match_detections, pr_curve)
from segdetect.model import Detection


def det(score, box, image_id="img", class_id=1, box_id=0):
    return Detection(image_id, class_id, box_id, box, score, [])


G = Box(0, 0, 9, 9)
FAR = Box(50, 50, 59, 59)


def test_match_single_tp():
    assert match_detections([det(0.9, G)], [(G, False)]) == [TP]


def test_match_second_hit_is_fp():
    dets = [det(0.9, G, box_id=0), det(0.8, G, box_id=1)]
    assert match_detections(dets, [(G, False)]) == [TP, FP]


def test_match_below_threshold_is_fp():
    assert match_detections([det(0.9, FAR)], [(G, False)]) == [FP]


def test_match_prefers_highest_iou_gt():
    g2 = Box(2, 0, 11, 9)
    flags = match_detections([det(0.9, g2)], [(G, False), (g2, False)])
    assert flags == [TP]
    # the second gt (exact match) was claimed, so a later exact hit on g1 is TP too
    flags = match_detections([det(0.9, g2, box_id=0), det(0.8, G, box_id=1)],
                             [(G, False), (g2, False)], iou_thresh=0.5)
    assert flags == [TP, TP]


def test_match_difficult_ignored():
    assert match_detections([det(0.9, G)], [(G, True)]) == [IGNORED]


def test_match_prefers_normal_over_difficult():
    flags = match_detections([det(0.9, G)], [(G, True), (G, False)])
    assert flags == [TP]


def test_ap_single_tp_full_recall():
    curve = pr_curve([TP], n_gt=1)
    assert average_precision(curve) == pytest.approx(1.0)


def test_ap_tp_fp_one_gt():
    # precision at full recall is 1 before the FP arrives
    curve = pr_curve([TP, FP], n_gt=1)
    assert average_precision(curve) == pytest.approx(1.0)


def test_ap_tp_fp_tp_two_gt():
    curve = pr_curve([TP, FP, TP], n_gt=2)
    # 0.5 recall at precision 1, then 0.5 more at precision 2/3
    assert average_precision(curve) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-9)
    assert average_precision(curve) == pytest.approx(0.833333333, abs=1e-6)


def test_ap_perfect_detections():
    curve = pr_curve([TP] * 7, n_gt=7)
    assert average_precision(curve) == pytest.approx(1.0)


def test_ap_all_fp_zero():
    assert average_precision(pr_curve([FP, FP], n_gt=3)) == 0.0


def test_ap_no_detections_zero():
    assert average_precision(pr_curve([], n_gt=2)) == 0.0


def test_ap_undefined_without_gt():
    with pytest.raises(APUndefined):
        average_precision(pr_curve([FP], n_gt=0))


def test_ignored_flags_do_not_affect_ap():
    a = pr_curve([TP, IGNORED, FP, IGNORED, TP], n_gt=2)
    b = pr_curve([TP, FP, TP], n_gt=2)
    assert average_precision(a) == average_precision(b)


def test_appending_fp_never_raises_ap():
    rng = np.random.default_rng(1)
    for _ in range(50):
        flags = list(rng.choice([TP, FP], size=rng.integers(1, 12)))
        n_gt = max(flags.count(TP), 1)
        base = average_precision(pr_curve(flags, n_gt))
        worse = average_precision(pr_curve(flags + [FP], n_gt))
        assert worse <= base + 1e-12


def test_eleven_point_close_to_all_point():
    flags = [TP, TP, FP, TP, FP, TP]
    curve = pr_curve(flags, n_gt=4)
    all_pt = average_precision(curve)
    eleven = average_precision(curve, eleven_point=True)
    assert abs(all_pt - eleven) < 0.15
    assert eleven != all_pt


def test_evaluate_monotone_score_invariance():
    # AP depends only on the order of the scores, not their values
    gts = {"a": [(1, G, False)], "b": [(1, Box(5, 5, 14, 14), False)]}
    dets1 = [det(0.9, G, "a", box_id=0),
             det(0.5, FAR, "a", box_id=1),
             det(0.3, Box(5, 5, 14, 14), "b", box_id=0)]
    dets2 = [Detection(d.image_id, d.class_id, d.box_id, d.box,
                       100.0 + 10.0 * d.score, []) for d in dets1]
    r1 = evaluate_detections(dets1, gts, n_classes=1)
    r2 = evaluate_detections(dets2, gts, n_classes=1)
    assert r1.ap[1] == r2.ap[1]


def test_evaluate_gt_order_invariance():
    g2 = Box(3, 0, 12, 9)
    dets = [det(0.9, G, box_id=0), det(0.8, g2, box_id=1)]
    r1 = evaluate_detections(dets, {"img": [(1, G, False), (1, g2, False)]}, 1)
    r2 = evaluate_detections(dets, {"img": [(1, g2, False), (1, G, False)]}, 1)
    assert r1.ap[1] == r2.ap[1] == pytest.approx(1.0)


def test_evaluate_classes_without_gt_skipped():
    gts = {"img": [(1, G, False)]}
    r = evaluate_detections([det(0.9, G)], gts, n_classes=3)
    assert set(r.ap) == {1}
    assert r.mean_ap == pytest.approx(1.0)


def test_evaluate_map_is_mean_of_defined_aps():
    gts = {"img": [(1, G, False), (2, FAR, False)]}
    dets = [det(0.9, G, class_id=1),
            det(0.8, Box(0, 0, 9, 9), "img", 2, 1)]   # class-2 det misses FAR
    r = evaluate_detections(dets, gts, n_classes=2)
    assert r.ap[1] == pytest.approx(1.0)
    assert r.ap[2] == pytest.approx(0.0)
    assert r.mean_ap == pytest.approx(0.5)


def test_abo_exact_candidates():
    gts = {"img": [(1, G, False), (1, FAR, False)]}
    per_class, mean = average_best_overlap({"img": [G, FAR]}, gts, 1)
    assert per_class[1] == pytest.approx(1.0)
    assert mean == pytest.approx(1.0)


def test_abo_half_overlap():
    gts = {"img": [(1, G, False)]}
    per_class, _ = average_best_overlap({"img": [Box(0, 0, 19, 9)]}, gts, 1)
    assert per_class[1] == pytest.approx(0.5)


def test_abo_duplicates_do_not_help():
    gts = {"img": [(1, G, False)]}
    once, _ = average_best_overlap({"img": [Box(0, 0, 19, 9)]}, gts, 1)
    twice, _ = average_best_overlap(
        {"img": [Box(0, 0, 19, 9), Box(0, 0, 19, 9)]}, gts, 1)
    assert once == twice


def test_abo_missing_image_counts_zero():
    gts = {"a": [(1, G, False)], "b": [(1, G, False)]}
    per_class, _ = average_best_overlap({"a": [G]}, gts, 1)
    assert per_class[1] == pytest.approx(0.5)


def test_abo_skips_difficult():
    gts = {"img": [(1, G, True), (1, FAR, False)]}
    per_class, _ = average_best_overlap({"img": [FAR]}, gts, 1)
    assert per_class[1] == pytest.approx(1.0)
