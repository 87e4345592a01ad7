import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrgrid.detection import DetectedObject
from corrgrid.geometry import BoundingBox, ImageDescriptor, PolygonMask
from corrgrid.metrics import (ConfusionCounts, DecisionConfig, MetricError, average_precision,
                              confusion_metrics, derive_tau_I, ilp_decide, image_confidence,
                              iop_decide, iou_bbox, iou_mask, precision_at_iou, precision_table,
                              slp_decide)

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


def _det(conf):
    return DetectedObject("a", PolygonMask(SQUARE), conf, 1)


def test_slp_boundaries(rng):
    assert slp_decide(np.full((3, 3), 0.5), 0.5).all()
    assert not slp_decide(np.full((3, 3), 0.49), 0.5).any()
    cs = rng.random((8, 8))
    expected = [[1 if cs[i, j] >= 0.3 else 0 for j in range(8)] for i in range(8)]
    np.testing.assert_array_equal(slp_decide(cs, 0.3), expected)


def test_ilp_boundaries():
    assert ilp_decide(0.1, 0.1)
    assert not ilp_decide(0.0, 1e-9)
    b = np.zeros((16, 16))
    b.flat[:26] = 1
    assert image_confidence(b) == 26 / 256
    assert ilp_decide(image_confidence(b), 0.1)
    with pytest.raises(MetricError):
        ilp_decide(1.5)


def test_derive_tau_I():
    assert derive_tau_I([np.zeros((4, 4))] * 3) == 0
    a, b = np.zeros((2, 2)), np.zeros((2, 2))
    a.flat[0] = 1
    b.flat[:3] = 1
    assert derive_tau_I([a, b]) == 0.5
    mats = []
    for k in range(20):
        m = np.zeros((10, 10))
        m.flat[np.random.default_rng(k).choice(100, 10, replace=False)] = 1
        mats.append(m)
    assert abs(derive_tau_I(mats) - 0.1) <= 1e-9
    with pytest.raises(MetricError):
        derive_tau_I([])


def test_iop():
    dets = [_det(0.95)] * 190 + [_det(0.5)] * 4
    present = sum(iop_decide(d, 0.9) for d in dets)
    assert present == 190 and round(present / 194, 3) == 0.979
    assert not iop_decide(None, 0.0)
    assert iop_decide(_det(0.9), 0.9)


def test_confusion_examples():
    s = confusion_metrics(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
    assert (s.accuracy, s.precision, s.recall) == pytest.approx((0.7, 0.75, 0.6))
    assert s.f1 == pytest.approx(2 / 3, abs=1e-4)
    perfect = confusion_metrics(ConfusionCounts.from_predictions([1, 0, 1], [1, 0, 1]))
    assert (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1) == (1, 1, 1, 1)
    degenerate = confusion_metrics(ConfusionCounts(tp=0, fp=0, tn=5, fn=2))
    assert degenerate.precision == 0 and "precision" in degenerate.undefined
    with pytest.raises(MetricError):
        confusion_metrics(ConfusionCounts())


def test_counts_from_predictions_match_loop(rng):
    t, p = rng.integers(0, 2, 100), rng.integers(0, 2, 100)
    c = ConfusionCounts.from_predictions(t, p)
    assert c.tp == sum(1 for a, b in zip(t, p) if a and b)
    assert c.fp == sum(1 for a, b in zip(t, p) if not a and b)
    assert c.total == 100


def _rect(x0, y0, x1, y1):
    return PolygonMask([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def test_iou_mask_examples():
    img = ImageDescriptor("a", 100, 100)
    assert iou_mask(_rect(10, 10, 50, 50), _rect(10, 10, 50, 50), img) == 1.0
    assert iou_mask(_rect(0, 0, 10, 10), _rect(20, 20, 30, 30), img) == 0.0
    # side 40 squares offset by 20: analytic 1/3, integer edges rasterize exactly
    assert iou_mask(_rect(10, 10, 50, 50), _rect(30, 10, 70, 50), img) == pytest.approx(1 / 3)
    # an odd side puts the offset at a half pixel, so allow one column of quantization
    got = iou_mask(_rect(10, 10, 51, 51), _rect(30.5, 10, 71.5, 51), img)
    assert abs(got - 1 / 3) <= 41 / (41 * 61.5 - 41)
    with pytest.raises(MetricError):
        iou_mask(_rect(200, 200, 210, 210), _rect(300, 300, 310, 310), img)


def test_iou_bbox_examples():
    assert iou_bbox(BoundingBox(0, 0, 2, 2), BoundingBox(0, 0, 2, 2)) == 1
    assert iou_bbox(BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 3, 3)) == 0
    assert iou_bbox(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 3, 2)) == pytest.approx(1 / 3)


box = st.tuples(st.integers(0, 90), st.integers(0, 90), st.integers(1, 40), st.integers(1, 40)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=100, deadline=None)
@given(box, box)
def test_iou_bbox_properties(a, b):
    v = iou_bbox(a, b)
    assert v == iou_bbox(b, a) and 0 <= v <= 1
    # brute-force unit-cell count on the integer lattice
    cells = lambda r: {(i, j) for i in range(int(r.x_min), int(r.x_max)) for j in range(int(r.y_min), int(r.y_max))}
    ca, cb = cells(a), cells(b)
    assert v == pytest.approx(len(ca & cb) / len(ca | cb))
    assert (v == 1) == (a == b)
    img = ImageDescriptor("x", 140, 140)
    m = iou_mask(_rect(*a.as_tuple()), _rect(*b.as_tuple()), img)
    assert m == pytest.approx(v) and m == iou_mask(_rect(*b.as_tuple()), _rect(*a.as_tuple()), img)


def test_precision_examples():
    assert precision_at_iou([0.9] * 5, [True] * 5, 0.5) == 1.0
    p = precision_at_iou([0.8] * 193 + [0.3], [True] * 194, 0.5)
    assert p == 193 / 194
    # the published table rounds 99.4845 up to 99.49
    assert abs(100 * p - 99.49) < 0.01
    assert precision_at_iou([0.6, 0.4], [True, True], 0.5) == 0.5
    # rejected detections do not count
    assert precision_at_iou([0.6, 0.1], [True, False], 0.5) == 1.0
    with pytest.raises(MetricError):
        precision_at_iou([0.5], [False], 0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_precision_non_increasing(ious, t1, t2):
    lo, hi = sorted((t1, t2))
    ok = [True] * len(ious)
    assert precision_at_iou(ious, ok, hi) <= precision_at_iou(ious, ok, lo)


def test_average_precision_table_values():
    mask = [99.49, 99.49, 99.49, 98.97, 98.45, 92.78]
    bbox = [99.49, 99.49, 99.49, 99.49, 94.85, 73.71]
    assert abs(average_precision(mask) - 98.11) < 0.005
    assert abs(average_precision(bbox) - 94.42) < 0.005
    assert average_precision([0.7] * 4) == pytest.approx(0.7)
    with pytest.raises(MetricError):
        average_precision([])


def test_precision_table():
    t = precision_table([0.52, 0.62, 0.9], [True] * 3)
    assert t["precision"] == pytest.approx([1, 2 / 3, 2 / 3, 1 / 3, 1 / 3, 1 / 3])
    assert t["ap"] == pytest.approx(np.mean(t["precision"]))


def test_decision_config_validation():
    assert DecisionConfig().iou_thresholds == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75)
    with pytest.raises(MetricError):
        DecisionConfig(tau_s=1.5)
    with pytest.raises(MetricError):
        DecisionConfig(iou_thresholds=(0.6, 0.5))
