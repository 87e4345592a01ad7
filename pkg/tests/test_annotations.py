import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrgrid.annotations import (AnnotationError, GridAnnotation, ObjectAnnotation,
                                  build_label_matrix, count_segments, load_image,
                                  parse_grid_annotation, parse_object_annotation, save_image,
                                  split_dataset)
from corrgrid.geometry import GridSpec, PolygonMask, SegmentIndex


def test_parse_grid_annotation_echo():
    ann = parse_grid_annotation({"image_id": "a", "n": 2, "corroded_cells": [[1, 2]]})
    assert ann.corroded_cells == {SegmentIndex(1, 2)}


@pytest.mark.parametrize("doc,msg", [
    ({"image_id": "a", "n": 2, "corroded_cells": [[3, 1]]}, "out of range"),
    ({"image_id": "a", "n": 2, "corroded_cells": [[1, 1], [1, 1]]}, "duplicate"),
    ({"image_id": "a", "corroded_cells": []}, "missing"),
    ({"image_id": "a", "n": 2, "corroded_cells": [[1.5, 1]]}, "integer pair"),
])
def test_parse_grid_annotation_errors(doc, msg):
    with pytest.raises(AnnotationError, match=msg):
        parse_grid_annotation(doc)


def test_parse_grid_annotation_grid_mismatch():
    with pytest.raises(AnnotationError, match="does not match"):
        parse_grid_annotation({"image_id": "a", "n": 4, "corroded_cells": []},
                              GridSpec.for_image(16, 16, 2))


def test_parse_grid_annotation_bad_json():
    with pytest.raises(AnnotationError):
        parse_grid_annotation("{not json")


def test_573_documents_segment_total():
    docs = [json.dumps({"image_id": f"i{k}", "n": 16, "corroded_cells": []}) for k in range(573)]
    anns = [parse_grid_annotation(d) for d in docs]
    assert len(anns) == 573
    assert sum(a.n * a.n for a in anns) == 146_688 == count_segments(573, 16)


def _labelme(shapes):
    return {"imagePath": "img_7.png", "imageWidth": 100, "imageHeight": 80, "shapes": shapes}


def test_parse_object_polygon():
    pts = [[10, 10], [60, 10], [60, 50], [10, 50]]
    ann = parse_object_annotation(_labelme([{"label": "tower", "shape_type": "polygon",
                                             "points": pts}]))
    assert ann.image_id == "img_7"
    assert len(ann.mask.vertices) == 4
    assert ann.bbox.as_tuple() == (10, 10, 60, 50)


def test_parse_object_rectangle_expanded():
    ann = parse_object_annotation(_labelme([{"label": "tower", "shape_type": "rectangle",
                                             "points": [[60, 50], [10, 10]]}]))
    # corner expansion of the two given corners
    assert ann.mask.vertices == ((10, 10), (60, 10), (60, 50), (10, 50))


def test_parse_object_selects_target_label():
    shapes = [{"label": "tree", "shape_type": "polygon", "points": [[0, 0], [5, 0], [5, 5]]},
              {"label": "tower", "shape_type": "polygon", "points": [[20, 20], [40, 20], [30, 60]]}]
    ann = parse_object_annotation(_labelme(shapes))
    assert ann.mask.vertices[0] == (20, 20)


def test_parse_object_largest_of_several(caplog):
    shapes = [{"label": "tower", "points": [[0, 0], [5, 0], [5, 5]]},
              {"label": "tower", "points": [[20, 20], [40, 20], [30, 60]]}]
    ann = parse_object_annotation(_labelme(shapes))
    assert ann.mask.vertices[0] == (20, 20)
    assert "largest" in caplog.text


@pytest.mark.parametrize("shapes,msg", [
    ([{"label": "tree", "points": [[0, 0], [5, 0], [5, 5]]}], "no polygon"),
    ([{"label": "tower", "points": [[0, 0], [5, 0]]}], "at least 3"),
    ([{"label": "tower", "points": [[0, 0], [10, 10], [10, 0], [0, 10]]}], "self-intersecting"),
    ([{"label": "tower", "shape_type": "circle", "points": [[0, 0], [5, 0]]}], "unsupported"),
])
def test_parse_object_errors(shapes, msg):
    with pytest.raises(AnnotationError, match=msg):
        parse_object_annotation(_labelme(shapes))


def test_build_label_matrix_examples():
    assert build_label_matrix(GridAnnotation("a", 3)).sum() == 0
    full = GridAnnotation("a", 3, frozenset(SegmentIndex(x, y) for x in (1, 2, 3) for y in (1, 2, 3)))
    assert (build_label_matrix(full) == 1).all()
    ann = GridAnnotation("a", 4, frozenset({SegmentIndex(1, 1), SegmentIndex(2, 3), SegmentIndex(4, 4)}))
    b = build_label_matrix(ann)
    expected = np.zeros((4, 4), dtype=int)
    for x, y in [(1, 1), (2, 3), (4, 4)]:
        expected[x - 1, y - 1] = 1
    np.testing.assert_array_equal(b, expected)
    assert b.sum() == 3


cells_strategy = st.integers(1, 8).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(1, n), st.integers(1, n)))))


@settings(max_examples=60, deadline=None)
@given(cells_strategy)
def test_label_matrix_sum_and_roundtrip(arg):
    n, cells = arg
    ann = GridAnnotation("img", n, frozenset(SegmentIndex(x, y) for x, y in cells))
    assert build_label_matrix(ann).sum() == len(cells)
    assert parse_grid_annotation(json.dumps(ann.to_document())) == ann


def test_object_annotation_roundtrip():
    ann = ObjectAnnotation("img_3", "tower", PolygonMask([(1.5, 2), (30, 2), (12, 40.25)]), 64, 48)
    assert parse_object_annotation(json.dumps(ann.to_document())) == ann


def test_split_examples():
    s = split_dataset([f"i{k}" for k in range(573)], 379, seed=7)
    assert (len(s.train_ids), len(s.test_ids)) == (379, 194)
    s2 = split_dataset(["a", "b"], 1, seed=0)
    assert set(s2.train_ids) | set(s2.test_ids) == {"a", "b"}
    assert not set(s2.train_ids) & set(s2.test_ids)
    assert split_dataset(list("abcdefg"), 3, 5) == split_dataset(list("abcdefg"), 3, 5)


@pytest.mark.parametrize("k", [0, 5, -1])
def test_split_k_out_of_range(k):
    with pytest.raises(AnnotationError):
        split_dataset(list("abcde"), k, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.data())
def test_split_is_permutation(m, data):
    ids = [f"id{k}" for k in range(m)]
    k = data.draw(st.integers(1, m - 1))
    s = split_dataset(ids, k, data.draw(st.integers(0, 2**31)))
    assert sorted(s.train_ids + s.test_ids) == sorted(ids)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_image_io_reports_exact_size(tmp_path, suffix):
    px = np.random.default_rng(0).integers(0, 256, size=(13, 21, 3), dtype=np.uint8)
    save_image(tmp_path / f"x{suffix}", px)
    back = load_image(tmp_path / f"x{suffix}")
    assert back.shape == (13, 21, 3)
    np.testing.assert_array_equal(back, px)
