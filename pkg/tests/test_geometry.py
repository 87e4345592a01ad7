import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrgrid.geometry import (BoundingBox, GeometryError, GridSpec, ImageDescriptor, PolygonMask,
                               SegmentIndex, convex_hull, flatten, grid_overlap_fractions,
                               intersection_fraction, is_simple, rasterize_mask, segment_rect,
                               unflatten)


def test_segment_rect_drone_image_geometry():
    grid = GridSpec.for_image(5280, 3952, 16)
    assert (grid.seg_width_px, grid.seg_height_px) == (330, 247)
    assert segment_rect(grid, SegmentIndex(1, 1)).as_tuple() == (0, 0, 330, 247)


def test_segment_rect_identity_tiling():
    grid = GridSpec.for_image(4, 4, 1)
    assert segment_rect(grid, SegmentIndex(1, 1)).as_tuple() == (0, 0, 4, 4)


@pytest.mark.parametrize("w,h,n", [(8, 8, 2), (12, 9, 3), (30, 20, 5), (7, 7, 7)])
def test_tiling_brute_force(w, h, n):
    grid = GridSpec.for_image(w, h, n)
    cover = np.zeros((h, w), dtype=int)
    for idx in grid.indices():
        r = segment_rect(grid, idx)
        cover[int(r.y_min):int(r.y_max), int(r.x_min):int(r.x_max)] += 1
    assert (cover == 1).all()


def test_segment_rect_row_is_vertical():
    grid = GridSpec.for_image(20, 10, 2)
    r = segment_rect(grid, SegmentIndex(2, 1))
    assert r.as_tuple() == (0, 5, 10, 10)


def test_segment_index_out_of_range():
    grid = GridSpec.for_image(8, 8, 2)
    with pytest.raises(GeometryError):
        segment_rect(grid, SegmentIndex(3, 1))
    with pytest.raises(GeometryError):
        SegmentIndex(0, 1)


def test_non_divisible_rejected_unless_cropped():
    with pytest.raises(GeometryError, match="not divisible"):
        GridSpec.for_image(10, 10, 3)
    grid = GridSpec.for_image(10, 10, 3, policy="crop")
    assert (grid.width_px, grid.height_px) == (9, 9)


def test_flatten_examples():
    assert flatten([[7]]).tolist() == [7]
    assert flatten([[1, 0], [0, 1]]).tolist() == [1, 0, 0, 1]
    assert flatten(np.zeros((16, 16))).shape == (256,)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_flatten_unflatten_roundtrip(n, seed):
    m = np.random.default_rng(seed).random((n, n))
    np.testing.assert_array_equal(unflatten(flatten(m)), m)
    # row-major: x outer, y inner
    assert flatten(m)[n - 1] == m[0, n - 1]


def test_rasterize_full_rectangle():
    img = ImageDescriptor("a", 10, 10)
    r = rasterize_mask(PolygonMask([(0, 0), (10, 0), (10, 10), (0, 10)]), img)
    assert r.area_px == 100 and not r.degenerate


def test_rasterize_right_triangle_close_to_analytic():
    img = ImageDescriptor("a", 100, 100)
    r = rasterize_mask(PolygonMask([(0, 0), (100, 0), (0, 100)]), img)
    assert abs(r.area_px - 5000) <= 0.02 * 5000


def test_rasterize_collinear_is_flagged():
    img = ImageDescriptor("a", 10, 10)
    r = rasterize_mask(PolygonMask([(0, 0), (5, 5), (9, 9)]), img)
    assert r.area_px == 0 and r.degenerate


def test_rasterize_matches_point_in_polygon_brute_force(rng):
    img = ImageDescriptor("a", 40, 30)
    poly = PolygonMask([(3.2, 2.5), (35.7, 6.1), (28.4, 27.9), (14.0, 18.3), (5.5, 25.0)])
    member = rasterize_mask(poly, img).membership

    def inside(px, py):
        # ray casting, independent of the scanline implementation
        v = poly.vertices
        c = False
        j = len(v) - 1
        for i in range(len(v)):
            (xi, yi), (xj, yj) = v[i], v[j]
            if (yi > py) != (yj > py) and px < (xj - xi) * (py - yi) / (yj - yi) + xi:
                c = not c
            j = i
        return c

    expected = np.array([[inside(x + 0.5, y + 0.5) for x in range(40)] for y in range(30)])
    np.testing.assert_array_equal(member, expected)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.integers(1, 30), st.integers(1, 30))
def test_rectangle_area_exact(x0, y0, w, h):
    img = ImageDescriptor("a", 64, 64)
    poly = PolygonMask([(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])
    assert rasterize_mask(poly, img).area_px == w * h


def test_polygon_validation():
    with pytest.raises(GeometryError):
        PolygonMask([(0, 0), (1, 1)])
    with pytest.raises(GeometryError, match="self-intersecting"):
        PolygonMask([(0, 0), (10, 10), (10, 0), (0, 10)])
    assert is_simple([(0, 0), (10, 0), (10, 10), (0, 10)])


def test_intersection_fraction_examples():
    img = ImageDescriptor("a", 20, 20)
    grid = GridSpec.for_image(20, 20, 2)
    full = PolygonMask([(0, 0), (20, 0), (20, 20), (0, 20)])
    for idx in grid.indices():
        assert intersection_fraction(segment_rect(grid, idx), full, img) == 1.0
    far = PolygonMask([(12, 12), (20, 12), (20, 20), (12, 20)])
    assert intersection_fraction(segment_rect(grid, SegmentIndex(1, 1)), far, img) == 0.0


def test_intersection_fraction_left_half_brute_force():
    img = ImageDescriptor("a", 40, 40)
    seg = BoundingBox(10, 10, 30, 30)
    mask = PolygonMask([(10, 10), (20, 10), (20, 30), (10, 30)])
    member = np.zeros((40, 40), dtype=bool)
    for y in range(40):
        for x in range(40):
            member[y, x] = 10 <= x + 0.5 < 20 and 10 <= y + 0.5 < 30
    expected = member[10:30, 10:30].sum() / 400
    got = intersection_fraction(seg, mask, img)
    assert got == expected
    assert abs(got - 0.5) <= 20 / 400


def test_intersection_fraction_zero_area_segment():
    img = ImageDescriptor("a", 10, 10)
    with pytest.raises(GeometryError):
        intersection_fraction(BoundingBox(0, 0, 11, 5), PolygonMask([(0, 0), (5, 0), (5, 5)]), img)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.integers(1, 10), st.integers(0, 10))
def test_intersection_fraction_monotone(x0, y0, size, grow):
    img = ImageDescriptor("a", 40, 40)
    seg = BoundingBox(8, 8, 24, 24)

    def rect(a, b, c, d):
        return PolygonMask([(a, b), (c, b), (c, d), (a, d)])

    small = rect(x0, y0, x0 + size, y0 + size)
    big = rect(max(x0 - grow, 0), max(y0 - grow, 0), x0 + size + grow, y0 + size + grow)
    assert intersection_fraction(seg, big, img) >= intersection_fraction(seg, small, img)


def test_grid_overlap_fractions_matches_per_segment():
    img = ImageDescriptor("a", 32, 32)
    grid = GridSpec.for_image(32, 32, 4)
    poly = PolygonMask([(3, 1), (29, 5), (20, 30), (2, 22)])
    raster = rasterize_mask(poly, img)
    fr = grid_overlap_fractions(grid, raster.membership)
    for idx in grid.indices():
        assert fr[idx.x - 1, idx.y - 1] == intersection_fraction(segment_rect(grid, idx), raster, img)


def test_convex_hull_square_with_interior_points():
    pts = [(0, 0), (4, 0), (4, 4), (0, 4), (2, 2), (1, 3)]
    hull = convex_hull(pts)
    assert sorted(map(tuple, hull.tolist())) == [(0, 0), (0, 4), (4, 0), (4, 4)]
