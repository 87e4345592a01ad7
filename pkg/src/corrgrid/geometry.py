"""Grid segmentation geometry, matrix helpers and polygon rasterization.

Segment indices are 1-based ``(x, y)`` pairs where ``x`` is the grid row and
``y`` the grid column. Everything internal is 0-based numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class GeometryError(ValueError):
    """Invalid grid, index or polygon."""


@dataclass(frozen=True)
class ImageDescriptor:
    image_id: str
    width_px: int
    height_px: int
    channels: int = 3

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise GeometryError(
                f"image {self.image_id!r} has invalid size {self.width_px}x{self.height_px}"
            )


@dataclass(frozen=True)
class SegmentIndex:
    x: int
    y: int

    def __post_init__(self):
        if self.x < 1 or self.y < 1:
            raise GeometryError(f"segment index ({self.x}, {self.y}) must be 1-based")


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate bounding box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class GridSpec:
    """An ``n x n`` partition of a ``width x height`` image.

    Use :meth:`for_image` to build one; it enforces divisibility (or crops the
    remainder when ``policy="crop"``).
    """

    n: int
    seg_width_px: int
    seg_height_px: int

    def __post_init__(self):
        if self.n < 1:
            raise GeometryError(f"n must be >= 1, got {self.n}")
        if self.seg_width_px < 1 or self.seg_height_px < 1:
            raise GeometryError("segments must be at least one pixel wide and tall")

    @classmethod
    def for_image(cls, width: int, height: int, n: int, policy: str = "strict") -> "GridSpec":
        if n < 1:
            raise GeometryError(f"n must be >= 1, got {n}")
        if policy not in ("strict", "crop"):
            raise GeometryError(f"unknown divisibility policy {policy!r}")
        if policy == "strict" and (width % n or height % n):
            raise GeometryError(
                f"image size {width}x{height} is not divisible by n={n} "
                "(use policy='crop' to drop the remainder)"
            )
        return cls(n, width // n, height // n)

    @property
    def width_px(self) -> int:
        return self.n * self.seg_width_px

    @property
    def height_px(self) -> int:
        return self.n * self.seg_height_px

    @property
    def n_segments(self) -> int:
        return self.n * self.n

    def indices(self) -> Iterator[SegmentIndex]:
        """Row-major iteration, ``x`` outer and ``y`` inner."""
        for x in range(1, self.n + 1):
            for y in range(1, self.n + 1):
                yield SegmentIndex(x, y)

    def check_index(self, idx: SegmentIndex) -> None:
        if not (1 <= idx.x <= self.n and 1 <= idx.y <= self.n):
            raise GeometryError(f"segment ({idx.x}, {idx.y}) outside 1..{self.n}")

    def check_image(self, image: ImageDescriptor) -> None:
        if image.width_px < self.width_px or image.height_px < self.height_px:
            raise GeometryError(
                f"image {image.image_id!r} ({image.width_px}x{image.height_px}) is smaller "
                f"than the grid ({self.width_px}x{self.height_px})"
            )


def segment_rect(grid: GridSpec, idx: SegmentIndex) -> BoundingBox:
    """Pixel rectangle of segment ``idx``; row ``x`` runs down, column ``y`` across."""
    grid.check_index(idx)
    w, h = grid.seg_width_px, grid.seg_height_px
    return BoundingBox((idx.y - 1) * w, (idx.x - 1) * h, idx.y * w, idx.x * h)


def crop_segment(pixels: np.ndarray, grid: GridSpec, idx: SegmentIndex) -> np.ndarray:
    r = segment_rect(grid, idx)
    return pixels[int(r.y_min):int(r.y_max), int(r.x_min):int(r.x_max)]


def segment_blocks(pixels: np.ndarray, grid: GridSpec) -> np.ndarray:
    """View an image as ``(n, n, h, w, ...)`` segment blocks (remainder cropped)."""
    n, w, h = grid.n, grid.seg_width_px, grid.seg_height_px
    if pixels.shape[0] < grid.height_px or pixels.shape[1] < grid.width_px:
        raise GeometryError(
            f"raster {pixels.shape[1]}x{pixels.shape[0]} smaller than grid "
            f"{grid.width_px}x{grid.height_px}"
        )
    cropped = pixels[: grid.height_px, : grid.width_px]
    blocks = cropped.reshape((n, h, n, w) + cropped.shape[2:])
    return np.swapaxes(blocks, 1, 2)


# -- matrices -----------------------------------------------------------------

def check_binary_matrix(cells, n: int | None = None) -> np.ndarray:
    arr = np.asarray(cells)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise GeometryError(f"expected a square matrix, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise GeometryError(f"expected {n}x{n} matrix, got {arr.shape[0]}x{arr.shape[1]}")
    if not np.isin(arr, (0, 1)).all():
        raise GeometryError("binary matrix contains values other than 0 and 1")
    return arr.astype(np.uint8)


def check_confidence_matrix(cells, n: int | None = None) -> np.ndarray:
    arr = np.asarray(cells, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise GeometryError(f"expected a square matrix, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise GeometryError(f"expected {n}x{n} matrix, got {arr.shape[0]}x{arr.shape[1]}")
    if not np.isfinite(arr).all() or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise GeometryError("confidence matrix values must lie in [0, 1]")
    return arr


def flatten(matrix) -> np.ndarray:
    """Row-major flattening of an ``n x n`` matrix into ``n**2`` values."""
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise GeometryError(f"expected a square matrix, got shape {arr.shape}")
    return arr.reshape(-1).copy()


def unflatten(values) -> np.ndarray:
    arr = np.asarray(values)
    n = int(round(np.sqrt(arr.size)))
    if arr.ndim != 1 or n * n != arr.size:
        raise GeometryError(f"cannot reshape {arr.size} values into a square matrix")
    return arr.reshape(n, n).copy()


# -- polygons -----------------------------------------------------------------

def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_segment(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_segment(p1, p2, q1)) or (o2 == 0 and on_segment(p1, p2, q2))
            or (o3 == 0 and on_segment(q1, q2, p1)) or (o4 == 0 and on_segment(q1, q2, p2)))


def is_simple(vertices: Sequence[Sequence[float]]) -> bool:
    """True if no two non-adjacent edges of the closed polygon touch."""
    pts = [tuple(map(float, v)) for v in vertices]
    k = len(pts)
    edges = [(pts[i], pts[(i + 1) % k]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if j == i + 1 or (i == 0 and j == k - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class PolygonMask:
    """Closed polygon in pixel coordinates; the closing edge is implicit."""

    vertices: tuple

    def __init__(self, vertices, validate: bool = True):
        pts = tuple((float(px), float(py)) for px, py in vertices)
        object.__setattr__(self, "vertices", pts)
        if len(pts) < 3:
            raise GeometryError(f"polygon needs at least 3 vertices, got {len(pts)}")
        if not all(np.isfinite(c) for p in pts for c in p):
            raise GeometryError("polygon has non-finite coordinates")
        if validate and not is_simple(pts):
            raise GeometryError("polygon is self-intersecting")

    def bbox(self) -> BoundingBox:
        v = np.asarray(self.vertices)
        return BoundingBox(v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    def clamped(self, image: ImageDescriptor) -> "PolygonMask":
        v = np.asarray(self.vertices)
        v[:, 0] = np.clip(v[:, 0], 0, image.width_px)
        v[:, 1] = np.clip(v[:, 1], 0, image.height_px)
        return PolygonMask(v, validate=False)

    def translated(self, dx: float, dy: float) -> "PolygonMask":
        return PolygonMask([(px + dx, py + dy) for px, py in self.vertices], validate=False)

    @property
    def geometric_area(self) -> float:
        return abs(signed_area(self.vertices))


@dataclass(frozen=True)
class RasterizedMask:
    membership: np.ndarray  # (H, W) bool
    area_px: int
    degenerate: bool

    def contains(self, px: int, py: int) -> bool:
        return bool(self.membership[py, px])


def _fill_rows(vertices: np.ndarray, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    xs, ys = vertices[:, 0], vertices[:, 1]
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    row_lo = max(int(np.floor(ys.min() - 0.5)), 0)
    row_hi = min(int(np.ceil(ys.max() - 0.5)), height - 1)
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        # half-open rule on y keeps vertex crossings counted exactly once
        hit = (y0 <= yc) != (y1 <= yc)
        if not hit.any():
            continue
        t = (yc - y0[hit]) / (y1[hit] - y0[hit])
        cross = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        for left, right in zip(cross[0::2], cross[1::2]):
            # pixel i is inside iff left <= i + 0.5 < right
            c0 = max(int(np.ceil(left - 0.5)), 0)
            c1 = min(int(np.ceil(right - 0.5)), width)
            if c1 > c0:
                out[row, c0:c1] = True
    return out


def rasterize_mask(mask: PolygonMask, image: ImageDescriptor) -> RasterizedMask:
    """Scanline even-odd fill sampling each pixel at its center."""
    clamped = mask.clamped(image)
    membership = _fill_rows(np.asarray(clamped.vertices), image.width_px, image.height_px)
    area = int(membership.sum())
    return RasterizedMask(membership, area, area == 0)


def grid_overlap_fractions(grid: GridSpec, membership: np.ndarray) -> np.ndarray:
    """Fraction of each segment's pixels inside ``membership``, as an ``n x n`` matrix."""
    blocks = segment_blocks(membership, grid)
    return blocks.sum(axis=(2, 3)) / float(grid.seg_width_px * grid.seg_height_px)


def intersection_fraction(seg_rect: BoundingBox, mask: PolygonMask | RasterizedMask,
                          image: ImageDescriptor) -> float:
    if isinstance(mask, PolygonMask):
        mask = rasterize_mask(mask, image)
    x0, y0 = int(seg_rect.x_min), int(seg_rect.y_min)
    x1, y1 = int(seg_rect.x_max), int(seg_rect.y_max)
    if x0 < 0 or y0 < 0 or x1 > image.width_px or y1 > image.height_px:
        raise GeometryError(f"segment {seg_rect.as_tuple()} lies outside the image")
    total = (x1 - x0) * (y1 - y0)
    if total <= 0:
        raise GeometryError("segment has zero area")
    return float(mask.membership[y0:y1, x0:x1].sum()) / total


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise hull without repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    return np.asarray(lower[:-1] + upper[:-1])
