"""Annotation ingestion: grid corrosion labels, object polygons, dataset splits.

Grid annotation document (JSON)::

    {"image_id": "img_001", "n": 16, "corroded_cells": [[1, 2], [4, 4]]}

Object annotation document: a LabelMe subset::

    {"imagePath": "img_001.png", "imageWidth": 640, "imageHeight": 480,
     "shapes": [{"label": "tower", "shape_type": "polygon",
                 "points": [[10, 10], [200, 10], [120, 400]]}]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import (BoundingBox, GeometryError, GridSpec, ImageDescriptor, PolygonMask,
                       SegmentIndex)

log = logging.getLogger(__name__)


class AnnotationError(ValueError):
    """Malformed or inconsistent annotation document."""


@dataclass(frozen=True)
class GridAnnotation:
    image_id: str
    n: int
    corroded_cells: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for c in self.corroded_cells:
            if not (1 <= c.x <= self.n and 1 <= c.y <= self.n):
                raise AnnotationError(
                    f"{self.image_id}: cell ({c.x}, {c.y}) outside 1..{self.n}")

    @property
    def is_corroded(self) -> bool:
        return len(self.corroded_cells) > 0

    def to_document(self) -> dict:
        cells = sorted((c.x, c.y) for c in self.corroded_cells)
        return {"image_id": self.image_id, "n": self.n,
                "corroded_cells": [list(c) for c in cells]}


@dataclass(frozen=True)
class ObjectAnnotation:
    image_id: str
    label: str
    mask: PolygonMask
    image_width: int | None = None
    image_height: int | None = None

    @property
    def bbox(self) -> BoundingBox:
        return self.mask.bbox()

    def to_document(self) -> dict:
        return {
            "imagePath": self.image_id,
            "imageWidth": self.image_width,
            "imageHeight": self.image_height,
            "shapes": [{"label": self.label, "shape_type": "polygon",
                        "points": [list(p) for p in self.mask.vertices]}],
        }


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    test_ids: tuple
    seed: int

    def to_document(self) -> dict:
        return {"seed": self.seed, "train_ids": list(self.train_ids),
                "test_ids": list(self.test_ids)}

    @classmethod
    def from_document(cls, doc: dict) -> "DatasetSplit":
        return cls(tuple(doc["train_ids"]), tuple(doc["test_ids"]), int(doc["seed"]))


def parse_grid_annotation(document, grid: GridSpec | None = None) -> GridAnnotation:
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"grid annotation is not valid JSON: {exc}") from exc
    try:
        image_id = str(document["image_id"])
        n = document["n"]
        raw_cells = document["corroded_cells"]
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"grid annotation missing field: {exc}") from exc
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise AnnotationError(f"{image_id}: n must be a positive integer, got {n!r}")
    if grid is not None and grid.n != n:
        raise AnnotationError(f"{image_id}: annotation n={n} does not match grid n={grid.n}")

    cells = []
    for cell in raw_cells:
        if (not isinstance(cell, (list, tuple)) or len(cell) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in cell)):
            raise AnnotationError(f"{image_id}: cell {cell!r} is not an [x, y] integer pair")
        x, y = cell
        if not (1 <= x <= n and 1 <= y <= n):
            raise AnnotationError(f"{image_id}: cell ({x}, {y}) out of range 1..{n}")
        cells.append(SegmentIndex(x, y))
    unique = frozenset(cells)
    if len(unique) != len(cells):
        raise AnnotationError(f"{image_id}: duplicate corroded cells")
    return GridAnnotation(image_id, n, unique)


def _shape_vertices(shape: dict) -> list:
    points = shape.get("points")
    if not isinstance(points, list):
        raise AnnotationError("shape has no point list")
    kind = shape.get("shape_type", "polygon")
    if kind == "rectangle":
        if len(points) != 2:
            raise AnnotationError(f"rectangle shape needs 2 points, got {len(points)}")
        (xa, ya), (xb, yb) = points
        x0, x1 = sorted((float(xa), float(xb)))
        y0, y1 = sorted((float(ya), float(yb)))
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    if kind == "polygon":
        if len(points) < 3:
            raise AnnotationError(f"polygon shape needs at least 3 points, got {len(points)}")
        return [(float(px), float(py)) for px, py in points]
    raise AnnotationError(f"unsupported shape_type {kind!r}")


def parse_object_annotation(document, target_label: str = "tower") -> ObjectAnnotation:
    """Select the target polygon from a LabelMe-style document.

    When several shapes carry the target label the largest one is kept.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"object annotation is not valid JSON: {exc}") from exc
    if not isinstance(document, dict) or not isinstance(document.get("shapes"), list):
        raise AnnotationError("object annotation has no 'shapes' list")
    image_id = Path(str(document.get("imagePath", ""))).stem

    masks = []
    for shape in document["shapes"]:
        if shape.get("label") != target_label:
            continue
        try:
            masks.append(PolygonMask(_shape_vertices(shape)))
        except GeometryError as exc:
            raise AnnotationError(f"{image_id}: {exc}") from exc
    if not masks:
        raise AnnotationError(f"{image_id}: no polygon labelled {target_label!r}")
    if len(masks) > 1:
        log.warning("%s: %d %r polygons, keeping the largest", image_id, len(masks), target_label)
    mask = max(masks, key=lambda m: m.geometric_area)
    return ObjectAnnotation(image_id, target_label, mask,
                            document.get("imageWidth"), document.get("imageHeight"))


def build_label_matrix(ann: GridAnnotation) -> np.ndarray:
    b = np.zeros((ann.n, ann.n), dtype=np.uint8)
    for c in ann.corroded_cells:
        b[c.x - 1, c.y - 1] = 1
    return b


def split_dataset(ids: Iterable[str], k: int, seed: int) -> DatasetSplit:
    ids = list(ids)
    m = len(ids)
    if not 0 < k < m:
        raise AnnotationError(f"k must satisfy 0 < k < {m}, got {k}")
    if len(set(ids)) != m:
        raise AnnotationError("image ids are not unique")
    order = np.random.default_rng(seed).permutation(m)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(tuple(shuffled[:k]), tuple(shuffled[k:]), seed)


def count_segments(n_images: int, n: int) -> int:
    return n_images * n * n


# -- files --------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB raster (PNG, PPM, ...) as an ``(H, W, 3)`` uint8 array."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, pixels: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def describe_image(image_id: str, pixels: np.ndarray) -> ImageDescriptor:
    return ImageDescriptor(image_id, int(pixels.shape[1]), int(pixels.shape[0]),
                           int(pixels.shape[2]) if pixels.ndim == 3 else 1)


def read_grid_annotation(path, grid: GridSpec | None = None) -> GridAnnotation:
    return parse_grid_annotation(Path(path).read_text(encoding="utf-8"), grid)


def write_grid_annotation(path, ann: GridAnnotation) -> None:
    Path(path).write_text(json.dumps(ann.to_document(), indent=1) + "\n", encoding="utf-8")


def read_object_annotation(path, target_label: str = "tower") -> ObjectAnnotation:
    return parse_object_annotation(Path(path).read_text(encoding="utf-8"), target_label)


def write_object_annotation(path, ann: ObjectAnnotation) -> None:
    Path(path).write_text(json.dumps(ann.to_document(), indent=1) + "\n", encoding="utf-8")
