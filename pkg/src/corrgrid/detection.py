"""Object-mask providers: externally predicted masks and a colour-threshold baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .annotations import AnnotationError, parse_object_annotation
from .geometry import (BoundingBox, ImageDescriptor, PolygonMask, RasterizedMask, convex_hull,
                       rasterize_mask)


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectedObject:
    image_id: str
    mask: PolygonMask
    conf_o: float
    area_px: int
    label: str = "tower"

    def __post_init__(self):
        if not 0.0 <= self.conf_o <= 1.0:
            raise DetectionError(f"{self.image_id}: confidence {self.conf_o} outside [0, 1]")

    @property
    def bbox(self) -> BoundingBox:
        return self.mask.bbox()

    @classmethod
    def from_mask(cls, image: ImageDescriptor, mask: PolygonMask, conf_o: float,
                  label: str = "tower") -> "DetectedObject":
        return cls(image.image_id, mask, float(conf_o), rasterize_mask(mask, image).area_px, label)

    def rasterize(self, image: ImageDescriptor) -> RasterizedMask:
        return rasterize_mask(self.mask, image)

    def to_document(self, image: ImageDescriptor | None = None) -> dict:
        return {
            "imagePath": self.image_id,
            "imageWidth": image.width_px if image else None,
            "imageHeight": image.height_px if image else None,
            "confidence": self.conf_o,
            "shapes": [{"label": self.label, "shape_type": "polygon",
                        "points": [list(p) for p in self.mask.vertices]}],
        }


class MaskProvider:
    """Interface: ``detect(image_id, pixels) -> DetectedObject | None``."""

    def detect(self, image_id: str, pixels: np.ndarray) -> Optional[DetectedObject]:
        raise NotImplementedError


def parse_predicted_mask(document, image: ImageDescriptor | None = None,
                         target_label: str = "tower") -> DetectedObject:
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    conf = document.get("confidence") if isinstance(document, dict) else None
    if isinstance(conf, bool) or not isinstance(conf, (int, float)):
        raise DetectionError("predicted mask document needs a numeric 'confidence'")
    try:
        ann = parse_object_annotation(document, target_label)
    except AnnotationError as exc:
        raise DetectionError(str(exc)) from exc
    if image is None:
        w, h = document.get("imageWidth"), document.get("imageHeight")
        if not w or not h:
            raise DetectionError(f"{ann.image_id}: image size unknown")
        image = ImageDescriptor(ann.image_id, int(w), int(h))
    det = DetectedObject.from_mask(image, ann.mask, float(conf), target_label)
    if det.image_id != image.image_id:
        det = DetectedObject(image.image_id, det.mask, det.conf_o, det.area_px, det.label)
    return det


def load_external_masks(documents: Iterable, images: dict | None = None,
                        target_label: str = "tower") -> dict:
    """Map image id to :class:`DetectedObject`; absent ids mean "no detection"."""
    out = {}
    for doc in documents:
        if isinstance(doc, (str, Path)) and Path(doc).suffix == ".json" and Path(doc).exists():
            doc = Path(doc).read_text(encoding="utf-8")
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        image_id = Path(str(doc.get("imagePath", ""))).stem
        image = images.get(image_id) if images else None
        det = parse_predicted_mask(doc, image, target_label)
        if det.image_id in out:
            raise DetectionError(f"duplicate prediction for image {det.image_id!r}")
        out[det.image_id] = det
    return out


def write_masks(path, detections: dict, images: dict | None = None) -> None:
    docs = [detections[k].to_document(images.get(k) if images else None)
            for k in sorted(detections)]
    Path(path).write_text(json.dumps(docs) + "\n", encoding="utf-8")


def read_masks(path, images: dict | None = None) -> dict:
    return load_external_masks(json.loads(Path(path).read_text(encoding="utf-8")), images)


def color_match(pixels: np.ndarray, target_rgb, tolerance: float) -> np.ndarray:
    diff = np.abs(np.asarray(pixels, dtype=int) - np.asarray(target_rgb, dtype=int))
    return diff.max(axis=2) <= tolerance


def _component_hull(component: np.ndarray) -> np.ndarray:
    # pixel-corner hull so that the polygon covers every pixel of the component
    rows = np.flatnonzero(component.any(axis=1))
    corners = []
    for r in rows:
        cols = np.flatnonzero(component[r])
        c0, c1 = cols[0], cols[-1] + 1
        corners += [(c0, r), (c1, r), (c0, r + 1), (c1, r + 1)]
    return convex_hull(corners)


def baseline_detect(pixels: np.ndarray, target_rgb=(70, 70, 75), tolerance: float = 40,
                    image_id: str = "") -> Optional[DetectedObject]:
    """Largest 4-connected blob of target-coloured pixels, reported as its convex hull.

    Confidence is the fraction of hull pixels that belong to the blob.
    """
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise DetectionError(f"expected an RGB raster, got shape {px.shape}")
    labels, count = ndimage.label(color_match(px, target_rgb, tolerance))
    if count == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1
    component = labels == best
    hull = _component_hull(component)
    if len(hull) < 3:
        return None
    image = ImageDescriptor(image_id, px.shape[1], px.shape[0])
    mask = PolygonMask(hull, validate=False)
    raster = rasterize_mask(mask, image)
    if raster.area_px == 0:
        return None
    conf = float(sizes[best - 1]) / raster.area_px
    return DetectedObject(image_id, mask, min(conf, 1.0), raster.area_px)


@dataclass
class ColorMaskProvider(MaskProvider):
    target_rgb: tuple = (70, 70, 75)
    tolerance: float = 40

    def detect(self, image_id, pixels):
        return baseline_detect(pixels, self.target_rgb, self.tolerance, image_id)
