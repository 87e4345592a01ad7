"""Balanced segment training-set construction (corrosion vs. non-corrosion).

Every corroded segment of the training images is kept; non-corroded segments
are shuffled and the first ``2 * N_c`` are taken, then the union is shuffled.
Samples only record ``(image_id, x, y, label)``; pixels are cropped on demand.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .annotations import GridAnnotation, build_label_matrix
from .geometry import GridSpec, SegmentIndex, crop_segment

log = logging.getLogger(__name__)

NEGATIVES_PER_POSITIVE = 2


class CissError(ValueError):
    pass


class ImbalanceWarning(UserWarning):
    """Fewer negatives available than the 1:2 ratio needs."""


@dataclass(frozen=True)
class SegmentSample:
    image_id: str
    index: SegmentIndex
    label: int


@dataclass
class TrainingSet:
    samples: list
    seed: int
    n_pos: int
    n_neg_selected: int
    grid: GridSpec | None = None
    images: Mapping[str, np.ndarray] | Callable[[str], np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def pixels(self, i: int) -> np.ndarray:
        if self.images is None or self.grid is None:
            raise CissError("training set has no image source attached")
        s = self.samples[i]
        src = self.images(s.image_id) if callable(self.images) else self.images[s.image_id]
        return crop_segment(src, self.grid, s.index)

    def iter_pixels(self):
        for i in range(len(self.samples)):
            yield self.pixels(i)

    def subset(self, positions) -> "TrainingSet":
        samples = [self.samples[i] for i in positions]
        n_pos = sum(s.label for s in samples)
        return TrainingSet(samples, self.seed, n_pos, len(samples) - n_pos, self.grid, self.images)


def ciss(train_images: Sequence[tuple], grid: GridSpec, seed: int) -> TrainingSet:
    """Build the balanced training set from ``(pixels_or_None, GridAnnotation)`` pairs.

    ``pixels`` may be ``None`` when only the manifest is needed.
    """
    if not train_images:
        raise CissError("no training images")
    positives, negatives = [], []
    images = {}
    for pixels, ann in train_images:
        if not isinstance(ann, GridAnnotation):
            raise CissError(f"expected GridAnnotation, got {type(ann).__name__}")
        if ann.n != grid.n:
            raise CissError(f"{ann.image_id}: annotation n={ann.n} does not match grid n={grid.n}")
        if ann.image_id in images:
            raise CissError(f"duplicate training image {ann.image_id!r}")
        images[ann.image_id] = pixels
        b = build_label_matrix(ann)
        for idx in grid.indices():
            sample = SegmentSample(ann.image_id, idx, int(b[idx.x - 1, idx.y - 1]))
            (positives if sample.label else negatives).append(sample)

    n_pos = len(positives)
    if n_pos == 0:
        raise CissError("no positive samples: no corroded segment among training images")

    rng = np.random.default_rng(seed)
    wanted = NEGATIVES_PER_POSITIVE * n_pos
    order = rng.permutation(len(negatives))
    if wanted > len(negatives):
        warnings.warn(f"only {len(negatives)} negatives for {n_pos} positives; "
                      f"using all of them instead of {wanted}", ImbalanceWarning, stacklevel=2)
        wanted = len(negatives)
    chosen = [negatives[i] for i in order[:wanted]]

    pool = positives + chosen
    samples = [pool[i] for i in rng.permutation(len(pool))]
    log.info("ciss: %d positives, %d negatives selected of %d", n_pos, wanted, len(negatives))
    has_pixels = all(p is not None for p in images.values())
    return TrainingSet(samples, seed, n_pos, wanted, grid, images if has_pixels else None)


def train_validation_split(ts: TrainingSet, fraction: float, seed: int):
    """Seeded floor split: ``floor(fraction * N)`` training samples, the rest validation."""
    if not 0.0 < fraction < 1.0:
        raise CissError(f"fraction must lie in (0, 1), got {fraction}")
    if len(ts) == 0:
        raise CissError("empty training set")
    n_train = int(np.floor(fraction * len(ts)))
    order = np.random.default_rng(seed).permutation(len(ts))
    return ts.subset(order[:n_train]), ts.subset(order[n_train:])


MANIFEST_FIELDS = ("image_id", "x", "y", "label")


def write_manifest(path, ts: TrainingSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for s in ts.samples:
            w.writerow((s.image_id, s.index.x, s.index.y, s.label))


def read_manifest(path, seed: int = 0, grid: GridSpec | None = None, images=None) -> TrainingSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise CissError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        samples = [SegmentSample(r["image_id"], SegmentIndex(int(r["x"]), int(r["y"])),
                                 int(r["label"])) for r in reader]
    n_pos = sum(s.label for s in samples)
    return TrainingSet(samples, seed, n_pos, len(samples) - n_pos, grid, images)


def export_crops(directory, ts: TrainingSet) -> None:
    from .annotations import save_image

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(ts.samples):
        save_image(out / f"{s.image_id}_{s.index.x}_{s.index.y}.png", ts.pixels(i))
