"""Synthetic tower imagery with exact ground truth, plus overlay rendering.

Each image shows a dark trapezoidal lattice "tower" on a sky gradient, with
optional green clutter. Rust-coloured patches are painted on the tower (these
are the labelled corrosion) and optionally off the tower (unlabelled
distractors that a colour-only scorer will flag).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .annotations import (GridAnnotation, ObjectAnnotation, read_grid_annotation,
                          read_object_annotation, load_image, save_image, write_grid_annotation,
                          write_object_annotation)
from .geometry import (GridSpec, ImageDescriptor, PolygonMask, SegmentIndex, rasterize_mask,
                       segment_blocks, segment_rect)

TOWER_RGB = (62, 62, 68)
LATTICE_RGB = (88, 88, 94)
TOWER_TARGET_RGB = (70, 70, 75)
TOWER_TOLERANCE = 40


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 12
    width: int = 320
    height: int = 240
    n: int = 8
    tower_base_frac: float = 0.36
    tower_top_frac: float = 0.08
    tower_height_frac: float = 0.9
    tower_jitter_frac: float = 0.08
    lattice_spacing: int = 12
    patches_on: tuple = (2, 4)
    patches_off: tuple = (0, 0)
    patch_size: tuple = (4, 10)
    clutter: bool = True
    fixed_patches: tuple = ()
    seed: int = 0
    prefix: str = "synth"

    def to_document(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    grid: GridSpec
    images: dict = field(default_factory=dict)
    grid_annotations: dict = field(default_factory=dict)
    object_annotations: dict = field(default_factory=dict)

    @property
    def ids(self) -> list:
        return list(self.images)

    def descriptor(self, image_id: str) -> ImageDescriptor:
        px = self.images[image_id]
        return ImageDescriptor(image_id, px.shape[1], px.shape[0])


def is_rust(pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, dtype=int)
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    return (r >= 130) & (g >= 40) & (g <= 120) & (b <= 80) & (r - g >= 40)


class OracleColorScorer:
    """Scores 1 for any segment containing a rust-coloured pixel, else 0."""

    def score_segments(self, crops):
        return np.array([1.0 if is_rust(c).any() else 0.0 for c in crops])


def _noise(rng, shape, amp):
    return rng.integers(-amp, amp + 1, size=shape)


def _paint(img, mask, rgb, rng, amp):
    count = int(mask.sum())
    if count:
        vals = np.asarray(rgb, dtype=int)[None, :] + _noise(rng, (count, 3), amp)
        img[mask] = np.clip(vals, 0, 255)


def _tower_polygon(spec, rng) -> PolygonMask:
    w, h = spec.width, spec.height
    cx = w / 2 + rng.uniform(-spec.tower_jitter_frac, spec.tower_jitter_frac) * w
    base, top = spec.tower_base_frac * w / 2, spec.tower_top_frac * w / 2
    bottom, top_y = float(h), h * (1 - spec.tower_height_frac)
    verts = [(cx - base, bottom), (cx + base, bottom), (cx + top, top_y), (cx - top, top_y)]
    return PolygonMask([(round(x), round(y)) for x, y in verts])


def _rect_mask(shape, x0, y0, x1, y1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def _generate_one(spec: SyntheticSpec, grid: GridSpec, image_id: str, rng) -> tuple:
    h, w = spec.height, spec.width
    desc = ImageDescriptor(image_id, w, h)
    img = np.zeros((h, w, 3), dtype=np.uint8)

    t = np.linspace(0.0, 1.0, h)[:, None]
    sky = np.stack([150 + 40 * t, 190 + 25 * t, 235 + 5 * t + 0 * t], axis=-1)
    img[:] = np.clip(np.broadcast_to(sky, (h, w, 3)) + _noise(rng, (h, w, 3), 5), 0, 255)

    if spec.clutter:
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(int(rng.integers(2, 5))):
            cx, cy = rng.uniform(0, w), rng.uniform(h * 0.6, h)
            rx, ry = rng.uniform(w * 0.04, w * 0.1), rng.uniform(h * 0.05, h * 0.12)
            blob = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
            base = (int(rng.integers(45, 76)), int(rng.integers(130, 161)), int(rng.integers(40, 71)))
            _paint(img, blob, base, rng, 4)

    tower = _tower_polygon(spec, rng)
    inside = rasterize_mask(tower, desc).membership
    _paint(img, inside, TOWER_RGB, rng, 6)
    yy, xx = np.mgrid[0:h, 0:w]
    s = spec.lattice_spacing
    lattice = inside & (((xx + yy) % s < 2) | ((xx - yy) % s < 2) | (yy % (2 * s) < 2))
    _paint(img, lattice, LATTICE_RGB, rng, 4)

    truth_px = np.zeros((h, w), dtype=bool)

    def rust_rgb():
        return (int(rng.integers(160, 201)), int(rng.integers(60, 96)), int(rng.integers(20, 46)))

    for x0, y0, x1, y1 in spec.fixed_patches:
        patch = _rect_mask((h, w), int(x0), int(y0), int(x1), int(y1))
        _paint(img, patch, rust_rgb(), rng, 6)
        truth_px |= patch

    lo, hi = spec.patch_size
    for _ in range(int(rng.integers(spec.patches_on[0], spec.patches_on[1] + 1))):
        for _attempt in range(500):
            pw, ph = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
            x0, y0 = int(rng.integers(0, w - pw + 1)), int(rng.integers(0, h - ph + 1))
            if inside[y0:y0 + ph, x0:x0 + pw].all():
                break
        else:
            raise SynthError(f"{image_id}: could not fit a {pw}x{ph} patch on the tower")
        patch = _rect_mask((h, w), x0, y0, x0 + pw, y0 + ph)
        _paint(img, patch, rust_rgb(), rng, 6)
        truth_px |= patch

    n_off = int(rng.integers(spec.patches_off[0], spec.patches_off[1] + 1))
    if n_off:
        # off-structure patches live in cells at least one cell away from the tower bbox
        bb = tower.bbox()
        sw, sh = grid.seg_width_px, grid.seg_height_px
        far = [idx for idx in grid.indices()
               if (segment_rect(grid, idx).x_max <= bb.x_min - sw
                   or segment_rect(grid, idx).x_min >= bb.x_max + sw
                   or segment_rect(grid, idx).y_max <= bb.y_min - sh)]
        if not far:
            raise SynthError(f"{image_id}: no room for off-structure patches")
        for k in rng.choice(len(far), size=min(n_off, len(far)), replace=False):
            r = segment_rect(grid, far[int(k)])
            pw = int(rng.integers(lo, min(hi, sw - 2) + 1))
            ph = int(rng.integers(lo, min(hi, sh - 2) + 1))
            x0 = int(r.x_min) + 1 + int(rng.integers(0, sw - pw - 1))
            y0 = int(r.y_min) + 1 + int(rng.integers(0, sh - ph - 1))
            _paint(img, _rect_mask((h, w), x0, y0, x0 + pw, y0 + ph), rust_rgb(), rng, 6)

    cells = segment_blocks(truth_px, grid).any(axis=(2, 3))
    corroded = frozenset(SegmentIndex(int(i) + 1, int(j) + 1) for i, j in np.argwhere(cells))
    gann = GridAnnotation(image_id, grid.n, corroded)
    oann = ObjectAnnotation(image_id, "tower", tower, w, h)
    return img, gann, oann


def synth_generate(spec: SyntheticSpec) -> SyntheticDataset:
    if spec.n_images < 1:
        raise SynthError("n_images must be >= 1")
    grid = GridSpec.for_image(spec.width, spec.height, spec.n)
    lo, hi = spec.patch_size
    if lo < 1 or hi < lo:
        raise SynthError(f"invalid patch size range {spec.patch_size}")
    if spec.patches_off[1] and (hi + 2 > grid.seg_width_px or hi + 2 > grid.seg_height_px) \
            and (lo + 2 > grid.seg_width_px or lo + 2 > grid.seg_height_px):
        raise SynthError("off-structure patches do not fit inside a segment")
    rng = np.random.default_rng(spec.seed)
    ds = SyntheticDataset(grid)
    width = max(4, len(str(spec.n_images)))
    for i in range(spec.n_images):
        image_id = f"{spec.prefix}_{i:0{width}d}"
        img, gann, oann = _generate_one(spec, grid, image_id, rng)
        ds.images[image_id] = img
        ds.grid_annotations[image_id] = gann
        ds.object_annotations[image_id] = oann
    return ds


def write_dataset(directory, ds: SyntheticDataset, spec: SyntheticSpec | None = None) -> Path:
    root = Path(directory)
    for sub in ("images", "grid", "objects"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for image_id, img in ds.images.items():
        save_image(root / "images" / f"{image_id}.png", img)
        write_grid_annotation(root / "grid" / f"{image_id}.json", ds.grid_annotations[image_id])
        write_object_annotation(root / "objects" / f"{image_id}.json",
                                ds.object_annotations[image_id])
    if spec is not None:
        (root / "synth_spec.json").write_text(json.dumps(spec.to_document(), indent=1) + "\n",
                                              encoding="utf-8")
    return root


def read_dataset(directory, n: int, target_label: str = "tower", policy: str = "strict") -> SyntheticDataset:
    """Load an ``images/ grid/ objects/`` dataset directory (synthetic or real)."""
    root = Path(directory)
    paths = sorted(p for p in (root / "images").iterdir()
                   if p.suffix.lower() in (".png", ".ppm", ".jpg", ".jpeg"))
    if not paths:
        raise SynthError(f"no images under {root / 'images'}")
    ds = None
    for p in paths:
        img = load_image(p)
        grid = GridSpec.for_image(img.shape[1], img.shape[0], n, policy)
        if ds is None:
            ds = SyntheticDataset(grid)
        elif grid != ds.grid:
            raise SynthError(f"{p.name}: image size differs from the rest of the dataset")
        ds.images[p.stem] = img
        gpath = root / "grid" / f"{p.stem}.json"
        if gpath.exists():
            ds.grid_annotations[p.stem] = read_grid_annotation(gpath, grid)
        opath = root / "objects" / f"{p.stem}.json"
        if opath.exists():
            ds.object_annotations[p.stem] = read_object_annotation(opath, target_label)
    return ds


def render_overlay(pixels: np.ndarray, decisions, mask: PolygonMask | None = None,
                   grid: GridSpec | None = None, tint=(255, 0, 0), strength: float = 0.45,
                   outline=(255, 255, 0)) -> np.ndarray:
    """Tint corroded cells and optionally draw the object mask boundary."""
    img = np.asarray(pixels)
    b = np.asarray(decisions)
    n = b.shape[0]
    if b.ndim != 2 or b.shape[1] != n:
        raise SynthError(f"decision matrix must be square, got {b.shape}")
    if grid is None:
        grid = GridSpec.for_image(img.shape[1], img.shape[0], n, "crop")
    if grid.n != n or img.shape[0] < grid.height_px or img.shape[1] < grid.width_px:
        raise SynthError("decision grid does not match the image")
    out = img.copy()
    tint_arr = np.asarray(tint, dtype=float)
    for i, j in np.argwhere(b == 1):
        r = segment_rect(grid, SegmentIndex(int(i) + 1, int(j) + 1))
        sl = (slice(int(r.y_min), int(r.y_max)), slice(int(r.x_min), int(r.x_max)))
        out[sl] = np.round((1 - strength) * out[sl] + strength * tint_arr).astype(np.uint8)
    if mask is not None:
        desc = ImageDescriptor("overlay", img.shape[1], img.shape[0])
        member = rasterize_mask(mask, desc).membership
        edge = member & ~ndimage.binary_erosion(member)
        out[edge] = outline
    return out
