import hashlib

import numpy as np
import pytest

from corrgrid.geometry import GridSpec, SegmentIndex, rasterize_mask, segment_rect
from corrgrid.synth import (OracleColorScorer, SynthError, SyntheticSpec, is_rust, read_dataset,
                            render_overlay, synth_generate, write_dataset)


def _cells_from_pixels(mask, grid):
    """Loop oracle: every cell holding at least one flagged pixel."""
    out = set()
    for idx in grid.indices():
        r = segment_rect(grid, idx)
        if mask[int(r.y_min):int(r.y_max), int(r.x_min):int(r.x_max)].any():
            out.add(idx)
    return out


def test_no_patches_means_no_corrosion():
    ds = synth_generate(SyntheticSpec(n_images=3, patches_on=(0, 0), seed=1))
    assert all(not a.corroded_cells for a in ds.grid_annotations.values())


def test_fixed_patch_lands_in_one_cell():
    spec = SyntheticSpec(n_images=1, patches_on=(0, 0), fixed_patches=((125, 65, 133, 72),), seed=2)
    ds = synth_generate(spec)
    # cells are 40x30: x=125..132 sits in column 4, y=65..71 in row 3
    assert ds.grid_annotations[ds.ids[0]].corroded_cells == {SegmentIndex(3, 4)}


def test_seeded_generation_is_byte_identical(tmp_path):
    spec = SyntheticSpec(n_images=3, patches_off=(1, 2), seed=9)
    digests = []
    for d in ("a", "b"):
        root = write_dataset(tmp_path / d, synth_generate(spec), spec)
        digests.append({p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted(root.rglob("*")) if p.is_file()})
    assert digests[0] == digests[1]
    other = synth_generate(SyntheticSpec(n_images=3, patches_off=(1, 2), seed=10))
    assert not np.array_equal(other.images[other.ids[0]], synth_generate(spec).images[other.ids[0]])


def test_truth_equals_rust_on_tower(small_dataset):
    spec, ds = small_dataset
    for image_id in ds.ids:
        tower = rasterize_mask(ds.object_annotations[image_id].mask, ds.descriptor(image_id)).membership
        rust = is_rust(ds.images[image_id])
        assert _cells_from_pixels(rust & tower, ds.grid) == set(ds.grid_annotations[image_id].corroded_cells)


def test_off_structure_rust_creates_oracle_false_positives(small_dataset):
    spec, ds = small_dataset
    extra = 0
    for image_id in ds.ids:
        flagged = _cells_from_pixels(is_rust(ds.images[image_id]), ds.grid)
        truth = set(ds.grid_annotations[image_id].corroded_cells)
        assert truth <= flagged
        extra += len(flagged - truth)
    assert extra >= 2 * len(ds.ids)


def test_oracle_scorer():
    crops = [np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4, 3), np.uint8)]
    crops[1][2, 2] = (180, 80, 30)
    assert OracleColorScorer().score_segments(crops).tolist() == [0.0, 1.0]


def test_dataset_roundtrip(tmp_path, small_dataset):
    spec, ds = small_dataset
    write_dataset(tmp_path, ds, spec)
    back = read_dataset(tmp_path, spec.n)
    assert back.ids == ds.ids and back.grid == ds.grid
    for i in ds.ids:
        np.testing.assert_array_equal(back.images[i], ds.images[i])
        assert back.grid_annotations[i] == ds.grid_annotations[i]
        assert back.object_annotations[i] == ds.object_annotations[i]


def test_overlay_changes_only_marked_cell():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    grid = GridSpec.for_image(40, 40, 4)
    b = np.zeros((4, 4), np.uint8)
    b[1, 2] = 1
    out = render_overlay(img, b, grid=grid)
    changed = np.argwhere((out != img).any(axis=2))
    assert changed.size and changed[:, 0].min() >= 10 and changed[:, 0].max() < 20
    assert changed[:, 1].min() >= 20 and changed[:, 1].max() < 30
    np.testing.assert_array_equal(render_overlay(img, np.zeros((4, 4)), grid=grid), img)


def test_overlay_rejects_bad_matrix():
    with pytest.raises(SynthError):
        render_overlay(np.zeros((8, 8, 3), np.uint8), np.zeros((2, 3)))


def test_bad_spec():
    with pytest.raises(SynthError):
        synth_generate(SyntheticSpec(n_images=0))
