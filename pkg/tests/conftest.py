import numpy as np
import pytest

from corrgrid.synth import SyntheticSpec, synth_generate, write_dataset


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(n_images=6, patches_off=(2, 3), seed=3)
    return spec, synth_generate(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dataset_dir(tmp_path, small_dataset):
    spec, ds = small_dataset
    return write_dataset(tmp_path / "data", ds, spec)
