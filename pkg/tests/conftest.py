import numpy as np
import pytest

from hierlearn.synthdata import SynthConfig, generate_corpus, load_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40-image annotated corpus shared by probe/CLI tests."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = generate_corpus(SynthConfig(num_images=40, seed=7), out)
    return load_corpus(manifest)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w):
    return rng.random((h, w))
