import numpy as np
import pytest

from accent_mdd.synth import SynthSpec, gen_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(n_train=40, n_dev=10, n_test=10, seed=5)
    splits, model = gen_corpus(spec)
    return spec, splits, model
