import os
from dataclasses import replace

import numpy as np
import pytest

from core.config import ExperimentConfig, OutputSection, validate_config
from core.data import IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, MNIST_FILES, synth_correlated, write_idx

N_FAKE_TRAIN = 200
N_FAKE_TEST = 100

SMALL_MODEL = {'embed_dim': 3, 'hidden': (8,), 'p': 10, 'q': 2, 'fae_hidden': (16,), 'mlp_hidden': (16,)}
SMALL_TRAINING = {'lr': 0.01, 'batch_size': 20, 'epochs': 3}
SMALL_DATA = {'synth_n': 400, 'synth_d1': 6, 'synth_d2': 5}
SMALL_EVAL = {'folds': 3, 'classifier_epochs': 5}


def pytest_collection_modifyitems(config, items):
    if os.environ.get('SOFTCCA_SLOW'):
        return
    skip = pytest.mark.skip(reason="set SOFTCCA_SLOW=1 to run desk-scale acceptance tests")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def _write_fake_split(directory: str, split: str, n: int, seed: int):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = (np.arange(n) % 10).astype(np.uint8)
    write_idx(os.path.join(directory, MNIST_FILES[f'{split}_images']), images, IDX_IMAGE_MAGIC, compress=True)
    write_idx(os.path.join(directory, MNIST_FILES[f'{split}_labels']), labels, IDX_LABEL_MAGIC, compress=True)


@pytest.fixture(scope='session')
def mnist_dir(tmp_path_factory):
    """Random-pixel stand-in for MNIST with the official file names, gzipped."""
    directory = str(tmp_path_factory.mktemp('mnist'))
    _write_fake_split(directory, 'train', N_FAKE_TRAIN, seed=1)
    _write_fake_split(directory, 'test', N_FAKE_TEST, seed=2)
    return directory


@pytest.fixture
def make_config(tmp_path, mnist_dir):
    """Small, fast experiment configs; keyword dicts override single sections."""
    def make(model=None, training=None, losses=None, data=None, eval=None) -> ExperimentConfig:
        base = ExperimentConfig()
        config = ExperimentConfig(
            model=replace(base.model, **{**SMALL_MODEL, **(model or {})}),
            training=replace(base.training, **{**SMALL_TRAINING, **(training or {})}),
            losses=replace(base.losses, **(losses or {})),
            data=replace(base.data, **{'source': 'synth', 'mnist_dir': mnist_dir, **SMALL_DATA, **(data or {})}),
            eval=replace(base.eval, **{**SMALL_EVAL, **(eval or {})}),
            output=OutputSection(dir=str(tmp_path / 'out')),
        )
        validate_config(config)
        return config
    return make


@pytest.fixture
def synth_views():
    """(train, held-out) views with planted correlations 0.9, 0.7, 0.5."""
    dataset, rho = synth_correlated(2000, 6, 5, 3, [0.9, 0.7, 0.5], seed=3)
    train, heldout = dataset.split(0.25, seed=0)
    return train, heldout, rho


@pytest.fixture
def real_mnist_config(tmp_path):
    """Full-size defaults over the official MNIST files named by SOFTCCA_MNIST_DIR."""
    directory = os.environ.get('SOFTCCA_MNIST_DIR')
    if not directory:
        pytest.skip("set SOFTCCA_MNIST_DIR to the official MNIST files")

    def make(losses=None, seed: int = 0) -> ExperimentConfig:
        base = ExperimentConfig()
        return ExperimentConfig(
            training=replace(base.training, seed=seed),
            losses=replace(base.losses, **(losses or {})),
            data=replace(base.data, source='mnist', mnist_dir=directory),
            output=OutputSection(dir=str(tmp_path / 'out')),
        )
    return make
