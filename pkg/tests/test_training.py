import numpy as np
import pytest

from core.cca import SoftCcaTrainer
from core.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint
from core.classifier import MlpClassifierTrainer
from core.data import load_mnist_split, synth_correlated
from core.errors import CompatibilityError, DivergenceError
from core.fae import FaeTrainer
from core.training import TrainStatus, checkpoint_config


@pytest.fixture
def views(make_config):
    d = make_config().data
    dataset, _ = synth_correlated(d.synth_n, d.synth_d1, d.synth_d2, 3, d.synth_rho, d.synth_seed)
    return dataset.split(0.2, seed=0)


def _soft_cca(config, views, **kwargs):
    train, heldout = views
    return SoftCcaTrainer(config, train, heldout=heldout, **kwargs)


def test_history_has_one_row_per_epoch(make_config, views):
    trainer = _soft_cca(make_config(), views)
    history = trainer.run()
    assert [row['epoch'] for row in history] == [1, 2, 3]
    assert list(history[0]) == trainer.metric_columns
    assert trainer.status == TrainStatus.COMPLETED
    assert trainer.step == 3 * (320 // 20)


def test_identical_runs_are_identical(make_config, views):
    a = _soft_cca(make_config(), views).run()
    b = _soft_cca(make_config(), views).run()
    assert a == b


def test_seed_changes_the_run(make_config, views):
    a = _soft_cca(make_config(), views).run()
    b = _soft_cca(make_config(training={'seed': 1}), views).run()
    assert a != b


@pytest.mark.parametrize('stop_at', [5, 16, 37])
def test_resume_matches_uninterrupted_run(tmp_path, make_config, views, stop_at):
    config = make_config(training={'reset_sdl_each_epoch': stop_at == 16})
    expected = _soft_cca(config, views).run()

    path = str(tmp_path / 'ckpt')
    first = _soft_cca(config, views, checkpoint_path=path)
    first.run(stop_at_step=stop_at)
    assert first.status == TrainStatus.STOPPED
    assert first.step == stop_at

    resumed = _soft_cca(config, views, checkpoint_path=path)
    resumed.restore(load_checkpoint(path))
    assert resumed.run() == expected
    assert resumed.status == TrainStatus.COMPLETED


def test_request_stop_checkpoints(tmp_path, make_config, views):
    path = str(tmp_path / 'ckpt')
    statuses = []
    trainer = _soft_cca(make_config(), views, checkpoint_path=path, on_status_change=statuses.append)
    trainer.on_epoch_end = lambda row: trainer.request_stop()
    history = trainer.run()
    assert len(history) == 1
    assert statuses == [TrainStatus.TRAINING, TrainStatus.STOPPED]
    ckpt, config = checkpoint_config(path)
    assert ckpt.header['epoch'] == 1 and ckpt.header['batch_pos'] == 0
    assert config.model.embed_dim == 3


def test_periodic_checkpoints(make_config, views):
    trainer = _soft_cca(make_config(training={'checkpoint_every': 7, 'epochs': 1}), views)
    saved = []
    trainer.save_checkpoint = lambda: saved.append(trainer.step)
    trainer.run()
    assert saved == [7, 14, 16]


def test_divergence(make_config, views):
    train, heldout = views
    train.view1[0, 0] = np.nan
    trainer = _soft_cca(make_config(), (train, heldout))
    with pytest.raises(DivergenceError):
        trainer.run()
    assert trainer.status == TrainStatus.ERROR
    assert trainer.step < 16
    assert np.all(np.isfinite(trainer.model.decorr1.state.c_accu))


def test_restore_rejects_other_kind(make_config, views, mnist_dir):
    images, labels = load_mnist_split(mnist_dir, 'train')
    fae = FaeTrainer(make_config(), images, labels)
    with pytest.raises(CompatibilityError):
        _soft_cca(make_config(), views).restore(fae.to_checkpoint())


def test_checkpoint_survives_encoding(make_config, views):
    trainer = _soft_cca(make_config(), views)
    trainer.run(stop_at_step=3)
    ckpt = decode_checkpoint(encode_checkpoint(trainer.to_checkpoint()))
    assert ckpt.header['step'] == 3
    assert ckpt.header['sdl1']['step'] == 3
    np.testing.assert_array_equal(ckpt.tensors['sdl1.c_accu'], trainer.model.sdl1.c_accu)


@pytest.mark.parametrize('variant', ['sdl', 'xcov'])
def test_fae_resume(tmp_path, make_config, mnist_dir, variant):
    images, labels = load_mnist_split(mnist_dir, 'train')
    config = make_config(losses={'variant': variant}, training={'epochs': 2})
    expected = FaeTrainer(config, images, labels).run()
    path = str(tmp_path / 'fae.ckpt')
    FaeTrainer(config, images, labels, checkpoint_path=path).run(stop_at_step=13)
    resumed = FaeTrainer(config, images, labels, checkpoint_path=path)
    resumed.restore(load_checkpoint(path))
    assert resumed.run() == expected


def test_mlp_classifier_resume(tmp_path, make_config, mnist_dir):
    images, labels = load_mnist_split(mnist_dir, 'train')
    test = load_mnist_split(mnist_dir, 'test')
    config = make_config(training={'epochs': 2})
    expected = MlpClassifierTrainer(config, images, labels, test=test).run()
    path = str(tmp_path / 'mlp.ckpt')
    MlpClassifierTrainer(config, images, labels, test=test, checkpoint_path=path).run(stop_at_step=6)
    resumed = MlpClassifierTrainer(config, images, labels, test=test, checkpoint_path=path)
    resumed.restore(load_checkpoint(path))
    assert resumed.run() == expected
