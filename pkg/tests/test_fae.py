import numpy as np
import pytest

from core.checkpoint import load_checkpoint
from core.commands import load_mnist_subset, load_mnist_test
from core.data import load_mnist_split
from core.errors import ConfigError, ShapeError
from core.fae import (FaeTrainer, build_fae_model, disentanglement_eval, fae_from_checkpoint,
                      fae_objective, fae_train, style_sheet, style_transfer)


@pytest.fixture
def train_split(mnist_dir):
    return load_mnist_split(mnist_dir, 'train')


@pytest.fixture
def test_split(mnist_dir):
    return load_mnist_split(mnist_dir, 'test')


def test_code_shapes(make_config, train_split):
    images, _ = train_split
    model = build_fae_model(make_config(), 784)
    code = model.encode(images[:5])
    assert code.shape == (5, 12)
    y, z = model.split_code(code)
    assert y.shape == (5, 10) and z.shape == (5, 2)
    assert model.decode(code).shape == (5, 784)
    assert model.predict(images[:5]).shape == (5,)


def test_objective_does_not_touch_state(make_config, train_split):
    images, labels = train_split
    model = build_fae_model(make_config(), 784)
    metrics, grads, state = fae_objective(model, images[:20], labels[:20])
    assert model.decorrelator.state.step == 0 and state.step == 1
    expected = metrics['rec_loss'] + metrics['cla_loss'] + metrics['decorr_loss']
    assert metrics['total'] == pytest.approx(expected)
    assert set(grads) == {'encoder', 'decoder'}


def test_code_norm_has_fixed_scale(make_config, train_split):
    images, _ = train_split
    model = build_fae_model(make_config(), 784)
    assert model.code_norm.named_parameters() == {}
    out = model.code_norm.forward(model.encoder.forward(images[:50]).output).output
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)


@pytest.mark.parametrize('variant', ['sdl', 'xcov', 'decov', 'decov_l1', 'decov_gc', 'none'])
def test_every_variant_trains(make_config, train_split, variant):
    images, labels = train_split
    model, history = fae_train(make_config(losses={'variant': variant}, training={'epochs': 2}),
                               images, labels)
    assert len(history) == 2
    assert all(np.isfinite(row['total']) for row in history)
    assert model.y_scale > 0.0


def test_labels_must_fit_the_class_code(make_config, train_split):
    images, labels = train_split
    with pytest.raises(ConfigError):
        FaeTrainer(make_config(model={'p': 2}), images, labels)
    with pytest.raises(ShapeError):
        FaeTrainer(make_config(), images, labels[:-1])


def test_plain_autoencoder_reconstruction_improves(make_config, train_split):
    images, labels = train_split
    config = make_config(training={'epochs': 5}, losses={'lambda1': 0.0, 'lambda2': 0.0})
    _, history = fae_train(config, images, labels)
    assert history[-1]['rec_loss'] < history[0]['rec_loss']


def test_decorrelation_shrinks_code_offdiagonal(make_config, train_split):
    images, labels = train_split
    config = make_config(training={'epochs': 15}, losses={'lambda1': 0.0, 'lambda2': 2.0})
    _, history = fae_train(config, images, labels)
    assert history[-1]['code_offdiag'] <= 0.5 * history[0]['code_offdiag']


class TestStyleTransfer:

    def test_output_is_an_image(self, make_config, train_split):
        images, labels = train_split
        model, _ = fae_train(make_config(training={'epochs': 1}), images, labels)
        out = style_transfer(model, images[0], 7)
        assert out.shape == (784,)
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize('target', [-1, 10])
    def test_target_out_of_range(self, make_config, target):
        model = build_fae_model(make_config(), 784)
        with pytest.raises(ConfigError):
            style_transfer(model, np.zeros(784), target)

    def test_sheet_layout(self, make_config, train_split):
        images, _ = train_split
        model = build_fae_model(make_config(), 784)
        sheet = style_sheet(model, images[:3])
        assert sheet.shape == (3 * 29 + 1, 10 * 29 + 1)
        np.testing.assert_array_equal(sheet[0], 0.0)
        np.testing.assert_allclose(sheet[1:29, 1:29].ravel(), style_transfer(model, images[0], 0))


def test_disentanglement_eval(make_config, train_split, test_split):
    images, labels = train_split
    model, _ = fae_train(make_config(training={'epochs': 1}), images, labels)
    report = disentanglement_eval(model, train_split, test_split)
    assert 0.0 <= report.acc_y <= 100.0
    assert 0.0 <= report.acc_z <= 100.0
    assert report.rows() == [{'acc_y': report.acc_y, 'acc_z': report.acc_z}]


def test_from_checkpoint(tmp_path, make_config, train_split):
    images, labels = train_split
    config = make_config(training={'epochs': 1})
    path = str(tmp_path / 'fae.ckpt')
    trainer = FaeTrainer(config, images, labels, checkpoint_path=path)
    trainer.run()
    model = fae_from_checkpoint(load_checkpoint(path), config)
    assert model.y_scale == trainer.model.y_scale
    np.testing.assert_array_equal(model.encode(images[:4]), trainer.model.encode(images[:4]))


def test_self_transfer_matches_reconstruction(make_config, train_split):
    images, labels = train_split
    model, _ = fae_train(make_config(), images, labels)
    for image in images[:5]:
        x = image.reshape(1, -1)
        recon = np.clip(model.decode(model.encode(x)), 0.0, 1.0)[0]
        out = style_transfer(model, image, int(model.predict(x)[0]))
        rec_mse = np.mean((recon - image) ** 2)
        assert np.mean((out - recon) ** 2) < 0.1 * rec_mse


def test_noise_style_code_scores_at_chance(make_config, train_split, test_split):
    model = build_fae_model(make_config(model={'q': 6}), 784)
    encode = model.encode

    def noisy_style(images):
        code = encode(images)
        code[:, model.p:] = np.random.default_rng(len(images)).standard_normal((len(images), model.q))
        return code

    model.encode = noisy_style
    report = disentanglement_eval(model, train_split, test_split)
    assert report.acc_z < 25.0


@pytest.mark.slow
def test_decorrelation_disentangles_mnist(real_mnist_config):
    """Median over three seeds: SDL pushes style-code accuracy toward chance without hurting acc_y."""
    def median_report(variant):
        reports = []
        for seed in range(3):
            config = real_mnist_config(losses={'variant': variant}, seed=seed)
            train, test = load_mnist_subset(config), load_mnist_test(config)
            model, _ = fae_train(config, *train)
            reports.append(disentanglement_eval(model, train, test))
        return (float(np.median([r.acc_y for r in reports])),
                float(np.median([r.acc_z for r in reports])))

    plain_y, plain_z = median_report('none')
    sdl_y, sdl_z = median_report('sdl')
    assert sdl_z <= plain_z - 10.0
    assert sdl_y >= plain_y - 1.0
    for competitor in ('xcov', 'decov'):
        assert sdl_z <= median_report(competitor)[1]
