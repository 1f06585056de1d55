import numpy as np
import pytest

from core.classifier import (MlpClassifierTrainer, SoftmaxClassifier, accuracy, build_mlp_classifier,
                             eval_classifier, mlp_classifier_eval, mlp_classifier_train)
from core.data import load_mnist_split
from core.errors import ConfigError, DegenerateInputError, DivergenceError, ShapeError


def _blobs(rng, n_per=50):
    centers = np.array([[0.0, 5.0], [5.0, 0.0], [-5.0, -5.0]])
    x = np.vstack([c + rng.standard_normal((n_per, 2)) for c in centers])
    labels = np.repeat(np.arange(3), n_per)
    return x, labels


def test_accuracy():
    assert accuracy(np.array([1, 2, 3, 4]), np.array([1, 2, 0, 0])) == 50.0
    assert accuracy(np.array([], dtype=int), np.array([], dtype=int)) == 0.0
    with pytest.raises(ShapeError):
        accuracy(np.zeros(3), np.zeros(4))


class TestSoftmaxClassifier:

    def test_separable_blobs(self, rng):
        x, labels = _blobs(rng)
        clf = SoftmaxClassifier().fit(x, labels)
        assert clf.score(x, labels) > 95.0
        assert clf.decision_function(x).shape == (150, 3)

    def test_fit_is_deterministic(self, rng):
        x, labels = _blobs(rng)
        a = SoftmaxClassifier(epochs=3).fit(x, labels).decision_function(x)
        b = SoftmaxClassifier(epochs=3).fit(x, labels).decision_function(x)
        np.testing.assert_array_equal(a, b)

    def test_single_class(self, rng):
        with pytest.raises(DegenerateInputError):
            SoftmaxClassifier().fit(rng.standard_normal((10, 2)), np.zeros(10, dtype=int))

    def test_predict_before_fit(self):
        with pytest.raises(ConfigError):
            SoftmaxClassifier().predict(np.zeros((2, 2)))

    def test_constant_feature_is_harmless(self, rng):
        x, labels = _blobs(rng)
        x = np.hstack([x, np.ones((x.shape[0], 1))])
        assert np.all(np.isfinite(SoftmaxClassifier(epochs=2).fit(x, labels).decision_function(x)))

    def test_eval_classifier_uses_eval_settings(self, make_config, rng):
        config = make_config(eval={'classifier_epochs': 2, 'classifier_lr': 0.05})
        clf = eval_classifier(config, n_classes=4)
        assert (clf.epochs, clf.lr, clf.n_classes, clf.model) == (2, 0.05, 4, None)
        x, labels = _blobs(rng)
        assert clf.fit(x, labels).decision_function(x).shape == (150, 4)


class TestMlpClassifier:

    def test_xcov_rejected(self, make_config):
        with pytest.raises(ConfigError):
            build_mlp_classifier(make_config(losses={'variant': 'xcov'}), 784)

    def test_needs_a_hidden_layer(self, make_config):
        with pytest.raises(ConfigError):
            build_mlp_classifier(make_config(model={'mlp_hidden': ()}), 784)

    @pytest.mark.parametrize('variant', ['sdl', 'decov', 'none'])
    def test_trains(self, make_config, mnist_dir, variant):
        images, labels = load_mnist_split(mnist_dir, 'train')
        test = load_mnist_split(mnist_dir, 'test')
        config = make_config(losses={'variant': variant})
        model, history = mlp_classifier_train(config, images, labels, test=test)
        assert len(history) == 3
        assert all(0.0 <= row['test_acc'] <= 100.0 for row in history)
        assert history[-1]['test_acc'] == mlp_classifier_eval(model, *test)
        assert model.predict(test[0]).shape == (100,)
        if variant == 'none':
            assert all(row['decorr_loss'] == 0.0 for row in history)

    def test_without_test_split(self, make_config, mnist_dir):
        images, labels = load_mnist_split(mnist_dir, 'train')
        trainer = MlpClassifierTrainer(make_config(training={'epochs': 1}), images, labels)
        history = trainer.run()
        assert history[0]['test_acc'] is None
        assert trainer.step == 200 // 20

    def test_diverged_step_leaves_accumulator_untouched(self, make_config, mnist_dir):
        images, labels = load_mnist_split(mnist_dir, 'train')
        images = images.copy()
        images[:] = np.nan
        trainer = MlpClassifierTrainer(make_config(training={'epochs': 1}), images, labels)
        with pytest.raises(DivergenceError):
            trainer.run()
        state = trainer.model.decorrelator.state
        assert state.step == 0
        assert np.all(np.isfinite(state.c_accu))

    def test_trunk_output_has_fixed_scale(self, make_config):
        model = build_mlp_classifier(make_config(), 784)
        assert not any(name.endswith(('gamma', 'beta')) for name in model.trunk.named_parameters())
