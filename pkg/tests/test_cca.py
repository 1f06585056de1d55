import numpy as np
import pytest

from core.cca import (CorrelationReport, LinearCcaModel, SoftCcaTrainer, build_soft_cca_model, correlation_strength,
                      cross_view_eval, exact_decorrelation_step, fold_indices, l2_dist_loss,
                      linear_cca_fit, soft_cca_from_checkpoint, soft_cca_objective, soft_cca_train)
from core.checkpoint import decode_checkpoint, encode_checkpoint
from core.classifier import SoftmaxClassifier
from core.commands import load_views
from core.data import PairedDataset, synth_correlated
from core.decorr import centered_cov, mean_abs_off_diagonal, minibatch_cov
from core.errors import ConfigError, DegenerateInputError, ShapeError


def test_l2_dist_loss():
    z1 = np.array([[1.0, 2.0], [0.0, 0.0]])
    z2 = np.array([[0.0, 2.0], [0.0, 1.0]])
    loss, g1, g2 = l2_dist_loss(z1, z2)
    assert loss == pytest.approx(0.5)
    np.testing.assert_allclose(g1, [[0.5, 0.0], [0.0, -0.5]])
    np.testing.assert_allclose(g2, -g1)
    with pytest.raises(ShapeError):
        l2_dist_loss(z1, z2[:, :1])


class TestCorrelationStrength:

    def test_identical_embeddings_reach_the_bound(self, rng):
        z = rng.standard_normal((50, 4))
        report = correlation_strength(z, z)
        assert report.total == pytest.approx(4.0)
        assert report.upper_bound == 4

    def test_constant_column_counts_as_zero(self, rng):
        z = rng.standard_normal((20, 2))
        z[:, 1] = 3.0
        report = correlation_strength(z, z)
        assert report.per_dim[1] == 0.0
        assert report.total == pytest.approx(1.0)

    def test_sign_flip_reaches_minus_k(self, rng):
        z = rng.standard_normal((50, 4))
        assert correlation_strength(z, -z).total == pytest.approx(-4.0)

    def test_independent_embeddings_score_near_zero(self, rng):
        report = correlation_strength(rng.standard_normal((5000, 10)), rng.standard_normal((5000, 10)))
        assert abs(report.total) < 0.5

    def test_joint_row_permutation_is_invisible(self, rng):
        z1 = rng.standard_normal((40, 3))
        z2 = z1 + rng.standard_normal((40, 3))
        perm = rng.permutation(40)
        np.testing.assert_allclose(correlation_strength(z1[perm], z2[perm]).per_dim,
                                   correlation_strength(z1, z2).per_dim, atol=1e-12)

    def test_rows(self):
        rows = CorrelationReport(per_dim=[0.5, 0.25], total=0.75, upper_bound=2).rows()
        assert rows[-2:] == [{'dim': 'total', 'corr': 0.75}, {'dim': 'upper_bound', 'corr': 2.0}]
        assert rows[0] == {'dim': 0, 'corr': 0.5}


def test_exact_decorrelation_whitens(rng):
    z = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 5))
    out = exact_decorrelation_step(z)
    np.testing.assert_allclose(minibatch_cov(out), np.eye(5), atol=1e-8)


def test_exact_decorrelation_is_idempotent(rng):
    z = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 5))
    once = exact_decorrelation_step(z)
    np.testing.assert_allclose(exact_decorrelation_step(once), once, atol=1e-6)


class TestLinearCca:

    def test_recovers_planted_correlations(self):
        ds, rho = synth_correlated(5000, 10, 8, 3, [0.9, 0.7, 0.5], seed=1)
        model = linear_cca_fit(ds.view1, ds.view2, k=3)
        np.testing.assert_allclose(model.canonical_correlations, rho, atol=0.05)
        assert np.all(np.diff(model.canonical_correlations) <= 0)

    def test_embeddings_are_canonical(self, synth_views):
        train, _, _ = synth_views
        model = linear_cca_fit(train.view1, train.view2, k=3)
        e1, e2 = model.embed1(train.view1), model.embed2(train.view2)
        np.testing.assert_allclose(centered_cov(e1), np.eye(3), atol=1e-3)
        np.testing.assert_allclose(centered_cov(e2), np.eye(3), atol=1e-3)
        report = correlation_strength(e1, e2)
        np.testing.assert_allclose(report.per_dim, model.canonical_correlations, atol=1e-3)

    def test_heldout_strength_near_planted_sum(self, synth_views):
        train, heldout, rho = synth_views
        model = linear_cca_fit(train.view1, train.view2, k=3)
        total = correlation_strength(model.embed1(heldout.view1), model.embed2(heldout.view2)).total
        assert total == pytest.approx(rho.sum(), abs=0.15)

    def test_independent_views_show_no_correlation(self, rng):
        x1, x2 = rng.standard_normal((10000, 5)), rng.standard_normal((10000, 5))
        model = linear_cca_fit(x1, x2, k=5)
        assert np.all(model.canonical_correlations < 0.05)

    def test_k_out_of_range(self, synth_views):
        train, _, _ = synth_views
        with pytest.raises(ConfigError):
            linear_cca_fit(train.view1, train.view2, k=6)

    def test_checkpoint_round_trip(self, synth_views, make_config):
        train, heldout, _ = synth_views
        model = linear_cca_fit(train.view1, train.view2, k=2)
        back = LinearCcaModel.from_checkpoint(decode_checkpoint(encode_checkpoint(model.to_checkpoint(make_config()))))
        assert back.dims == (6, 5) and back.embed_dim == 2
        np.testing.assert_array_equal(back.embed1(heldout.view1), model.embed1(heldout.view1))


class TestSoftCca:

    def test_xcov_rejected(self, make_config):
        with pytest.raises(ConfigError):
            build_soft_cca_model(make_config(losses={'variant': 'xcov'}), 6, 5)

    def test_branches_are_seeded_apart(self, make_config):
        model = build_soft_cca_model(make_config(), 6, 6)
        assert not np.array_equal(model.branch1.layers[0].weight, model.branch2.layers[0].weight)

    def test_objective_does_not_touch_state(self, make_config, rng):
        model = build_soft_cca_model(make_config(), 6, 5)
        x1, x2 = rng.standard_normal((10, 6)), rng.standard_normal((10, 5))
        metrics, grads, (s1, s2) = soft_cca_objective(model, x1, x2)
        assert model.sdl1.step == 0 and s1.step == 1 and s2.step == 1
        assert metrics['total'] == pytest.approx(metrics['dist_loss'] + metrics['sdl1'] + metrics['sdl2'])
        assert set(grads) == {'branch1', 'branch2'}

    def test_embeddings_have_no_learnable_scale(self, make_config):
        model = build_soft_cca_model(make_config(), 6, 5)
        for branch in (model.branch1, model.branch2):
            assert not any(name.endswith(('gamma', 'beta')) for name in branch.named_parameters())

    def test_identical_views_without_decorrelation_stay_aligned(self, make_config, synth_views):
        train, _, _ = synth_views
        same = PairedDataset(train.view1, train.view1.copy())
        config = make_config(losses={'lam': 0.0})
        model = build_soft_cca_model(config, 6, 6)
        model.branch2.load_arrays(model.branch1.state_arrays())
        _, history = soft_cca_train(config, same, model=model)
        assert all(row['dist_loss'] == 0.0 for row in history)
        assert all(row['total'] == row['dist_loss'] for row in history)
        np.testing.assert_array_equal(model.embed1(same.view1), model.embed2(same.view2))

    def test_unit_variance_embeddings_after_training(self, make_config, synth_views):
        train, _, _ = synth_views
        model, _ = soft_cca_train(make_config(model={'linear': True}, training={'epochs': 5}), train)
        for z in (model.embed1(train.view1), model.embed2(train.view2)):
            np.testing.assert_allclose(z.std(axis=0), 1.0, atol=0.2)

    def test_training_raises_heldout_correlation(self, make_config, synth_views):
        train, heldout, _ = synth_views
        config = make_config(model={'linear': True}, training={'epochs': 5})
        untrained = build_soft_cca_model(config, *train.dims)
        before = correlation_strength(untrained.embed1(heldout.view1), untrained.embed2(heldout.view2)).total
        model, history = soft_cca_train(config, train, heldout=heldout)
        assert history[-1]['corr_strength_heldout'] > before
        assert history[-1]['dist_loss'] < history[0]['dist_loss']

    def test_from_checkpoint(self, make_config, synth_views):
        train, heldout, _ = synth_views
        trainer = SoftCcaTrainer(make_config(training={'epochs': 1}), train)
        trainer.run()
        model = soft_cca_from_checkpoint(decode_checkpoint(encode_checkpoint(trainer.to_checkpoint())),
                                         make_config())
        np.testing.assert_array_equal(model.embed1(heldout.view1), trainer.model.embed1(heldout.view1))
        assert model.sdl2.step == trainer.model.sdl2.step


class TestCrossView:

    def _separable(self, rng, n=60):
        labels = np.arange(n) % 2
        feature = (2.0 * labels - 1.0)[:, None] + 0.01 * rng.standard_normal((n, 1))
        return PairedDataset(feature, feature.copy(), labels)

    def test_perfectly_separable(self, rng):
        data = self._separable(rng)
        report = cross_view_eval(lambda x: x, lambda x: x, data, folds=5)
        assert report.accuracies == [100.0] * 5
        assert report.mean == 100.0 and report.std == 0.0
        assert [r['fold'] for r in report.rows()] == [0, 1, 2, 3, 4, 'mean', 'std']

    def test_direction(self, rng):
        data = self._separable(rng)
        flipped = PairedDataset(data.view1, -data.view2, data.labels)
        report = cross_view_eval(lambda x: x, lambda x: x, flipped, folds=3, direction='r2l',
                                 classifier=lambda: SoftmaxClassifier(epochs=5))
        assert report.direction == 'r2l'
        assert report.mean == 0.0
        with pytest.raises(ConfigError):
            cross_view_eval(lambda x: x, lambda x: x, data, direction='up')

    def test_needs_labels(self, rng):
        data = PairedDataset(np.zeros((10, 1)), np.zeros((10, 1)))
        with pytest.raises(DegenerateInputError):
            cross_view_eval(lambda x: x, lambda x: x, data)

    def test_folds_partition(self):
        parts = fold_indices(23, 5, seed=0)
        assert sorted(np.concatenate(parts).tolist()) == list(range(23))
        assert {len(p) for p in parts} == {4, 5}
        with pytest.raises(ConfigError):
            fold_indices(3, 5, seed=0)


@pytest.mark.slow
def test_linear_soft_cca_matches_the_oracle(make_config):
    """Linear branches trained with lambda = 1 land within 5% of closed-form CCA and stay decorrelated."""
    ds, rho = synth_correlated(20000, 20, 20, 3, [0.9, 0.7, 0.5], seed=0)
    train, heldout = ds.split(0.2, seed=0)
    config = make_config(model={'linear': True}, training={'epochs': 20, 'batch_size': 100})
    model, _ = soft_cca_train(config, train, heldout=heldout)
    oracle = linear_cca_fit(train.view1, train.view2, k=3)

    soft = correlation_strength(model.embed1(heldout.view1), model.embed2(heldout.view2))
    exact = correlation_strength(oracle.embed1(heldout.view1), oracle.embed2(heldout.view2))
    assert soft.total == pytest.approx(exact.total, rel=0.05)
    np.testing.assert_allclose(sorted(soft.per_dim, reverse=True), rho, atol=0.05)
    np.testing.assert_allclose(oracle.canonical_correlations, rho, atol=0.05)
    for z in (model.embed1(train.view1), model.embed2(train.view2)):
        assert mean_abs_off_diagonal(np.corrcoef(z, rowvar=False)) < 0.05
        assert np.all(z.std(axis=0) > 0.5)


@pytest.mark.slow
def test_soft_cca_beats_linear_cca_on_mnist(real_mnist_config):
    """Desk-scale MNIST halves, k = 50: stronger held-out correlation and better cross-view recognition."""
    config = real_mnist_config()
    train, heldout = load_views(config)
    model, _ = soft_cca_train(config, train)
    oracle = linear_cca_fit(train.view1, train.view2, config.model.embed_dim, config.losses.ridge)

    soft = correlation_strength(model.embed1(heldout.view1), model.embed2(heldout.view2))
    exact = correlation_strength(oracle.embed1(heldout.view1), oracle.embed2(heldout.view2))
    assert soft.total >= 1.3 * exact.total
    for direction in ('l2r', 'r2l'):
        soft_acc = cross_view_eval(model.embed1, model.embed2, heldout, direction=direction)
        exact_acc = cross_view_eval(oracle.embed1, oracle.embed2, heldout, direction=direction)
        assert soft_acc.mean > exact_acc.mean
