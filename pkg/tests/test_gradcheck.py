import numpy as np
import pytest

from core.decorr import Variant
from core.gradcheck import (SOFT_CCA_VARIANTS, TOLERANCE, GradcheckResult, check_gradients,
                            numeric_gradient, relative_error, run_suite, summarize)


def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([3.0])) == pytest.approx(0.5)
    # both near zero: the floor keeps the ratio small
    assert relative_error(np.array([1e-12]), np.array([-1e-12])) < TOLERANCE
    assert relative_error(np.zeros(0), np.zeros(0)) == 0.0


def test_numeric_gradient_restores_input(rng):
    x = rng.standard_normal((3, 2))
    before = x.copy()
    grad = numeric_gradient(lambda: float(np.sum(x ** 3)), x)
    np.testing.assert_allclose(grad, 3.0 * before ** 2, rtol=1e-7)
    np.testing.assert_array_equal(x, before)


def test_wrong_gradient_is_caught(rng):
    x = rng.standard_normal(4)
    result = check_gradients('square', lambda: float(np.sum(x ** 2)), {'x': x}, {'x': x})
    assert not result.passed


def test_suite_passes():
    results = run_suite(seed=0, batch_sizes=(2, 8))
    failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert failed == []
    names = {r.name for r in results}
    assert {'sdl m=2', 'xcov m=8', 'batchnorm m=2', 'mlp m=8', 'soft_cca[sdl] m=2', 'soft_cca[sdl] m=8',
            'soft_cca[decov_gc] m=2', 'soft_cca[none] m=8', 'fae[xcov] m=2', 'fae[decov] m=8'} <= names
    assert summarize(results) < TOLERANCE


def test_summarize_reports_the_worst():
    assert summarize([GradcheckResult('a', 1e-9), GradcheckResult('b', 0.3)]) == 0.3


def test_composed_cases_run_at_every_batch_size():
    results = run_suite(seed=0, batch_sizes=(2,))
    composed = [r for r in results if r.name.startswith(('soft_cca', 'fae'))]
    assert composed and all(r.name.endswith(' m=2') for r in composed)
    assert all(r.passed for r in composed)


def test_soft_cca_variants_include_the_baselines():
    assert {Variant.SDL, Variant.DECOV, Variant.DECOV_L1, Variant.DECOV_GC, Variant.NONE} == set(SOFT_CCA_VARIANTS)
