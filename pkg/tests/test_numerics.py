import math

import numpy as np
import pytest

from rnnt_roles.numerics import (
    AdamConfig,
    AdamState,
    NumericalError,
    Parameter,
    adam_step,
    log_softmax,
    logsumexp,
)


def test_logsumexp_single_element_identity():
    assert logsumexp([3.7]) == 3.7


def test_logsumexp_two_zeros():
    assert abs(logsumexp([0.0, 0.0]) - math.log(2.0)) < 1e-15


def test_logsumexp_matches_naive_sum():
    rng = np.random.default_rng(0)
    v = rng.normal(size=16)
    naive = math.log(np.sum(np.exp(v)))
    assert abs(logsumexp(v) - naive) <= 1e-12 * abs(naive)


def test_logsumexp_empty_errors():
    with pytest.raises(ValueError):
        logsumexp([])


def test_logsumexp_monotone_and_dominates_max():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = rng.normal(size=6)
        base = logsumexp(v)
        assert base >= np.max(v)
        bumped = v.copy()
        i = rng.integers(0, 6)
        bumped[i] += 0.5
        assert logsumexp(bumped) > base


def test_logsumexp_extreme_magnitudes():
    assert abs(logsumexp([1000.0, 1000.0]) - (1000.0 + math.log(2.0))) < 1e-9
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    assert abs(logsumexp([-np.inf, 0.0])) < 1e-15


def test_log_softmax_pair_of_zeros():
    out = log_softmax(np.array([0.0, 0.0]))
    assert np.allclose(out, [-math.log(2.0)] * 2, atol=1e-15)


def test_log_softmax_constant_vector():
    for c in (-4.2, 0.0, 17.0):
        out = log_softmax(np.full(3, c))
        assert np.allclose(out, -math.log(3.0), atol=1e-12)


def test_log_softmax_normalizes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=8) * 3
    assert abs(np.sum(np.exp(log_softmax(x))) - 1.0) <= 1e-12


def test_log_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))
    for c in (-100.0, 0.3, 250.0):
        assert np.allclose(log_softmax(x + c, axis=1), log_softmax(x, axis=1), atol=1e-12)


def _scalar_param(value, grad, frozen=False):
    return Parameter("p", np.array([value]), np.array([grad]), frozen=frozen)


def test_adam_zero_gradient_no_decay_keeps_value():
    p = _scalar_param(1.5, 0.0)
    adam_step([p], AdamState(), 1, AdamConfig(learning_rate=0.1, weight_decay=0.0, warmup_steps=0))
    assert p.value[0] == 1.5


def test_adam_frozen_parameter_untouched():
    p = _scalar_param(1.5, 2.0, frozen=True)
    adam_step([p], AdamState(), 1, AdamConfig(learning_rate=0.1, weight_decay=0.0, warmup_steps=0))
    assert p.value[0] == 1.5
    assert p.grad[0] == 2.0  # untouched, not even zeroed


def test_adam_first_step_is_bias_corrected():
    # with m_hat = v_hat = g on step 1, the update is lr * g / (|g| + eps)
    p = _scalar_param(1.0, 1.0)
    cfg = AdamConfig(learning_rate=0.1, weight_decay=0.0, warmup_steps=0)
    adam_step([p], AdamState(), 1, cfg)
    assert abs(p.value[0] - (1.0 - 0.1 / (1.0 + cfg.epsilon))) < 1e-12
    assert p.grad[0] == 0.0  # zeroed afterwards


def test_adam_warmup_scales_learning_rate():
    p1 = _scalar_param(1.0, 1.0)
    p2 = _scalar_param(1.0, 1.0)
    adam_step([p1], AdamState(), 1, AdamConfig(learning_rate=0.1, weight_decay=0.0, warmup_steps=0))
    adam_step([p2], AdamState(), 1, AdamConfig(learning_rate=0.1, weight_decay=0.0, warmup_steps=10))
    full = 1.0 - p1.value[0]
    scaled = 1.0 - p2.value[0]
    assert abs(scaled - full / 10.0) < 1e-12


def test_adam_decoupled_weight_decay_applies_without_gradient():
    p = _scalar_param(2.0, 0.0)
    adam_step([p], AdamState(), 1, AdamConfig(learning_rate=0.1, weight_decay=0.5, warmup_steps=0))
    assert abs(p.value[0] - (2.0 - 0.1 * 0.5 * 2.0)) < 1e-12


def test_adam_non_finite_gradient_names_parameter():
    p = Parameter("encoder.W", np.array([1.0]), np.array([np.nan]))
    with pytest.raises(NumericalError, match="encoder.W"):
        adam_step([p], AdamState(), 1, AdamConfig())


def test_adam_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(7)
        p = Parameter("w", rng.normal(size=4))
        state = AdamState()
        cfg = AdamConfig(learning_rate=0.01, warmup_steps=3, weight_decay=1e-4)
        for step in range(1, 20):
            p.grad[:] = np.sin(p.value * step)
            adam_step([p], state, step, cfg)
        return p.value.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(beta2=0.0)
    with pytest.raises(ValueError):
        AdamConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        AdamConfig(warmup_steps=-1)


def test_parameter_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        Parameter("w", np.zeros(3), np.zeros(4))
