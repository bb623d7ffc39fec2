"""Tests for the optimizer step functions."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentveil.errors import NonFiniteError, ShapeError, ValidationError
from latentveil.inversion.optimizers import (
    MAX_BACKTRACKS,
    AdagradState,
    AdamState,
    LbfgsState,
    OptimizerConfig,
    SgdmState,
    adagrad_step,
    adam_step,
    lbfgs_step,
    sgdm_step,
    two_loop_direction,
)

# ---- config ----------------------------------------------------------------------

@pytest.mark.parametrize("kind,lr", [("sgdm", 2.0), ("adagrad", 0.1), ("adam", 0.05), ("lbfgs", 0.1)])
def test_default_learning_rate_per_kind(kind, lr):
    assert OptimizerConfig(kind=kind).learning_rate == lr


def test_explicit_learning_rate_wins():
    assert OptimizerConfig(kind="adam", learning_rate=0.3).learning_rate == 0.3


@pytest.mark.parametrize("fields", [
    {"kind": "newton"},
    {"learning_rate": -1.0},
    {"max_steps": -1},
    {"kind": "sgdm", "momentum": 1.0},
    {"kind": "adam", "beta2": 1.0},
    {"kind": "adagrad", "epsilon": 0.0},
    {"kind": "lbfgs", "memory": 0},
    {"kind": "lbfgs", "backtrack": 1.0},
])
def test_invalid_configs_are_rejected(fields):
    with pytest.raises(ValidationError):
        OptimizerConfig(**fields)


def test_fields_of_other_kinds_are_not_checked():
    assert OptimizerConfig(kind="lbfgs", momentum=5.0).momentum == 5.0


# ---- first-order steps -----------------------------------------------------------

def test_sgdm_worked_example():
    state = SgdmState.init(np.array([0.0]))
    state = sgdm_step(state, np.array([1.0]), lr=0.1, momentum=0.9)
    assert state.params[0] == pytest.approx(-0.1)
    state = sgdm_step(state, np.array([1.0]), lr=0.1, momentum=0.9)
    assert state.params[0] == pytest.approx(-0.29)


def test_adagrad_first_step_has_length_lr():
    state = adagrad_step(AdagradState.init(np.zeros(3)), np.array([5.0, -0.2, 1e3]),
                         lr=0.1, epsilon=1e-8)
    assert np.allclose(state.params, [-0.1, 0.1, -0.1], atol=1e-8)


def test_adam_first_step_has_length_lr():
    state = adam_step(AdamState.init(np.zeros(2)), np.array([3.0, -0.5]), t=1, lr=0.1)
    assert np.allclose(state.params, [-0.1, 0.1], atol=1e-7)


def test_adam_rejects_step_zero():
    with pytest.raises(ValidationError):
        adam_step(AdamState.init(np.zeros(2)), np.ones(2), t=0, lr=0.1)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.01, max_value=100.0))
def test_adam_is_invariant_to_gradient_scale(scale):
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal(4) for _ in range(5)]
    a = AdamState.init(np.zeros(4))
    b = AdamState.init(np.zeros(4))
    for t, g in enumerate(grads, start=1):
        a = adam_step(a, g, t, lr=0.05, epsilon=0.0)
        b = adam_step(b, scale * g, t, lr=0.05, epsilon=0.0)
    assert np.allclose(a.params, b.params, rtol=1e-9, atol=1e-12)


def test_steps_do_not_mutate_their_input_state():
    state = SgdmState.init(np.zeros(2))
    sgdm_step(state, np.ones(2), lr=0.1, momentum=0.9)
    assert np.array_equal(state.params, np.zeros(2))
    assert np.array_equal(state.velocity, np.zeros(2))


def test_non_finite_gradient_raises():
    with pytest.raises(NonFiniteError):
        sgdm_step(SgdmState.init(np.zeros(2)), np.array([np.nan, 0.0]), lr=0.1, momentum=0.9)


def test_gradient_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        adagrad_step(AdagradState.init(np.zeros(2)), np.zeros(3), lr=0.1, epsilon=1e-8)


# ---- L-BFGS ----------------------------------------------------------------------

def _dense_bfgs_inverse(s_hist, y_hist, n):
    s, y = s_hist[-1], y_hist[-1]
    h = np.eye(n) * (s @ y) / (y @ y)
    for s, y in zip(s_hist, y_hist):
        rho = 1.0 / (y @ s)
        left = np.eye(n) - rho * np.outer(s, y)
        h = left @ h @ left.T + rho * np.outer(s, s)
    return h


def test_two_loop_matches_dense_bfgs_oracle():
    rng = np.random.default_rng(3)
    n = 6
    a = rng.standard_normal((n, n))
    hessian = a @ a.T + n * np.eye(n)
    s_hist = [rng.standard_normal(n) for _ in range(4)]
    y_hist = [hessian @ s for s in s_hist]
    grad = rng.standard_normal(n)
    expected = _dense_bfgs_inverse(s_hist, y_hist, n) @ grad
    assert np.allclose(two_loop_direction(grad, s_hist, y_hist), expected, rtol=1e-10, atol=1e-12)


def test_two_loop_without_history_is_the_gradient():
    g = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(two_loop_direction(g, [], []), g)


def test_lbfgs_minimizes_a_quadratic():
    rng = np.random.default_rng(1)
    n = 5
    a = rng.standard_normal((n, n))
    hessian = a @ a.T + np.eye(n)
    optimum = np.linalg.solve(hessian, rng.standard_normal(n))

    def loss(x):
        d = x - optimum
        return 0.5 * d @ hessian @ d

    def grad(x):
        return hessian @ (x - optimum)

    cfg = OptimizerConfig(kind="lbfgs")
    x0 = np.zeros(n)
    state = LbfgsState.init(x0, loss(x0), grad(x0))
    for _ in range(60):
        if np.linalg.norm(state.grad) < 1e-10:
            break
        state = lbfgs_step(state, loss, grad, cfg)
    assert np.allclose(state.params, optimum, atol=1e-8)


def test_lbfgs_history_is_bounded_by_memory():
    hessian = np.diag([1.0, 2.0, 3.0, 4.0])
    cfg = OptimizerConfig(kind="lbfgs", memory=2)
    state = LbfgsState.init(np.ones(4), 0.5 * np.ones(4) @ hessian @ np.ones(4), hessian @ np.ones(4))
    for _ in range(4):
        state = lbfgs_step(state, lambda x: 0.5 * x @ hessian @ x, lambda x: hessian @ x, cfg)
    assert len(state.s_hist) <= 2
    assert len(state.s_hist) == len(state.y_hist)


def test_lbfgs_falls_back_to_a_normalized_gradient_step():
    cfg = OptimizerConfig(kind="lbfgs", learning_rate=0.1)
    state = LbfgsState.init(np.array([1.0, 1.0]), 0.0, np.array([3.0, 4.0]))
    nxt = lbfgs_step(state, lambda x: float("inf"), lambda x: np.array([3.0, 4.0]), cfg)
    assert nxt.fell_back
    assert np.allclose(nxt.params, [1.0 - 0.06, 1.0 - 0.08])
    assert nxt.evaluations == MAX_BACKTRACKS + 1


def test_lbfgs_skips_pairs_without_positive_curvature():
    g = np.array([1.0, 2.0])
    state = LbfgsState.init(np.zeros(2), 0.0, g)
    nxt = lbfgs_step(state, lambda x: float(g @ x), lambda x: g, OptimizerConfig(kind="lbfgs"))
    assert nxt.skipped_pair
    assert nxt.s_hist == ()
    assert not nxt.fell_back
    assert nxt.loss < 0.0
