import math

import numpy as np
import pytest

from canids.errors import NumericError
from canids.nn_core import (
    AdamState,
    LstmCellState,
    ParamTensor,
    adam_update,
    dense_backward,
    dense_forward,
    elu,
    elu_deriv,
    elu_deriv_from_output,
    grad_check,
    init_lstm,
    lstm_step,
    lstm_step_backward,
    xavier_uniform,
    zero_lstm_state,
)
from canids.rng import Xoshiro256StarStar


# ---------------------------------------------------------------------------
# elu


def test_elu_values():
    assert elu(np.array([0.0]))[0] == 0.0
    assert elu(np.array([2.0]))[0] == 2.0
    assert abs(elu(np.array([-1.0]))[0] - (math.exp(-1) - 1.0)) < 1e-12


def test_elu_derivative_matches_numeric():
    xs = np.array([-2.0, -0.5, -1e-9, 1e-9, 0.7, 3.0])
    h = 1e-7
    numeric = (elu(xs + h) - elu(xs - h)) / (2 * h)
    assert np.allclose(elu_deriv(xs), numeric, atol=1e-6)
    assert np.allclose(elu_deriv_from_output(elu(xs)), elu_deriv(xs), atol=1e-12)


# ---------------------------------------------------------------------------
# dense


def test_dense_identity_and_bias():
    W = np.eye(3)
    b = np.zeros(3)
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(dense_forward(W, b, x), x)
    b = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(dense_forward(W, b, np.zeros(3)), b)


def test_dense_gradient_check():
    rng = Xoshiro256StarStar(1)
    W = ParamTensor("W", xavier_uniform(rng, (4, 6), 6, 4))
    b = ParamTensor("b", rng.normals(4))
    x = rng.normals(6)

    def loss():
        y = dense_forward(W.value, b.value, x)
        return float(y @ y)

    y = dense_forward(W.value, b.value, x)
    dW, db, _ = dense_backward(W.value, x, 2.0 * y)
    W.grad[...] = dW
    b.grad[...] = db
    report = grad_check(loss, [W, b], tolerance=1e-5, samples_per_tensor=200)
    assert report.passed, report.summary()


def test_dense_batched_matches_loop():
    rng = Xoshiro256StarStar(2)
    W = xavier_uniform(rng, (3, 5), 5, 3)
    b = rng.normals(3)
    X = np.vstack([rng.normals(5) for _ in range(7)])
    batched = dense_forward(W, b, X)
    rows = np.vstack([dense_forward(W, b, x) for x in X])
    assert np.allclose(batched, rows, atol=1e-14)
    dY = np.vstack([rng.normals(3) for _ in range(7)])
    dW, db, dX = dense_backward(W, X, dY)
    dW2 = sum(np.outer(dY[k], X[k]) for k in range(7))
    assert np.allclose(dW, dW2, atol=1e-12)
    assert np.allclose(db, dY.sum(axis=0), atol=1e-12)
    assert np.allclose(dX, dY @ W, atol=1e-12)


# ---------------------------------------------------------------------------
# lstm


def test_lstm_zero_everything():
    cell = init_lstm(Xoshiro256StarStar(0), "z", 3, 4, forget_bias=0.0)
    cell.W.value[...] = 0.0
    cell.b.value[...] = 0.0
    state, h, _ = lstm_step(cell, zero_lstm_state(cell), np.zeros(3))
    assert np.array_equal(h, np.zeros(4))
    assert np.array_equal(state.c, np.zeros(4))


def test_lstm_forget_gate_saturation():
    cell = init_lstm(Xoshiro256StarStar(3), "s", 2, 3)
    cell.b.value[3:6] = 50.0  # forget block saturates to 1
    state = LstmCellState(np.array([0.1, -0.2, 0.3]), np.array([0.5, -1.0, 2.0]))
    x = np.array([0.4, -0.6])
    new_state, _, cache = lstm_step(cell, state, x)
    expect_c = state.c + cache.i * cache.g
    assert np.allclose(new_state.c, expect_c, atol=1e-12)


def test_lstm_gradient_check():
    rng = Xoshiro256StarStar(4)
    cell = init_lstm(rng, "g", 3, 5)
    h0 = rng.normals(5) * 0.5
    c0 = rng.normals(5) * 0.5
    x = rng.normals(3)

    def loss():
        state, h, _ = lstm_step(cell, LstmCellState(h0.copy(), c0.copy()), x)
        return float(h @ h) + float(state.c @ state.c)

    state, h, cache = lstm_step(cell, LstmCellState(h0.copy(), c0.copy()), x)
    cell.W.zero_grad()
    cell.b.zero_grad()
    lstm_step_backward(cell, cache, 2.0 * h, 2.0 * state.c)
    report = grad_check(loss, [cell.W, cell.b], tolerance=1e-5, samples_per_tensor=200)
    assert report.passed, report.summary()


def test_lstm_rejects_nonfinite_state():
    cell = init_lstm(Xoshiro256StarStar(5), "n", 2, 2)
    bad = LstmCellState(np.array([np.inf, 0.0]), np.zeros(2))
    with pytest.raises(NumericError):
        lstm_step(cell, bad, np.zeros(2))


# ---------------------------------------------------------------------------
# adam


def test_adam_first_step_magnitude():
    p = ParamTensor("p", np.array([1.0, -2.0, 3.0]))
    p.grad[...] = 1.0
    before = p.value.copy()
    adam = AdamState(lr=0.01)
    adam_update(adam, [p])
    delta = p.value - before
    assert np.all(np.abs(np.abs(delta) - 0.01) < 1e-6)
    assert np.all(delta < 0)
    assert np.array_equal(p.grad, np.zeros(3))


def test_adam_zero_grad_no_change():
    p = ParamTensor("p", np.array([1.0]))
    adam = AdamState(lr=0.01)
    adam_update(adam, [p])
    assert adam.t == 1
    assert p.value[0] == 1.0


def test_adam_constant_gradient_two_steps():
    p = ParamTensor("p", np.array([0.0]))
    adam = AdamState(lr=0.01)
    p.grad[...] = 2.5
    adam_update(adam, [p])
    first = p.value[0]
    p.grad[...] = 2.5
    adam_update(adam, [p])
    second = p.value[0] - first
    assert abs(abs(second) - 0.01) < 1e-6


# ---------------------------------------------------------------------------
# gradient checker


def test_grad_check_exact_for_linear():
    rng = Xoshiro256StarStar(6)
    w = ParamTensor("w", rng.normals(10))
    c = rng.normals(10)

    def loss():
        return float(w.value @ c)

    w.grad[...] = c
    report = grad_check(loss, [w], tolerance=1e-8, samples_per_tensor=200)
    assert report.passed, report.summary()


def test_grad_check_detects_sign_flip():
    rng = Xoshiro256StarStar(7)
    w = ParamTensor("w", rng.normals(6))
    c = rng.normals(6)

    def loss():
        return float(w.value @ c)

    w.grad[...] = c
    w.grad[2] = -w.grad[2]  # corrupted backward
    report = grad_check(loss, [w], tolerance=1e-4, samples_per_tensor=200)
    assert not report.passed
