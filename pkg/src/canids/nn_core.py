"""Minimal numeric kernel: dense layers, ELU, an LSTM cell, Adam, and a
finite-difference gradient checker.

Everything is double precision and written against plain numpy arrays so
backward passes can be verified coordinate-by-coordinate against central
finite differences. Gate layout of the LSTM weight matrix is
``[input | forget | output | candidate]`` rows over a ``[x ; h]`` input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError
from .rng import Xoshiro256StarStar


class ParamTensor:
    """Named parameter array with a matching gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assert_finite(self) -> None:
        if not np.isfinite(self.value).all():
            raise NumericError(f"non-finite values in parameter {self.name!r}")

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape})"


def xavier_uniform(rng: Xoshiro256StarStar, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    out = np.empty(n)
    for k in range(n):
        out[k] = (2.0 * rng.uniform() - 1.0) * limit
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# activations


def elu(x):
    """ELU with alpha=1: x for x > 0, expm1(x) otherwise."""
    out = np.array(x, dtype=np.float64, copy=True)
    neg = out < 0
    out[neg] = np.expm1(out[neg])
    return out


def elu_deriv(x):
    """Derivative of ELU at input x: 1 for x > 0, exp(x) otherwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def elu_deriv_from_output(y):
    """Derivative of ELU expressed through its output: 1 if y > 0 else y + 1."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 0, 1.0, y + 1.0)


# ---------------------------------------------------------------------------
# dense layer


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = W x + b for 1-D x, or row-wise x W^T + b for a 2-D batch."""
    if x.ndim == 1:
        if W.shape[1] != x.shape[0]:
            raise ConfigError(f"dense shape mismatch: W {W.shape} vs x {x.shape}")
        return W @ x + b
    if W.shape[1] != x.shape[1]:
        raise ConfigError(f"dense shape mismatch: W {W.shape} vs x {x.shape}")
    return x @ W.T + b


def dense_backward(W: np.ndarray, x: np.ndarray, dy: np.ndarray):
    """Gradients (dW, db, dx) of y = Wx + b given upstream dy."""
    if x.ndim == 1:
        return np.outer(dy, x), dy.copy(), W.T @ dy
    return dy.T @ x, dy.sum(axis=0), dy @ W


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmCellParams:
    """Fused gate weights: W is (4H, D+H), b is (4H,)."""

    W: ParamTensor
    b: ParamTensor
    n_in: int
    n_hidden: int

    def tensors(self) -> list[ParamTensor]:
        return [self.W, self.b]


@dataclass
class LstmCellState:
    h: np.ndarray
    c: np.ndarray

    def copy(self) -> "LstmCellState":
        return LstmCellState(self.h.copy(), self.c.copy())


@dataclass
class LstmStepCache:
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tc: np.ndarray


def init_lstm(rng: Xoshiro256StarStar, name: str, n_in: int, n_hidden: int, forget_bias: float = 1.0) -> LstmCellParams:
    """Xavier-uniform gate weights, zero biases except forget bias."""
    W = xavier_uniform(rng, (4 * n_hidden, n_in + n_hidden), n_in + n_hidden, n_hidden)
    b = np.zeros(4 * n_hidden)
    b[n_hidden : 2 * n_hidden] = forget_bias
    return LstmCellParams(ParamTensor(f"{name}.W", W), ParamTensor(f"{name}.b", b), n_in, n_hidden)


def zero_lstm_state(params: LstmCellParams) -> LstmCellState:
    return LstmCellState(np.zeros(params.n_hidden), np.zeros(params.n_hidden))


def lstm_step(params: LstmCellParams, state: LstmCellState, x: np.ndarray):
    """One cell step. Returns (new_state, h_out, cache)."""
    if x.shape != (params.n_in,):
        raise ConfigError(f"lstm input shape {x.shape}, expected ({params.n_in},)")
    if not (np.isfinite(state.h).all() and np.isfinite(state.c).all()):
        raise NumericError("non-finite LSTM state")
    new_state, h, cache = _lstm_step_fast(params.W.value, params.b.value, state.h, state.c, x, params.n_hidden)
    return new_state, h, cache


def _lstm_step_fast(W, b, h_prev, c_prev, x, H):
    """Unchecked cell step used by hot loops."""
    D = len(x)
    xh = np.empty(D + H)
    xh[:D] = x
    xh[D:] = h_prev
    pre = W @ xh + b
    sig = expit(pre[: 3 * H])
    i = sig[:H]
    f = sig[H : 2 * H]
    o = sig[2 * H : 3 * H]
    g = np.tanh(pre[3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return LstmCellState(h, c), h, LstmStepCache(xh, c_prev, i, f, o, g, tc)


def lstm_step_backward(params: LstmCellParams, cache: LstmStepCache, dh: np.ndarray, dc: np.ndarray):
    """Backward through one cell step.

    Accumulates into params' grads and returns (dh_prev, dc_prev, dx).
    """
    i, f, o, g, tc = cache.i, cache.f, cache.o, cache.g, cache.tc
    H = params.n_hidden
    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    dg = dc_total * i
    df = dc_total * cache.c_prev
    dc_prev = dc_total * f
    da = np.empty(4 * H)
    da[:H] = di * i * (1.0 - i)
    da[H : 2 * H] = df * f * (1.0 - f)
    da[2 * H : 3 * H] = do * o * (1.0 - o)
    da[3 * H :] = dg * (1.0 - g * g)
    params.W.grad += np.outer(da, cache.xh)
    params.b.grad += da
    dxh = params.W.value.T @ da
    return dxh[params.n_in :], dc_prev, dxh[: params.n_in]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-tensor first/second moments plus the shared step counter."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: list[ParamTensor]) -> None:
    """One bias-corrected Adam step over all tensors; grads are zeroed after."""
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    max_rel_error: float
    tolerance: float
    checked_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        lines = [
            f"{name}: max rel err {err:.3e}" for name, err in self.per_tensor.items()
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"overall max rel err {self.max_rel_error:.3e} "
            f"(tolerance {self.tolerance:.1e}, {self.checked_coords} coords): {verdict}"
        )
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: list[ParamTensor],
    tolerance: float = 1e-4,
    samples_per_tensor: int = 200,
    fd_step: float = 1e-6,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must recompute the loss from the current parameter values
    and be deterministic; keep its magnitude around O(1) so float64
    cancellation at the 1e-6 step stays far below the tolerance. Analytic
    gradients are read from each tensor's ``grad`` buffer, which the caller
    populates before the check. Up to ``samples_per_tensor`` coordinates
    per tensor are probed (all of them for small tensors). Relative error
    uses max(|analytic|, |fd|, 1e-5) as the scale, so zero gradients
    compare cleanly while still bounding their absolute error.
    """
    rng = Xoshiro256StarStar(seed)
    per_tensor: dict[str, float] = {}
    worst = 0.0
    total = 0
    for p in params:
        flat_value = p.value.reshape(-1)
        flat_grad = p.grad.reshape(-1)
        n = flat_value.size
        if n <= samples_per_tensor:
            coords = list(range(n))
        else:
            coords = sorted({rng.integer(n) for _ in range(2 * samples_per_tensor)})[:samples_per_tensor]
        worst_here = 0.0
        for k in coords:
            keep = flat_value[k]
            flat_value[k] = keep + fd_step
            up = loss_fn()
            flat_value[k] = keep - fd_step
            down = loss_fn()
            flat_value[k] = keep
            fd = (up - down) / (2.0 * fd_step)
            an = flat_grad[k]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-5)
            worst_here = max(worst_here, rel)
        per_tensor[p.name] = worst_here
        worst = max(worst, worst_here)
        total += len(coords)
    return GradCheckReport(per_tensor, worst, tolerance, total)
