"""Recurrent autoencoder over multi-ID CAN streams.

One LSTM per message ID consumes that ID's signal vector whenever a message
arrives; its hidden state occupies a fixed segment of a joint latent vector
that summarizes the whole bus. A three-layer ELU head reads the full latent
vector and outputs a reconstruction of every signal on the bus. The loss at
a step compares only the current ID's slice of that output with the values
that actually arrived.

Gradient flow is selective: a step's loss updates the current ID's LSTM,
the shared head, and (through the output layer) only the rows that produce
the current ID's slice. Latent segments belonging to other IDs are treated
as constants at that step, so their LSTMs receive exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import BusConfig, CanMessage
from .errors import ConfigError, DataError
from .nn_core import (
    LstmCellParams,
    ParamTensor,
    _lstm_step_fast,
    elu,
    elu_deriv_from_output,
    init_lstm,
    lstm_step_backward,
    xavier_uniform,
)
from .rng import Xoshiro256StarStar, derive_seed


@dataclass(frozen=True)
class CanetConfig:
    bus: BusConfig
    h_scale: int

    def __post_init__(self):
        if self.h_scale < 1:
            raise ConfigError("h_scale must be >= 1")
        n = self.bus.total_signals
        if not (self.mid_size >= n - 1 >= 1):
            raise ConfigError(
                f"head sizes invalid for N={n}, h_scale={self.h_scale}: "
                f"need floor(N*h_scale/2) >= N-1 >= 1"
            )

    @property
    def latent_size(self) -> int:
        return self.bus.total_signals * self.h_scale

    @property
    def mid_size(self) -> int:
        return self.latent_size // 2


class CanetParams:
    """All learnable weights; ``version`` increments on every optimizer step."""

    def __init__(self, config: CanetConfig, lstms: list[LstmCellParams], head: dict[str, ParamTensor]):
        self.config = config
        self.lstms = lstms
        self.W1, self.b1 = head["W1"], head["b1"]
        self.W2, self.b2 = head["W2"], head["b2"]
        self.W3, self.b3 = head["W3"], head["b3"]
        self.version = 0
        # latent segment of each ID's hidden state
        self.segments = [
            slice(int(o) * config.h_scale, (int(o) + int(n)) * config.h_scale)
            for o, n in zip(config.bus.sig_offset, config.bus.n_signals)
        ]

    def tensors(self) -> list[ParamTensor]:
        out = []
        for cell in self.lstms:
            out.extend(cell.tensors())
        out.extend([self.W1, self.b1, self.W2, self.b2, self.W3, self.b3])
        return out

    def zero_grads(self) -> None:
        for p in self.tensors():
            p.zero_grad()


class CanetState:
    """Per-ID recurrent states plus the joint latent vector they compose."""

    def __init__(self, config: CanetConfig):
        self.config = config
        self.h = [np.zeros(int(n) * config.h_scale) for n in config.bus.n_signals]
        self.c = [np.zeros(int(n) * config.h_scale) for n in config.bus.n_signals]
        self.latent = np.zeros(config.latent_size)

    def reset(self) -> None:
        for arr in self.h:
            arr[...] = 0.0
        for arr in self.c:
            arr[...] = 0.0
        self.latent[...] = 0.0

    def clone(self) -> "CanetState":
        out = CanetState(self.config)
        out.h = [a.copy() for a in self.h]
        out.c = [a.copy() for a in self.c]
        out.latent = self.latent.copy()
        return out


@dataclass
class Reconstruction:
    """Full reconstruction vector with per-ID slicing."""

    vector: np.ndarray
    bus: BusConfig

    def slice_for(self, id_name: str) -> np.ndarray:
        return self.vector[self.bus.slice_of(self.bus.id_to_index[id_name])]


@dataclass
class CanetStepCache:
    id_index: int
    x: np.ndarray
    lstm_cache: object
    latent: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    params_version: int


def init(config: CanetConfig, seed: int) -> tuple[CanetParams, CanetState]:
    """Xavier-uniform weights (forget bias +1), zeroed recurrent state."""
    lstms = []
    for k, d in enumerate(config.bus.defs):
        rng = Xoshiro256StarStar(derive_seed(seed, "canet", f"lstm{k}"))
        lstms.append(init_lstm(rng, f"lstm.{d.id}", d.n_signals, d.n_signals * config.h_scale))
    L, mid, n = config.latent_size, config.mid_size, config.bus.total_signals
    head = {}
    for name, rows, cols in (("W1", mid, L), ("W2", n - 1, mid), ("W3", n, n - 1)):
        rng = Xoshiro256StarStar(derive_seed(seed, "canet", name))
        head[name] = ParamTensor(f"head.{name}", xavier_uniform(rng, (rows, cols), cols, rows))
        head["b" + name[1]] = ParamTensor(f"head.b{name[1]}", np.zeros(rows))
    return CanetParams(config, lstms, head), CanetState(config)


def step_arrays(params: CanetParams, state: CanetState, id_index: int, x: np.ndarray):
    """Hot-path step on raw arrays. Returns (y3, cache); mutates state."""
    cell = params.lstms[id_index]
    new_state, h, lstm_cache = _lstm_step_fast(
        cell.W.value, cell.b.value, state.h[id_index], state.c[id_index], x, cell.n_hidden
    )
    state.h[id_index] = new_state.h
    state.c[id_index] = new_state.c
    state.latent[params.segments[id_index]] = h
    z = state.latent.copy()
    y1 = elu(params.W1.value @ z + params.b1.value)
    y2 = elu(params.W2.value @ y1 + params.b2.value)
    y3 = elu(params.W3.value @ y2 + params.b3.value)
    cache = CanetStepCache(id_index, x, lstm_cache, z, y1, y2, y3, params.version)
    return y3, cache


def step(params: CanetParams, state: CanetState, msg: CanMessage):
    """Process one message. Returns (state, Reconstruction, cache).

    Only the message ID's latent segment changes; the state object is
    updated in place and returned.
    """
    bus = params.config.bus
    if msg.id not in bus.id_to_index:
        raise DataError(f"unknown id {msg.id!r}")
    id_index = bus.id_to_index[msg.id]
    x = np.asarray(msg.values, dtype=np.float64)
    if x.shape != (int(bus.n_signals[id_index]),):
        raise DataError(f"id {msg.id!r}: expected {int(bus.n_signals[id_index])} values")
    y3, cache = step_arrays(params, state, id_index, x)
    return state, Reconstruction(y3, bus), cache


def loss(recon: Reconstruction, msg: CanMessage) -> float:
    """Squared error over the message ID's slice of the reconstruction."""
    d = recon.slice_for(msg.id) - np.asarray(msg.values, dtype=np.float64)
    return float(d @ d)


def backward_step(params: CanetParams, cache: CanetStepCache, weight: float, dh: np.ndarray, dc: np.ndarray):
    """Shared selective backward for one cached step.

    ``dh``/``dc`` carry gradient arriving from later steps of the same ID;
    returns (dh_prev, dc_prev) to carry further back along that ID's chain.
    Head gradients flow from the loss into the full latent vector but are
    truncated at every segment except the current ID's.
    """
    i = cache.id_index
    bus = params.config.bus
    sl = bus.slice_of(i)
    d = cache.y3[sl] - cache.x
    da3 = (2.0 * weight * d) * elu_deriv_from_output(cache.y3[sl])
    params.W3.grad[sl] += np.outer(da3, cache.y2)
    params.b3.grad[sl] += da3
    dy2 = params.W3.value[sl].T @ da3
    da2 = dy2 * elu_deriv_from_output(cache.y2)
    params.W2.grad += np.outer(da2, cache.y1)
    params.b2.grad += da2
    dy1 = params.W2.value.T @ da2
    da1 = dy1 * elu_deriv_from_output(cache.y1)
    params.W1.grad += np.outer(da1, cache.latent)
    params.b1.grad += da1
    dz = params.W1.value.T @ da1
    dh_total = dh + dz[params.segments[i]]
    dh_prev, dc_prev, _ = lstm_step_backward(params.lstms[i], cache.lstm_cache, dh_total, dc)
    return dh_prev, dc_prev


def backward(params: CanetParams, cache: CanetStepCache, weight: float = 1.0) -> None:
    """Selective backward for a single step, truncated at this step.

    Accumulates into the parameter grad buffers. LSTMs of every ID other
    than the step's own receive exactly zero gradient.
    """
    if cache.params_version != params.version:
        raise ValueError("stale cache: parameters changed since the forward pass")
    H = params.lstms[cache.id_index].n_hidden
    backward_step(params, cache, weight, np.zeros(H), np.zeros(H))


def backward_window(params: CanetParams, caches: list[CanetStepCache], weights: list[float]) -> None:
    """Backward over a truncated window of cached steps (newest last).

    Recurrent gradient flows along each ID's own LSTM chain inside the
    window; it does not cross into other IDs' segments.
    """
    if caches and caches[0].params_version != params.version:
        raise ValueError("stale cache: parameters changed since the forward pass")
    n_ids = len(params.lstms)
    dh: list[np.ndarray | None] = [None] * n_ids
    dc: list[np.ndarray | None] = [None] * n_ids
    for cache, w in zip(reversed(caches), reversed(weights)):
        i = cache.id_index
        if dh[i] is None:
            H = params.lstms[i].n_hidden
            dh[i] = np.zeros(H)
            dc[i] = np.zeros(H)
        dh[i], dc[i] = backward_step(params, cache, w, dh[i], dc[i])


# ---------------------------------------------------------------------------
# checkpoint helpers


def params_tensors_dict(params: CanetParams) -> dict[str, np.ndarray]:
    return {p.name: p.value for p in params.tensors()}


def params_from_tensors(config: CanetConfig, tensors: dict[str, np.ndarray]) -> CanetParams:
    params, _ = init(config, seed=0)
    for p in params.tensors():
        if p.name not in tensors:
            raise DataError(f"checkpoint missing tensor {p.name!r}")
        if tensors[p.name].shape != p.value.shape:
            raise DataError(f"checkpoint tensor {p.name!r} has wrong shape")
        p.value[...] = tensors[p.name]
    return params
