"""Single-ID and single-signal comparison models.

* Predictive: one LSTM-plus-dense model per message ID that predicts the
  payload of the ID's next occurrence; the squared prediction error feeds
  the shared indicator mechanism.
* Window autoencoder: one small dense autoencoder per signal over the
  window of that signal's last eight occurrence values (8-4-2-4-8, ELU on
  hidden layers, linear output); by default the newest element's
  reconstruction error is the signal's step error.

Both consume exactly one ID's or one signal's history, so they are
structurally blind to cross-signal dependencies; they share the scorer's
calibration and indicator code paths with the joint model.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from . import scorer
from .data_model import BusConfig, Trace
from .errors import ConfigError, DataError
from .nn_core import (
    AdamState,
    ParamTensor,
    _lstm_step_fast,
    adam_update,
    dense_backward,
    dense_forward,
    elu,
    elu_deriv_from_output,
    init_lstm,
    lstm_step_backward,
    xavier_uniform,
)
from .rng import Xoshiro256StarStar, derive_seed

AE_LAYER_SIZES = (8, 4, 2, 4, 8)
AE_WINDOW = 8


@dataclass(frozen=True)
class PredictiveTrainConfig:
    epochs: int = 30
    batch_size: int = 10
    seq_len: int = 400
    tbptt_every: int = 100
    lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.seq_len % self.tbptt_every != 0:
            raise ConfigError("tbptt_every must divide seq_len")


@dataclass(frozen=True)
class AutoencoderTrainConfig:
    updates: int = 3000
    batch_size: int = 256
    lr: float = 0.01
    max_windows: int = 50_000
    seed: int = 0


# ---------------------------------------------------------------------------
# predictive baseline


class PredictiveIdModel:
    """LSTM (n -> n*h_scale) + dense ELU layer + linear output of size n."""

    def __init__(self, id_name: str, n: int, h_scale: int, seed: int):
        rng = Xoshiro256StarStar(seed)
        H = n * h_scale
        self.n = n
        self.H = H
        self.lstm = init_lstm(rng, f"pred.{id_name}.lstm", n, H)
        self.Wh = ParamTensor(f"pred.{id_name}.Wh", xavier_uniform(rng, (H, H), H, H))
        self.bh = ParamTensor(f"pred.{id_name}.bh", np.zeros(H))
        self.Wo = ParamTensor(f"pred.{id_name}.Wo", xavier_uniform(rng, (n, H), H, n))
        self.bo = ParamTensor(f"pred.{id_name}.bo", np.zeros(n))

    def tensors(self) -> list[ParamTensor]:
        return self.lstm.tensors() + [self.Wh, self.bh, self.Wo, self.bo]

    def forward(self, h, c, x):
        """Advance one occurrence; returns (h, c, prediction, cache)."""
        state, hid, lcache = _lstm_step_fast(self.lstm.W.value, self.lstm.b.value, h, c, x, self.H)
        u = elu(self.Wh.value @ hid + self.bh.value)
        pred = self.Wo.value @ u + self.bo.value
        return state.h, state.c, pred, (lcache, hid, u)

    def backward_window(self, caches, targets, preds, dh, dc, scale=1.0):
        """Reverse pass over a window; accumulates grads, returns carries."""
        for cache, target, pred in zip(reversed(caches), reversed(targets), reversed(preds)):
            lcache, hid, u = cache
            dpred = 2.0 * scale * (pred - target)
            self.Wo.grad += np.outer(dpred, u)
            self.bo.grad += dpred
            du = self.Wo.value.T @ dpred
            da = du * elu_deriv_from_output(u)
            self.Wh.grad += np.outer(da, hid)
            self.bh.grad += da
            dh = dh + self.Wh.value.T @ da
            dh, dc, _ = lstm_step_backward(self.lstm, lcache, dh, dc)
        return dh, dc


class PredictiveParams:
    def __init__(self, bus: BusConfig, h_scale: int, models: list[PredictiveIdModel]):
        self.bus = bus
        self.h_scale = h_scale
        self.models = models

    def tensors(self) -> list[ParamTensor]:
        return [t for m in self.models for t in m.tensors()]


def _train_predictive_one(args):
    id_name, n, h_scale, occ, config = args
    model = PredictiveIdModel(id_name, n, h_scale, derive_seed(config.seed, "pred-init", id_name))
    n_occ = len(occ)
    if n_occ < 2:
        raise DataError(f"id {id_name!r} has {n_occ} occurrences; need at least 2")
    seq_len = min(config.seq_len, n_occ - 1)
    tbptt = min(config.tbptt_every, seq_len)
    rng = Xoshiro256StarStar(derive_seed(config.seed, "pred-sampling", id_name))
    adam = AdamState(lr=config.lr)
    tensors = model.tensors()
    losses = []
    n_windows = max(seq_len // tbptt, 1)
    for epoch in range(config.epochs):
        starts = [rng.integer(n_occ - seq_len) for _ in range(config.batch_size)]
        states = [(np.zeros(model.H), np.zeros(model.H)) for _ in starts]
        epoch_loss = 0.0
        for win in range(n_windows):
            for e, start in enumerate(starts):
                h, c = states[e]
                caches, targets, preds = [], [], []
                for t in range(start + win * tbptt, start + min((win + 1) * tbptt, seq_len)):
                    h, c, pred, cache = model.forward(h, c, occ[t])
                    target = occ[t + 1]
                    d = pred - target
                    epoch_loss += float(d @ d)
                    caches.append(cache)
                    targets.append(target)
                    preds.append(pred)
                states[e] = (h, c)
                model.backward_window(caches, targets, preds, np.zeros(model.H), np.zeros(model.H))
            adam_update(adam, tensors)
        losses.append(epoch_loss / (config.batch_size * seq_len))
    return {t.name: t.value for t in tensors}, losses


def train_predictive(
    trace: Trace, h_scale: int, config: PredictiveTrainConfig, jobs: int = 1
) -> tuple[PredictiveParams, list[float]]:
    """Train one next-payload model per ID on a scaled trace."""
    bus = trace.config
    tasks = []
    for i, d in enumerate(bus.defs):
        rows = trace.id_idx == i
        occ = np.ascontiguousarray(trace.values[rows, : d.n_signals])
        tasks.append((d.id, d.n_signals, h_scale, occ, config))
    results = _pool_map(_train_predictive_one, tasks, jobs)
    models = []
    per_epoch = np.zeros(config.epochs)
    for (id_name, n, _, _, _), (weights, losses) in zip(tasks, results):
        model = PredictiveIdModel(id_name, n, h_scale, 0)
        for t in model.tensors():
            t.value[...] = weights[t.name]
        models.append(model)
        per_epoch += np.array(losses)
    history = list(per_epoch / len(tasks))
    return PredictiveParams(bus, h_scale, models), history


class PredictiveAdapter:
    """Streams per-ID occurrences; errors compare the previous prediction
    with the values that actually arrived."""

    def __init__(self, params: PredictiveParams):
        self.params = params
        self.bus = params.bus
        self.reset()

    def reset(self) -> None:
        self._h = [np.zeros(m.H) for m in self.params.models]
        self._c = [np.zeros(m.H) for m in self.params.models]
        self._pending: list[np.ndarray | None] = [None] * len(self.params.models)

    def step(self, id_index: int, x: np.ndarray) -> np.ndarray:
        model = self.params.models[id_index]
        pending = self._pending[id_index]
        if pending is None:
            errs = np.full(model.n, np.nan)
        else:
            d = pending - x
            errs = d * d
        h, c, pred, _ = model.forward(self._h[id_index], self._c[id_index], x)
        self._h[id_index] = h
        self._c[id_index] = c
        self._pending[id_index] = pred
        return errs


scorer.register_adapter(PredictiveParams, PredictiveAdapter)


def score_predictive(params: PredictiveParams, thresholds, trace: Trace, warm_up: int = scorer.DEFAULT_WARM_UP):
    report = scorer.run_stream(PredictiveAdapter(params), thresholds, trace, warm_up)
    report.meta["model"] = "predictive"
    return report


# ---------------------------------------------------------------------------
# window autoencoder baseline


class SignalAutoencoder:
    """Dense 8-4-2-4-8 autoencoder over one signal's occurrence window."""

    def __init__(self, name: str, seed: int):
        rng = Xoshiro256StarStar(seed)
        self.layers: list[tuple[ParamTensor, ParamTensor]] = []
        for k, (n_in, n_out) in enumerate(zip(AE_LAYER_SIZES[:-1], AE_LAYER_SIZES[1:])):
            W = ParamTensor(f"ae.{name}.W{k + 1}", xavier_uniform(rng, (n_out, n_in), n_in, n_out))
            b = ParamTensor(f"ae.{name}.b{k + 1}", np.zeros(n_out))
            self.layers.append((W, b))

    def tensors(self) -> list[ParamTensor]:
        return [t for W, b in self.layers for t in (W, b)]

    def forward(self, x: np.ndarray):
        """ELU after every layer but the last; works on 1-D or 2-D input."""
        acts = [x]
        out = x
        for k, (W, b) in enumerate(self.layers):
            out = dense_forward(W.value, b.value, out)
            if k < len(self.layers) - 1:
                out = elu(out)
            acts.append(out)
        return out, acts

    def backward(self, acts, dout) -> None:
        for k in range(len(self.layers) - 1, -1, -1):
            W, b = self.layers[k]
            da = dout if k == len(self.layers) - 1 else dout * elu_deriv_from_output(acts[k + 1])
            dW, db, dout = dense_backward(W.value, acts[k], da)
            W.grad += dW
            b.grad += db


class AutoencoderParams:
    def __init__(self, bus: BusConfig, models: list[SignalAutoencoder]):
        if len(models) != bus.total_signals:
            raise ConfigError("need one autoencoder per signal")
        self.bus = bus
        self.models = models

    def tensors(self) -> list[ParamTensor]:
        return [t for m in self.models for t in m.tensors()]


def _signal_occurrences(trace: Trace, global_sig: int) -> np.ndarray:
    i, col = trace.config.signal_owner(global_sig)
    rows = trace.id_idx == i
    return np.ascontiguousarray(trace.values[rows, col])


def _train_autoencoder_one(args):
    name, series, config = args
    model = SignalAutoencoder(name, derive_seed(config.seed, "ae-init", name))
    if len(series) < AE_WINDOW:
        raise DataError(f"signal {name} has {len(series)} occurrences; need >= {AE_WINDOW}")
    windows = np.lib.stride_tricks.sliding_window_view(series, AE_WINDOW)
    if len(windows) > config.max_windows:
        stride = len(windows) / config.max_windows
        idx = (np.arange(config.max_windows) * stride).astype(np.int64)
        windows = windows[idx]
    windows = np.ascontiguousarray(windows)
    rng = Xoshiro256StarStar(derive_seed(config.seed, "ae-sampling", name))
    adam = AdamState(lr=config.lr)
    tensors = model.tensors()
    losses = []
    n = len(windows)
    for _ in range(config.updates):
        rows = np.array([rng.integer(n) for _ in range(min(config.batch_size, n))])
        X = windows[rows]
        R, acts = model.forward(X)
        d = R - X
        losses.append(float((d * d).sum() / len(X)))
        model.backward(acts, 2.0 * d)
        adam_update(adam, tensors)
    return {t.name: t.value for t in tensors}, losses


def train_autoencoder(
    trace: Trace, config: AutoencoderTrainConfig, jobs: int = 1
) -> tuple[AutoencoderParams, list[float]]:
    """Train one window autoencoder per signal on a scaled trace."""
    bus = trace.config
    names = bus.signal_names()
    tasks = []
    for g in range(bus.total_signals):
        tasks.append((names[g], _signal_occurrences(trace, g), config))
    results = _pool_map(_train_autoencoder_one, tasks, jobs)
    models = []
    per_update = np.zeros(config.updates)
    for (name, _, _), (weights, losses) in zip(tasks, results):
        model = SignalAutoencoder(name, 0)
        for t in model.tensors():
            t.value[...] = weights[t.name]
        models.append(model)
        per_update += np.array(losses)
    return AutoencoderParams(bus, models), list(per_update / len(tasks))


class AutoencoderAdapter:
    """Keeps the last eight values per signal; a signal reports NaN until its
    window is full. ``window_error`` selects the newest element's error
    (default) or the full-window error."""

    def __init__(self, params: AutoencoderParams, window_error: str = "last"):
        if window_error not in ("last", "full"):
            raise ConfigError("window_error must be 'last' or 'full'")
        self.params = params
        self.bus = params.bus
        self.window_error = window_error
        self.reset()

    def reset(self) -> None:
        n = self.bus.total_signals
        self._buf = np.zeros((n, AE_WINDOW))
        self._count = np.zeros(n, dtype=np.int64)

    def step(self, id_index: int, x: np.ndarray) -> np.ndarray:
        base = int(self.bus.sig_offset[id_index])
        errs = np.full(len(x), np.nan)
        for j, v in enumerate(x):
            g = base + j
            buf = self._buf[g]
            buf[:-1] = buf[1:]
            buf[-1] = v
            self._count[g] += 1
            if self._count[g] < AE_WINDOW:
                continue
            recon, _ = self.params.models[g].forward(buf)
            if self.window_error == "last":
                d = recon[-1] - buf[-1]
                errs[j] = d * d
            else:
                d = recon - buf
                errs[j] = float(d @ d)
        return errs


scorer.register_adapter(AutoencoderParams, AutoencoderAdapter)


def score_autoencoder(
    params: AutoencoderParams,
    thresholds,
    trace: Trace,
    warm_up: int = scorer.DEFAULT_WARM_UP,
    window_error: str = "last",
):
    report = scorer.run_stream(AutoencoderAdapter(params, window_error), thresholds, trace, warm_up)
    report.meta["model"] = "autoencoder"
    return report


# ---------------------------------------------------------------------------
# helpers


def _pool_map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with multiprocessing.get_context("fork").Pool(min(jobs, len(tasks))) as pool:
        return pool.map(fn, tasks)


def predictive_tensors_dict(params: PredictiveParams) -> dict[str, np.ndarray]:
    return {t.name: t.value for t in params.tensors()}


def predictive_from_tensors(bus: BusConfig, h_scale: int, tensors: dict[str, np.ndarray]) -> PredictiveParams:
    models = []
    for d in bus.defs:
        model = PredictiveIdModel(d.id, d.n_signals, h_scale, 0)
        for t in model.tensors():
            if t.name not in tensors:
                raise DataError(f"checkpoint missing tensor {t.name!r}")
            t.value[...] = tensors[t.name]
        models.append(model)
    return PredictiveParams(bus, h_scale, models)


def autoencoder_tensors_dict(params: AutoencoderParams) -> dict[str, np.ndarray]:
    return {t.name: t.value for t in params.tensors()}


def autoencoder_from_tensors(bus: BusConfig, tensors: dict[str, np.ndarray]) -> AutoencoderParams:
    models = []
    for name in bus.signal_names():
        model = SignalAutoencoder(name, 0)
        for t in model.tensors():
            if t.name not in tensors:
                raise DataError(f"checkpoint missing tensor {t.name!r}")
            t.value[...] = tensors[t.name]
        models.append(model)
    return AutoencoderParams(bus, models)
