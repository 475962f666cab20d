"""End-to-end finite-difference verification of every model's backward pass.

Each model gets a deterministic closure built so the analytic gradient is
the exact derivative of the closure loss: recurrent models are warmed up on
mixed traffic to a frozen state snapshot, then differentiated over a short
run of same-ID steps. Latent segments of inactive IDs enter the closure as
nonzero constants, which exercises the full head without engaging the
cross-segment truncation (whose zero-gradient contract is checked
separately by the selective-gradient tests).
"""

from __future__ import annotations

import numpy as np

from . import baselines, canet, nn_core, syncan_gen
from .rng import Xoshiro256StarStar, derive_seed

WARM_STEPS = 120
CHAIN_STEPS = 5


def _mixed_inputs(bus, rng, n):
    """Deterministic pseudo-traffic: (id_index, values in [0,1]) pairs."""
    out = []
    for k in range(n):
        i = k % len(bus.defs) if k < len(bus.defs) else rng.integer(len(bus.defs))
        out.append((i, rng.uniforms(int(bus.n_signals[i]))))
    return out


def canet_closure(h_scale: int = 5, seed: int = 11):
    """(loss_fn, params) for the joint model over the default bus."""
    bus = syncan_gen.default_bus()
    config = canet.CanetConfig(bus, h_scale)
    params, state = canet.init(config, derive_seed(seed, "gc-canet-init"))
    rng = Xoshiro256StarStar(derive_seed(seed, "gc-canet-data"))
    for i, x in _mixed_inputs(bus, rng, WARM_STEPS):
        canet.step_arrays(params, state, i, x)
    frozen = state.clone()
    runs = [
        (i, [rng.uniforms(int(bus.n_signals[i])) for _ in range(CHAIN_STEPS)])
        for i in range(len(bus.defs))
    ]
    slices = [bus.slice_of(i) for i in range(len(bus.defs))]

    norm = 1.0 / (len(runs) * CHAIN_STEPS)  # O(1) loss keeps FD noise low

    def loss_fn(collect=False):
        total = 0.0
        caches = []
        for i, xs in runs:
            st = frozen.clone()
            for x in xs:
                y3, cache = canet.step_arrays(params, st, i, x)
                d = y3[slices[i]] - x
                total += norm * float(d @ d)
                caches.append((i, cache))
        return (total, caches) if collect else total

    def populate_grads():
        params.zero_grads()
        _, caches = loss_fn(collect=True)
        by_id: dict[int, list] = {}
        for i, cache in caches:
            by_id.setdefault(i, []).append(cache)
        for i, chain in by_id.items():
            canet.backward_window(params, chain, [norm] * len(chain))

    return loss_fn, populate_grads, params


def predictive_closure(h_scale: int = 5, seed: int = 12):
    bus = syncan_gen.default_bus()
    rng = Xoshiro256StarStar(derive_seed(seed, "gc-pred-data"))
    models = [
        baselines.PredictiveIdModel(d.id, d.n_signals, h_scale, derive_seed(seed, "gc-pred", d.id))
        for d in bus.defs
    ]
    params = baselines.PredictiveParams(bus, h_scale, models)
    runs = []
    for i, model in enumerate(models):
        h, c = np.zeros(model.H), np.zeros(model.H)
        for _ in range(20):
            h, c, _, _ = model.forward(h, c, rng.uniforms(model.n))
        xs = [rng.uniforms(model.n) for _ in range(CHAIN_STEPS + 1)]
        runs.append((model, h, c, xs))

    norm = 1.0 / (len(runs) * CHAIN_STEPS)

    def loss_fn(collect=False):
        total = 0.0
        windows = []
        for model, h0, c0, xs in runs:
            h, c = h0, c0
            caches, targets, preds = [], [], []
            for t in range(CHAIN_STEPS):
                h, c, pred, cache = model.forward(h, c, xs[t])
                d = pred - xs[t + 1]
                total += norm * float(d @ d)
                caches.append(cache)
                targets.append(xs[t + 1])
                preds.append(pred)
            windows.append((model, caches, targets, preds))
        return (total, windows) if collect else total

    def populate_grads():
        for t in params.tensors():
            t.zero_grad()
        _, windows = loss_fn(collect=True)
        for model, caches, targets, preds in windows:
            model.backward_window(
                caches, targets, preds, np.zeros(model.H), np.zeros(model.H), scale=norm
            )

    return loss_fn, populate_grads, params


def autoencoder_closure(seed: int = 13):
    bus = syncan_gen.default_bus()
    rng = Xoshiro256StarStar(derive_seed(seed, "gc-ae-data"))
    models = [
        baselines.SignalAutoencoder(name, derive_seed(seed, "gc-ae", name))
        for name in bus.signal_names()
    ]
    params = baselines.AutoencoderParams(bus, models)
    batches = [
        np.array([rng.uniforms(baselines.AE_WINDOW) for _ in range(4)]) for _ in models
    ]

    norm = 1.0 / (len(models) * 4)

    def loss_fn(collect=False):
        total = 0.0
        acts_all = []
        for model, X in zip(models, batches):
            R, acts = model.forward(X)
            d = R - X
            total += norm * float((d * d).sum())
            acts_all.append((model, acts, d))
        return (total, acts_all) if collect else total

    def populate_grads():
        for t in params.tensors():
            t.zero_grad()
        _, acts_all = loss_fn(collect=True)
        for model, acts, d in acts_all:
            model.backward(acts, 2.0 * norm * d)

    return loss_fn, populate_grads, params


def run_all(h_scale: int = 5, tolerance: float = 1e-4, samples_per_tensor: int = 200):
    """Gradient-check all three models; returns {name: GradCheckReport}."""
    reports = {}
    for name, builder in (
        ("canet", lambda: canet_closure(h_scale)),
        ("predictive", lambda: predictive_closure(h_scale)),
        ("autoencoder", autoencoder_closure),
    ):
        loss_fn, populate_grads, params = builder()
        populate_grads()
        reports[name] = nn_core.grad_check(
            loss_fn, params.tensors(), tolerance=tolerance, samples_per_tensor=samples_per_tensor
        )
    return reports
