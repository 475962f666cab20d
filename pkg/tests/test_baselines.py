import numpy as np
import pytest

from canids import baselines, scorer, trainer
from canids.data_model import BusConfig, CanMessage, MessageDef, Trace, fit_scaler, scale_trace, trace_from_messages
from canids.errors import DataError
from canids.syncan_gen import generate_trace

from test_syncan_gen import small_config


def constant_trace(value=0.5, n=600, n_ids=1):
    bus = BusConfig([MessageDef(f"k{i}", 1, 10_000) for i in range(n_ids)])
    msgs = [
        CanMessage(k * 10_000, f"k{k % n_ids}", np.array([value])) for k in range(n)
    ]
    return trace_from_messages(bus, msgs)


@pytest.fixture(scope="module")
def scaled_trace():
    trace = generate_trace(small_config(seed=31), 90_000_000)
    return scale_trace(trace, fit_scaler(trace))


# ---------------------------------------------------------------------------
# predictive baseline


def test_predictive_converges_on_constant_signal():
    trace = constant_trace()
    config = baselines.PredictiveTrainConfig(epochs=150, batch_size=4, seq_len=100, tbptt_every=50, seed=1)
    params, history = baselines.train_predictive(trace, h_scale=4, config=config)
    assert history[-1] < history[0]
    assert history[-1] < 1e-3 * history[0]
    adapter = baselines.PredictiveAdapter(params)
    adapter.reset()
    errs = [adapter.step(0, np.array([0.5])) for _ in range(50)]
    late = np.array([e[0] for e in errs[10:]])
    assert np.nanmax(late) < 5e-4


def test_predictive_first_occurrence_has_no_error(scaled_trace):
    config = baselines.PredictiveTrainConfig(epochs=1, batch_size=1, seq_len=50, tbptt_every=50, seed=1)
    params, _ = baselines.train_predictive(scaled_trace, h_scale=2, config=config)
    adapter = baselines.PredictiveAdapter(params)
    adapter.reset()
    first = adapter.step(0, np.array([0.1, 0.2]))
    assert np.isnan(first).all()
    second = adapter.step(0, np.array([0.1, 0.2]))
    assert np.isfinite(second).all()


def test_predictive_rejects_sparse_id():
    bus = BusConfig([MessageDef("x", 1, 1000), MessageDef("y", 1, 1000)])
    msgs = [CanMessage(0, "x", np.array([0.1])), CanMessage(10, "x", np.array([0.2])),
            CanMessage(20, "y", np.array([0.3]))]
    trace = trace_from_messages(bus, msgs)
    config = baselines.PredictiveTrainConfig(epochs=1, batch_size=1, seq_len=10, tbptt_every=10)
    with pytest.raises(DataError, match="occurrences"):
        baselines.train_predictive(trace, h_scale=2, config=config)


def test_predictive_models_are_independent(scaled_trace):
    config = baselines.PredictiveTrainConfig(epochs=2, batch_size=2, seq_len=100, tbptt_every=50, seed=2)
    params, _ = baselines.train_predictive(scaled_trace, h_scale=2, config=config)
    thr = scorer.ThresholdSet(np.full(scaled_trace.config.total_signals, 1e9))
    base = baselines.score_predictive(params, thr, scaled_trace, warm_up=10)
    # retrain/perturb id q's model; id p's error stream must not move
    params.models[1].Wo.value += 0.5
    moved = baselines.score_predictive(params, thr, scaled_trace, warm_up=10)
    p_rows = base.id_idx == 0
    assert np.array_equal(
        base.slice_errors[p_rows], moved.slice_errors[p_rows], equal_nan=True
    )
    q_rows = base.id_idx == 1
    assert not np.array_equal(
        base.slice_errors[q_rows], moved.slice_errors[q_rows], equal_nan=True
    )


# ---------------------------------------------------------------------------
# autoencoder baseline


def test_autoencoder_window_warmup(scaled_trace):
    config = baselines.AutoencoderTrainConfig(updates=5, batch_size=32, seed=1)
    params, _ = baselines.train_autoencoder(scaled_trace, config)
    adapter = baselines.AutoencoderAdapter(params)
    adapter.reset()
    outs = [adapter.step(0, np.array([0.1, 0.2])) for _ in range(10)]
    for k in range(7):
        assert np.isnan(outs[k]).all()
    assert np.isfinite(outs[7]).all()  # eighth occurrence fills the window


def test_autoencoder_converges_on_constant_signal():
    trace = constant_trace(value=0.3, n=400)
    config = baselines.AutoencoderTrainConfig(updates=600, batch_size=64, seed=2)
    params, history = baselines.train_autoencoder(trace, config)
    assert history[-1] < history[0]
    adapter = baselines.AutoencoderAdapter(params)
    adapter.reset()
    errs = [adapter.step(0, np.array([0.3]))[0] for _ in range(12)]
    assert np.nanmax(errs[8:]) < 1e-4


def test_autoencoder_error_matches_manual_forward(scaled_trace):
    config = baselines.AutoencoderTrainConfig(updates=5, batch_size=16, seed=3)
    params, _ = baselines.train_autoencoder(scaled_trace, config)
    adapter = baselines.AutoencoderAdapter(params)
    adapter.reset()
    window = np.linspace(0.1, 0.8, 8)
    out = None
    for v in window:
        out = adapter.step(1, np.array([v, 0.0, 0.0, 0.0]))  # id q; its first signal is global 2
    recon, _ = params.models[2].forward(window)
    assert out[0] == pytest.approx((recon[-1] - window[-1]) ** 2)


def test_autoencoder_full_window_variant(scaled_trace):
    config = baselines.AutoencoderTrainConfig(updates=5, batch_size=16, seed=4)
    params, _ = baselines.train_autoencoder(scaled_trace, config)
    last = baselines.AutoencoderAdapter(params, window_error="last")
    full = baselines.AutoencoderAdapter(params, window_error="full")
    window = np.linspace(0.2, 0.6, 8)
    o_last = o_full = None
    for v in window:
        o_last = last.step(1, np.array([v, 0, 0, 0]))
        o_full = full.step(1, np.array([v, 0, 0, 0]))
    assert o_full[0] >= o_last[0]


def test_autoencoder_needs_eight_occurrences():
    trace = constant_trace(n=5)
    config = baselines.AutoencoderTrainConfig(updates=5, batch_size=4)
    with pytest.raises(DataError, match="occurrences"):
        baselines.train_autoencoder(trace, config)


# ---------------------------------------------------------------------------
# shared calibration path


def test_baselines_calibrate_through_shared_path(scaled_trace):
    pred_config = baselines.PredictiveTrainConfig(epochs=1, batch_size=1, seq_len=50, tbptt_every=50, seed=5)
    pred, _ = baselines.train_predictive(scaled_trace, h_scale=2, config=pred_config)
    tset = trainer.calibrate_thresholds(pred, scaled_trace, warm_up=100)
    assert isinstance(tset, scorer.ThresholdSet)
    ae_config = baselines.AutoencoderTrainConfig(updates=5, batch_size=16, seed=6)
    ae, _ = baselines.train_autoencoder(scaled_trace, ae_config)
    tset2 = trainer.calibrate_thresholds(ae, scaled_trace, warm_up=100)
    assert tset2.values.shape == (scaled_trace.config.total_signals,)


def test_permuting_other_signals_leaves_baseline_errors(scaled_trace):
    """Single-unit insensitivity: the scored unit's errors ignore other data."""
    pred_config = baselines.PredictiveTrainConfig(epochs=1, batch_size=1, seq_len=50, tbptt_every=50, seed=7)
    pred, _ = baselines.train_predictive(scaled_trace, h_scale=2, config=pred_config)
    thr = scorer.ThresholdSet(np.full(scaled_trace.config.total_signals, 1e9))
    base = baselines.score_predictive(pred, thr, scaled_trace, warm_up=0)
    rng = np.random.default_rng(0)
    bus = scaled_trace.config
    vals = scaled_trace.values.copy()
    q_rows = np.flatnonzero(scaled_trace.id_idx == 1)  # permute all of id q's signals
    for col in range(4):
        vals[q_rows, col] = vals[rng.permutation(q_rows), col]
    permuted = Trace(bus, scaled_trace.times_us, scaled_trace.id_idx, vals,
                     scaled_trace.labels, validate=False)
    moved = baselines.score_predictive(pred, thr, permuted, warm_up=0)
    p_rows = base.id_idx == 0
    assert np.array_equal(base.slice_errors[p_rows], moved.slice_errors[p_rows], equal_nan=True)
