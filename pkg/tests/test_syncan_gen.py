import numpy as np
import pytest

from canids.data_model import BusConfig, MessageDef
from canids.errors import ConfigError
from canids.syncan_gen import (
    GeneratorConfig,
    SignalSpec,
    config_from_text,
    config_to_text,
    default_config,
    generate_trace,
)


def small_config(seed=3):
    """Two IDs exercising every signal kind and dependency function."""
    bus = BusConfig([MessageDef("p", 2, 20_000), MessageDef("q", 4, 30_000)])
    specs = (
        SignalSpec(
            "physical",
            {
                "lo": -1.0, "hi": 3.0, "theta": 0.8, "sigma": 0.4, "n_sin": 2,
                "sin_amp0": 0.5, "sin_freq0": 0.2, "sin_phase0": 0.3,
                "sin_amp1": 0.2, "sin_freq1": 0.05, "sin_phase1": 1.1,
            },
        ),
        SignalSpec("dependent", {"fn": "affine", "a": 2.0, "b": 0.0}, (0,)),
        SignalSpec("counter", {"increment": 1, "modulus": 16}),
        SignalSpec("dependent", {"fn": "lagged", "delay_us": 100_000}, (0,)),
        SignalSpec("dependent", {"fn": "moving_average", "window": 3}, (0,)),
        SignalSpec("dependent", {"fn": "product", "a": 0.5}, (0, 2)),
    )
    return GeneratorConfig(seed=seed, bus=bus, signal_specs=specs, period_jitter_fraction=0.1)


def test_default_config_shape():
    cfg = default_config(1)
    assert len(cfg.bus.defs) == 10
    assert cfg.bus.total_signals == 20
    assert sum(d.n_signals for d in cfg.bus.defs) == 20
    periods = [d.nominal_period_us for d in cfg.bus.defs]
    assert min(periods) >= 20_000 and max(periods) <= 100_000
    kinds = [s.kind for s in cfg.signal_specs]
    assert kinds.count("dependent") >= 8
    assert kinds.count("counter") >= 2


def test_default_config_deterministic():
    assert default_config(5) == default_config(5)
    assert default_config(5) != default_config(6)


def test_default_config_partner_coverage():
    # every signal participates in at least one dependency (as source or sink)
    cfg = default_config(1)
    related = set()
    for g, spec in enumerate(cfg.signal_specs):
        if spec.kind == "dependent":
            related.add(g)
            related.update(spec.sources)
    assert related == set(range(20))


def test_generate_deterministic():
    cfg = small_config()
    assert generate_trace(cfg, 5_000_000) == generate_trace(cfg, 5_000_000)


def test_message_count_bounds_50ms_period():
    # 10 s of a 50 ms ID at 10% jitter: gap in [45, 55] ms
    for seed in range(10):
        cfg = default_config(seed)
        trace = generate_trace(cfg, 10_000_000)
        k = cfg.bus.id_to_index["id3"]
        assert cfg.bus.defs[k].nominal_period_us == 50_000
        n = int((trace.id_idx == k).sum())
        assert 181 <= n <= 223


def test_interarrival_bounds():
    cfg = small_config()
    trace = generate_trace(cfg, 20_000_000)
    for i, d in enumerate(cfg.bus.defs):
        gaps = np.diff(trace.times_us[trace.id_idx == i])
        assert gaps.min() >= d.nominal_period_us * 0.9
        assert gaps.max() <= d.nominal_period_us * 1.1


def test_counter_sawtooth():
    cfg = small_config()
    trace = generate_trace(cfg, 10_000_000)
    q = cfg.bus.id_to_index["q"]
    counter = trace.values[trace.id_idx == q, 0]
    expect = np.arange(len(counter)) % 16
    assert np.array_equal(counter, expect)


def test_physical_stays_in_range():
    cfg = small_config()
    trace = generate_trace(cfg, 60_000_000)
    p = cfg.bus.id_to_index["p"]
    phys = trace.values[trace.id_idx == p, 0]
    assert phys.min() >= -1.0 and phys.max() <= 3.0


def _latest_at(trace, src_id_idx, src_col, t):
    rows = np.flatnonzero((trace.id_idx == src_id_idx) & (trace.times_us <= t))
    if len(rows) == 0:
        return None
    return trace.values[rows[-1], src_col]


def test_dependencies_recomputable_from_history():
    # brute-force oracle: replay the recorded trace and re-derive every
    # dependent value from its source history
    cfg = small_config()
    trace = generate_trace(cfg, 30_000_000)
    bus = cfg.bus
    p, q = bus.id_to_index["p"], bus.id_to_index["q"]
    src_hist_vals = []
    src_hist_times = []
    for k in range(len(trace)):
        if trace.id_idx[k] == p:
            src_hist_times.append(trace.times_us[k])
            src_hist_vals.append(trace.values[k, 0])
        t = int(trace.times_us[k])
        if trace.id_idx[k] == p:  # affine on same message's source
            assert trace.values[k, 1] == 2.0 * trace.values[k, 0]
        else:
            # lagged copy of signal 0, delay 100 ms
            want = _latest_at(trace, p, 0, t - 100_000)
            assert trace.values[k, 1] == (0.0 if want is None else want)
            # moving average of last 3 source values
            tail = src_hist_vals[-3:]
            want_ma = float(np.mean(tail)) if tail else 0.0
            assert trace.values[k, 2] == want_ma
            # product of source signal and own counter (same message)
            assert trace.values[k, 3] == 0.5 * (src_hist_vals[-1] if src_hist_vals else 0.0) * trace.values[k, 0]


def test_dependency_affine_tolerance():
    cfg = small_config()
    trace = generate_trace(cfg, 10_000_000)
    p = cfg.bus.id_to_index["p"]
    rows = trace.id_idx == p
    assert np.allclose(trace.values[rows, 1], 2.0 * trace.values[rows, 0], atol=1e-9)


def test_all_labels_false():
    trace = generate_trace(small_config(), 5_000_000)
    assert not trace.labels.any()
    assert trace.attacks == ()


def test_config_text_roundtrip():
    cfg = default_config(9)
    assert config_from_text(config_to_text(cfg)) == cfg


def test_generate_rejects_bad_duration():
    with pytest.raises(ConfigError):
        generate_trace(small_config(), 0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SignalSpec("dependent", {"fn": "affine", "a": 1.0, "b": 0.0}, ())  # missing source
    with pytest.raises(ConfigError):
        SignalSpec("physical", {}, (0,))  # physical cannot have sources
    bad_bus = BusConfig([MessageDef("p", 1, 1000)])
    with pytest.raises(ConfigError):
        GeneratorConfig(seed=1, bus=bad_bus, signal_specs=(SignalSpec("dependent", {"fn": "affine", "a": 1.0, "b": 0.0}, (0,)),))
