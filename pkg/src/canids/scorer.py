"""Online anomaly scoring: per-signal indicators with a global OR.

A scored stream keeps one boolean indicator per global signal. Whenever a
message arrives, the squared errors of that message's signals are compared
against their thresholds and only those indicators are rewritten; all other
indicators persist. The global score of a step is 1 iff any indicator is 1.
Models that cannot produce an error for a signal yet (warm-up windows of
the baselines) report NaN for it and leave its indicator untouched.

The same streaming machinery is shared by threshold calibration, so every
model is calibrated and scored through one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import canet
from .data_model import BusConfig, Trace
from .errors import ConfigError, DataError

DEFAULT_WARM_UP = 1000


@dataclass(frozen=True)
class ThresholdSet:
    """Per-global-signal anomaly thresholds."""

    values: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise DataError("thresholds must be finite")
        if (self.values < 0).any():
            raise DataError("thresholds must be non-negative")


@dataclass
class AnomalyReport:
    """Per-step scoring output for the messages after warm-up."""

    times_us: np.ndarray
    id_idx: np.ndarray
    global_score: np.ndarray  # uint8 0/1
    indicators: np.ndarray  # uint64 bitmask over global signals
    slice_errors: np.ndarray  # (n, max_signals), NaN outside the step's ID
    warm_up: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times_us)

    def indicator_matrix(self, n_signals: int) -> np.ndarray:
        bits = (self.indicators[:, None] >> np.arange(n_signals, dtype=np.uint64)[None, :]) & 1
        return bits.astype(bool)


# ---------------------------------------------------------------------------
# model adapters

_ADAPTERS: dict[type, object] = {}


def register_adapter(params_type: type, factory) -> None:
    _ADAPTERS[params_type] = factory


def make_adapter(params):
    """Streaming adapter for any known model parameter object."""
    from . import baselines  # noqa: F401  (registers its adapters on import)

    for cls, factory in _ADAPTERS.items():
        if isinstance(params, cls):
            return factory(params)
    raise ConfigError(f"no scoring adapter for {type(params).__name__}")


class CanetAdapter:
    """Streams messages through the recurrent autoencoder."""

    def __init__(self, params: canet.CanetParams):
        self.params = params
        self.bus = params.config.bus
        self.state = canet.CanetState(params.config)
        self._slices = [self.bus.slice_of(i) for i in range(len(self.bus.defs))]

    def reset(self) -> None:
        self.state.reset()

    def step(self, id_index: int, x: np.ndarray) -> np.ndarray:
        y3, _ = canet.step_arrays(self.params, self.state, id_index, x)
        d = y3[self._slices[id_index]] - x
        return d * d


register_adapter(canet.CanetParams, CanetAdapter)


# ---------------------------------------------------------------------------
# streaming engines


def _check_compat(adapter, trace: Trace) -> None:
    bus = getattr(adapter, "bus", None)
    if bus is not None and bus != trace.config:
        raise ConfigError("model bus layout does not match the trace")


def run_stream(adapter, thresholds: ThresholdSet, trace: Trace, warm_up: int = DEFAULT_WARM_UP) -> AnomalyReport:
    """Score a scaled trace. The first ``warm_up`` messages update model and
    indicator state but emit no rows."""
    _check_compat(adapter, trace)
    bus = trace.config
    if thresholds.values.shape != (bus.total_signals,):
        raise ConfigError("threshold count does not match the bus layout")
    adapter.reset()
    n = len(trace)
    n_scored = max(n - warm_up, 0)
    times = np.empty(n_scored, dtype=np.int64)
    ids = np.empty(n_scored, dtype=np.int16)
    glob = np.empty(n_scored, dtype=np.uint8)
    masks = np.empty(n_scored, dtype=np.uint64)
    errs_out = np.full((n_scored, bus.max_signals), np.nan)

    thr = thresholds.values
    offsets = bus.sig_offset
    n_sig = bus.n_signals
    id_arr = trace.id_idx
    val_arr = trace.values
    t_arr = trace.times_us
    mask = 0
    for k in range(n):
        i = int(id_arr[k])
        cnt = int(n_sig[i])
        x = val_arr[k, :cnt]
        errs = adapter.step(i, x)
        base = int(offsets[i])
        for j in range(cnt):
            e = errs[j]
            if e != e:  # NaN: model not ready for this signal, indicator persists
                continue
            bit = 1 << (base + j)
            if e > thr[base + j]:
                mask |= bit
            else:
                mask &= ~bit
        if k >= warm_up:
            r = k - warm_up
            times[r] = t_arr[k]
            ids[r] = i
            glob[r] = 1 if mask else 0
            masks[r] = mask
            errs_out[r, :cnt] = errs
    return AnomalyReport(times, ids, glob, masks, errs_out, warm_up)


def collect_errors(adapter, trace: Trace, warm_up: int = DEFAULT_WARM_UP) -> list[np.ndarray]:
    """Stream a trace and gather per-global-signal squared errors
    (post warm-up, NaN entries dropped). Used by threshold calibration."""
    _check_compat(adapter, trace)
    bus = trace.config
    adapter.reset()
    per_id: list[list[np.ndarray]] = [[] for _ in bus.defs]
    id_arr = trace.id_idx
    val_arr = trace.values
    n_sig = bus.n_signals
    for k in range(len(trace)):
        i = int(id_arr[k])
        errs = adapter.step(i, val_arr[k, : int(n_sig[i])])
        if k >= warm_up:
            per_id[i].append(errs)
    out: list[np.ndarray] = []
    for i in range(len(bus.defs)):
        block = np.array(per_id[i]) if per_id[i] else np.empty((0, int(n_sig[i])))
        for j in range(int(n_sig[i])):
            col = block[:, j] if len(block) else np.empty(0)
            out.append(col[np.isfinite(col)])
    return out


def score_stream(params, thresholds: ThresholdSet, trace: Trace, warm_up: int = DEFAULT_WARM_UP) -> AnomalyReport:
    """Score with any supported model's parameters (shared indicator logic)."""
    report = run_stream(make_adapter(params), thresholds, trace, warm_up)
    report.meta["model"] = type(params).__name__
    return report


# ---------------------------------------------------------------------------
# report persistence


def write_report(report: AnomalyReport, path, bus: BusConfig) -> None:
    meta = dict(report.meta)
    meta["warm_up"] = report.warm_up
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(meta):
            fh.write(f"# {key} = {meta[key]}\n")
        cols = ",".join(f"err{j}" for j in range(bus.max_signals))
        fh.write(f"time_us,id,global,indicators,{cols}\n")
        ids = bus.ids
        for r in range(len(report)):
            errs = report.slice_errors[r]
            err_txt = ",".join("" if e != e else f"{e:.9g}" for e in errs)
            fh.write(
                f"{report.times_us[r]},{ids[report.id_idx[r]]},{report.global_score[r]},"
                f"{int(report.indicators[r])},{err_txt}\n"
            )


def read_report(path, bus: BusConfig) -> AnomalyReport:
    meta: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line
                continue
            rows.append(line)
    if header is None:
        raise DataError(f"{path}: missing report header")
    n = len(rows)
    times = np.empty(n, dtype=np.int64)
    ids = np.empty(n, dtype=np.int16)
    glob = np.empty(n, dtype=np.uint8)
    masks = np.empty(n, dtype=np.uint64)
    errs = np.full((n, bus.max_signals), np.nan)
    for r, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != 4 + bus.max_signals:
            raise DataError(f"{path}: line {r + 2}: wrong field count")
        times[r] = int(parts[0])
        ids[r] = bus.id_to_index[parts[1]]
        glob[r] = int(parts[2])
        masks[r] = int(parts[3])
        for j in range(bus.max_signals):
            if parts[4 + j] != "":
                errs[r, j] = float(parts[4 + j])
    warm_up = int(meta.pop("warm_up", DEFAULT_WARM_UP))
    return AnomalyReport(times, ids, glob, masks, errs, warm_up, meta)
