"""Trace representation, CSV serialization, 0-1 scaling, and splitting.

A trace is stored column-wise (numpy arrays) for throughput: timestamps in
integer microseconds, a small-int ID index per message, and a dense value
matrix with one column per signal slot up to the widest ID. Cells beyond a
message's signal count are NaN in memory and empty in CSV.

Signals are addressed globally: bus order fixes an index 0..N-1 over the
concatenation of every ID's signals, and all scaling, thresholding, and
reporting use that indexing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

ATTACK_KINDS = ("plateau", "continuous", "playback", "suppress", "flooding")

#: CSV cells are rendered with this many fractional digits.
CSV_DECIMALS = 6


@dataclass(frozen=True)
class MessageDef:
    """Static description of one message ID."""

    id: str
    n_signals: int
    nominal_period_us: int

    def __post_init__(self):
        if self.n_signals < 1:
            raise ConfigError(f"id {self.id!r}: n_signals must be >= 1")
        if self.nominal_period_us < 1:
            raise ConfigError(f"id {self.id!r}: nominal_period_us must be >= 1")


class BusConfig:
    """Ordered set of message definitions; fixes the global signal indexing."""

    def __init__(self, defs):
        defs = tuple(defs)
        if not defs:
            raise ConfigError("bus needs at least one message definition")
        ids = [d.id for d in defs]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate message ids in bus config")
        self.defs = defs
        self.ids = tuple(ids)
        self.id_to_index = {d.id: k for k, d in enumerate(defs)}
        self.n_signals = np.array([d.n_signals for d in defs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(self.n_signals)])
        self.sig_offset = offsets[:-1]
        self.total_signals = int(offsets[-1])
        self.max_signals = int(self.n_signals.max())

    def __eq__(self, other):
        return isinstance(other, BusConfig) and self.defs == other.defs

    def __repr__(self):
        return f"BusConfig({len(self.defs)} ids, {self.total_signals} signals)"

    def slice_of(self, id_index: int) -> slice:
        """Global signal slice owned by the ID at ``id_index``."""
        lo = int(self.sig_offset[id_index])
        return slice(lo, lo + int(self.n_signals[id_index]))

    def signal_owner(self, signal_index: int) -> tuple[int, int]:
        """Map a global signal index to (id_index, column within the ID)."""
        if not 0 <= signal_index < self.total_signals:
            raise ConfigError(f"signal index {signal_index} out of range")
        id_index = int(np.searchsorted(self.sig_offset, signal_index, side="right") - 1)
        return id_index, signal_index - int(self.sig_offset[id_index])

    def signal_names(self) -> list[str]:
        return [f"{d.id}.s{k}" for d in self.defs for k in range(d.n_signals)]


@dataclass(frozen=True)
class CanMessage:
    """One decoded bus message."""

    time_us: int
    id: str
    values: np.ndarray
    label: bool = False


@dataclass(frozen=True)
class AttackLabel:
    """Ground-truth record of one injected attack interval."""

    kind: str
    start_us: int
    end_us: int
    target_id: str
    target_signal: int | None = None  # column within the target ID

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not self.start_us < self.end_us:
            raise ConfigError("attack interval must have start_us < end_us")


class Trace:
    """Time-ordered message sequence with optional attack ground truth.

    ``values`` has shape (n_messages, bus.max_signals); columns at or past a
    message's signal count are NaN. Instances are treated as immutable after
    construction; mutating operations return new traces.
    """

    def __init__(self, config: BusConfig, times_us, id_idx, values, labels, attacks=(), validate=True):
        self.config = config
        self.times_us = np.asarray(times_us, dtype=np.int64)
        self.id_idx = np.asarray(id_idx, dtype=np.int16)
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=bool)
        self.attacks = tuple(attacks)
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.times_us)
        if not (len(self.id_idx) == n and len(self.labels) == n and self.values.shape == (n, self.config.max_signals)):
            raise DataError("trace arrays have inconsistent shapes")
        if n and (self.times_us < 0).any():
            raise DataError("negative timestamps")
        if n and (np.diff(self.times_us) < 0).any():
            raise DataError("timestamps must be non-decreasing")
        if n and ((self.id_idx < 0) | (self.id_idx >= len(self.config.defs))).any():
            raise DataError("id index out of range")
        if n:
            counts = self.config.n_signals[self.id_idx]
            cols = np.arange(self.config.max_signals)
            in_def = cols[None, :] < counts[:, None]
            if np.isnan(self.values[in_def]).any():
                raise DataError("NaN inside a defined signal cell")
            if not np.isnan(self.values[~in_def]).all():
                raise DataError("non-NaN value in an unused signal cell")
        for a in self.attacks:
            if a.target_id not in self.config.id_to_index:
                raise DataError(f"attack targets unknown id {a.target_id!r}")

    def __len__(self):
        return len(self.times_us)

    def __eq__(self, other):
        if not isinstance(other, Trace) or self.config != other.config:
            return False
        same_vals = np.array_equal(self.values, other.values, equal_nan=True)
        return (
            same_vals
            and np.array_equal(self.times_us, other.times_us)
            and np.array_equal(self.id_idx, other.id_idx)
            and np.array_equal(self.labels, other.labels)
            and self.attacks == other.attacks
        )

    def message(self, k: int) -> CanMessage:
        idx = int(self.id_idx[k])
        n = int(self.config.n_signals[idx])
        return CanMessage(
            time_us=int(self.times_us[k]),
            id=self.config.ids[idx],
            values=self.values[k, :n].copy(),
            label=bool(self.labels[k]),
        )

    def messages(self):
        for k in range(len(self)):
            yield self.message(k)

    def replace(self, **kw) -> "Trace":
        args = dict(
            config=self.config,
            times_us=self.times_us,
            id_idx=self.id_idx,
            values=self.values,
            labels=self.labels,
            attacks=self.attacks,
        )
        args.update(kw)
        return Trace(**args, validate=False)

    @property
    def duration_us(self) -> int:
        return int(self.times_us[-1] - self.times_us[0]) if len(self) else 0


def trace_from_messages(config: BusConfig, messages, attacks=()) -> Trace:
    """Build a trace from CanMessage objects (convenience for small inputs)."""
    n = len(messages)
    times = np.empty(n, dtype=np.int64)
    idx = np.empty(n, dtype=np.int16)
    vals = np.full((n, config.max_signals), np.nan)
    labels = np.empty(n, dtype=bool)
    for k, m in enumerate(messages):
        if m.id not in config.id_to_index:
            raise DataError(f"message {k}: unknown id {m.id!r}")
        i = config.id_to_index[m.id]
        expect = int(config.n_signals[i])
        if len(m.values) != expect:
            raise DataError(f"message {k}: id {m.id!r} expects {expect} values, got {len(m.values)}")
        times[k] = m.time_us
        idx[k] = i
        vals[k, :expect] = m.values
        labels[k] = m.label
    return Trace(config, times, idx, vals, labels, attacks)


# ---------------------------------------------------------------------------
# signal-wise 0-1 scaling


@dataclass(frozen=True)
class ScalerParams:
    """Per-global-signal min/max, fitted on training data only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if (self.maximum < self.minimum).any():
            raise DataError("scaler max < min")

    @property
    def n_signals(self) -> int:
        return len(self.minimum)


def fit_scaler(trace: Trace) -> ScalerParams:
    """Per-signal min/max over every occurrence in the trace.

    Raises DataError naming the first signal that never occurs.
    """
    if len(trace) == 0:
        raise DataError("cannot fit scaler on an empty trace")
    cfg = trace.config
    mins = np.full(cfg.total_signals, np.nan)
    maxs = np.full(cfg.total_signals, np.nan)
    for i in range(len(cfg.defs)):
        rows = trace.id_idx == i
        if not rows.any():
            continue
        n = int(cfg.n_signals[i])
        block = trace.values[rows, :n]
        sl = cfg.slice_of(i)
        mins[sl] = block.min(axis=0)
        maxs[sl] = block.max(axis=0)
    missing = np.isnan(mins)
    if missing.any():
        name = cfg.signal_names()[int(np.flatnonzero(missing)[0])]
        raise DataError(f"signal {name} never observed; cannot fit scaler")
    return ScalerParams(mins, maxs)


def scale(values, scaler: ScalerParams, signal_indices) -> np.ndarray:
    """Map raw values to (v - min) / (max - min) for their global signals.

    Degenerate signals (max == min) map to 0.0. Values outside the fitted
    range are not clipped; out-of-range scaled values are informative.
    """
    values = np.asarray(values, dtype=np.float64)
    idx = np.asarray(signal_indices)
    lo = scaler.minimum[idx]
    span = scaler.maximum[idx] - lo
    out = np.zeros_like(values)
    ok = span > 0
    out[ok] = (values[ok] - lo[ok]) / span[ok]
    return out


def unscale(values, scaler: ScalerParams, signal_indices) -> np.ndarray:
    """Inverse of ``scale``; degenerate signals return their constant min."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.asarray(signal_indices)
    lo = scaler.minimum[idx]
    span = scaler.maximum[idx] - lo
    out = lo.astype(np.float64).copy()
    ok = span > 0
    out[ok] = lo[ok] + values[ok] * span[ok]
    return out


def scale_trace(trace: Trace, scaler: ScalerParams) -> Trace:
    """Return a copy of the trace with every signal 0-1 scaled."""
    cfg = trace.config
    if scaler.n_signals != cfg.total_signals:
        raise ConfigError("scaler does not match the bus layout")
    vals = trace.values.copy()
    for i in range(len(cfg.defs)):
        rows = trace.id_idx == i
        if not rows.any():
            continue
        n = int(cfg.n_signals[i])
        sl = cfg.slice_of(i)
        lo = scaler.minimum[sl]
        span = scaler.maximum[sl] - lo
        block = vals[np.ix_(rows, np.arange(n))]
        scaled = np.zeros_like(block)
        ok = span > 0
        scaled[:, ok] = (block[:, ok] - lo[ok]) / span[ok]
        vals[np.ix_(rows, np.arange(n))] = scaled
    return trace.replace(values=vals)


# ---------------------------------------------------------------------------
# CSV serialization

_ATTACK_SIDECAR_SUFFIX = ".attacks"


def _sidecar_path(path) -> Path:
    return Path(str(path) + _ATTACK_SIDECAR_SUFFIX)


def write_csv(trace: Trace, path) -> None:
    """Write a trace as ``label,time_us,id,sig0,...`` with 6-decimal floats.

    Attack intervals, when present, go to a ``<path>.attacks`` sidecar so the
    flat CSV schema stays uniform across clean and attacked traces.
    """
    cfg = trace.config
    cols = {
        "label": trace.labels.astype(np.int8),
        "time_us": trace.times_us,
        "id": np.asarray(cfg.ids, dtype=object)[trace.id_idx] if len(trace) else np.array([], dtype=object),
    }
    for j in range(cfg.max_signals):
        cols[f"sig{j}"] = trace.values[:, j] if len(trace) else np.array([], dtype=np.float64)
    frame = pd.DataFrame(cols)
    frame.to_csv(path, index=False, float_format=f"%.{CSV_DECIMALS}f", na_rep="", lineterminator="\n")
    side = _sidecar_path(path)
    if trace.attacks:
        lines = ["kind,start_us,end_us,target_id,target_signal"]
        for a in trace.attacks:
            sig = "" if a.target_signal is None else str(a.target_signal)
            lines.append(f"{a.kind},{a.start_us},{a.end_us},{a.target_id},{sig}")
        side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif side.exists():
        side.unlink()


def _read_attack_sidecar(path) -> tuple[AttackLabel, ...]:
    side = _sidecar_path(path)
    if not side.exists():
        return ()
    out = []
    for lineno, line in enumerate(side.read_text(encoding="utf-8").splitlines(), start=1):
        if lineno == 1 or not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{side}: line {lineno}: expected 5 fields")
        kind, start, end, tid, sig = parts
        out.append(
            AttackLabel(
                kind=kind,
                start_us=int(start),
                end_us=int(end),
                target_id=tid,
                target_signal=None if sig == "" else int(sig),
            )
        )
    return tuple(out)


def read_csv(path, config: BusConfig) -> Trace:
    """Parse a trace CSV; errors carry 1-based file line numbers."""
    expected = ["label", "time_us", "id"] + [f"sig{j}" for j in range(config.max_signals)]
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file, expected a header row") from None
    if list(frame.columns) != expected:
        raise DataError(f"{path}: bad header, expected {','.join(expected)}")
    n = len(frame)

    def first_bad_line(mask) -> int:
        return int(np.flatnonzero(mask)[0]) + 2  # +1 header, +1 one-based

    labels_raw = frame["label"].to_numpy()
    bad = ~np.isin(labels_raw, ("0", "1"))
    if bad.any():
        raise DataError(f"{path}: line {first_bad_line(bad)}: label must be 0 or 1")
    labels = labels_raw == "1"

    times = pd.to_numeric(frame["time_us"], errors="coerce")
    bad = times.isna().to_numpy() | (times.to_numpy(dtype=np.float64, na_value=np.nan) % 1 != 0)
    if bad.any():
        raise DataError(f"{path}: line {first_bad_line(bad)}: time_us must be an integer")
    times = times.to_numpy(dtype=np.int64)

    ids_raw = frame["id"].to_numpy()
    known = np.isin(ids_raw, config.ids)
    if not known.all():
        k = first_bad_line(~known)
        raise DataError(f"{path}: line {k}: unknown id {ids_raw[k - 2]!r}")
    id_idx = np.array([config.id_to_index[i] for i in ids_raw], dtype=np.int16)

    values = np.full((n, config.max_signals), np.nan)
    for j in range(config.max_signals):
        col_raw = frame[f"sig{j}"].to_numpy()
        empty = col_raw == ""
        col = pd.to_numeric(pd.Series(col_raw).replace("", np.nan), errors="coerce").to_numpy(dtype=np.float64)
        bad = np.isnan(col) & ~empty
        if bad.any():
            raise DataError(f"{path}: line {first_bad_line(bad)}: sig{j} is not a number")
        values[:, j] = col
    if n:
        counts = config.n_signals[id_idx]
        cols = np.arange(config.max_signals)
        in_def = cols[None, :] < counts[:, None]
        bad_rows = (np.isnan(values) & in_def).any(axis=1) | (~np.isnan(values) & ~in_def).any(axis=1)
        if bad_rows.any():
            raise DataError(f"{path}: line {first_bad_line(bad_rows)}: wrong signal count for its id")

    attacks = _read_attack_sidecar(path)
    try:
        return Trace(config, times, id_idx, values, labels, attacks)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# splitting


def split_trace(trace: Trace, fractions) -> list[Trace]:
    """Cut a trace into contiguous time-based pieces.

    Fractions must be positive and sum to 1 (tolerance 1e-9). Boundaries are
    proportional points of the spanned time, so equal fractions give equal
    time lengths; message counts per piece may differ. Attack intervals are
    assigned to the piece containing their start time.
    """
    fractions = [float(f) for f in fractions]
    if len(trace) == 0:
        raise DataError("cannot split an empty trace")
    if not fractions or any(f <= 0 for f in fractions):
        raise ConfigError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions sum to {sum(fractions)!r}, expected 1")
    t0 = int(trace.times_us[0])
    span = int(trace.times_us[-1]) - t0 + 1
    cum = np.cumsum(fractions)
    bounds = [t0] + [t0 + int(round(c * span)) for c in cum]
    bounds[-1] = t0 + span
    pieces = []
    for k in range(len(fractions)):
        lo, hi = bounds[k], bounds[k + 1]
        sel = slice(
            int(np.searchsorted(trace.times_us, lo, side="left")),
            int(np.searchsorted(trace.times_us, hi, side="left")),
        )
        attacks = tuple(a for a in trace.attacks if lo <= a.start_us < hi)
        pieces.append(
            Trace(
                trace.config,
                trace.times_us[sel].copy(),
                trace.id_idx[sel].copy(),
                trace.values[sel].copy(),
                trace.labels[sel].copy(),
                attacks,
                validate=False,
            )
        )
    return pieces
