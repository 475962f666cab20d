"""Unsupervised training loop and threshold calibration.

Each epoch samples ``batch_size`` random start positions, replays
``seq_len_messages`` consecutive messages per element from zeroed recurrent
state, and performs one summed-gradient Adam step per truncated window of
``tbptt_every`` steps. Per-step losses are weighted per ID so that frequent
IDs do not dominate: weight = rarest ID's count share divided by this ID's
share, which equalizes every ID's total contribution per epoch.

Thresholds are the per-signal 99.99% nearest-rank percentile of squared
reconstruction errors on held-out normal data, after a warm-up discard.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import canet
from .data_model import Trace
from .errors import ConfigError, DataError, NumericError
from .nn_core import AdamState, adam_update
from .rng import Xoshiro256StarStar, derive_seed

log = logging.getLogger(__name__)

#: messages processed but not collected at the start of calibration/scoring
DEFAULT_WARM_UP = 1000

#: signals with fewer observations than this calibrate on their max error
MIN_CALIBRATION_SAMPLES = 10_000

PERCENTILE_Q = 0.9999


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 25
    seq_len_messages: int = 5000
    tbptt_every: int = 250
    lr: float = 0.01
    validation_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "seq_len_messages", "tbptt_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.seq_len_messages % self.tbptt_every != 0:
            raise ConfigError("tbptt_every must divide seq_len_messages")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass(frozen=True)
class IdWeights:
    """Per-ID loss scalars; the rarest ID has weight 1."""

    weights: np.ndarray  # by id index

    def by_id(self, bus) -> dict[str, float]:
        return {i: float(w) for i, w in zip(bus.ids, self.weights)}


@dataclass
class EpochRecord:
    epoch: int
    mean_weighted_loss: float
    steps: int


def compute_id_weights(trace: Trace) -> IdWeights:
    """weight_A = min count share / A's count share (so count_A * w_A is equal)."""
    counts = np.bincount(trace.id_idx, minlength=len(trace.config.defs)).astype(np.float64)
    if (counts == 0).any():
        missing = trace.config.ids[int(np.flatnonzero(counts == 0)[0])]
        raise DataError(f"id {missing!r} never occurs; cannot compute weights")
    return IdWeights(counts.min() / counts)


def train(
    params: canet.CanetParams,
    trace: Trace,
    config: TrainConfig,
    id_weights: IdWeights | None = None,
) -> tuple[canet.CanetParams, list[EpochRecord]]:
    """Train in place on a scaled, attack-free trace. Returns (params, history)."""
    n = len(trace)
    if n < config.seq_len_messages:
        raise DataError(
            f"trace has {n} messages, need at least seq_len_messages={config.seq_len_messages}"
        )
    if id_weights is None:
        id_weights = compute_id_weights(trace)
    w = id_weights.weights
    ids = trace.id_idx
    vals = trace.values
    n_sig = params.config.bus.n_signals
    slices = [params.config.bus.slice_of(i) for i in range(len(params.config.bus.defs))]

    rng = Xoshiro256StarStar(derive_seed(config.seed, "train-sampling"))
    adam = AdamState(lr=config.lr)
    tensors = params.tensors()
    params.zero_grads()
    history: list[EpochRecord] = []
    n_windows = config.seq_len_messages // config.tbptt_every

    for epoch in range(config.epochs):
        starts = [rng.integer(n - config.seq_len_messages + 1) for _ in range(config.batch_size)]
        states = [canet.CanetState(params.config) for _ in range(config.batch_size)]
        epoch_loss = 0.0
        for win in range(n_windows):
            for e, start in enumerate(starts):
                st = states[e]
                base = start + win * config.tbptt_every
                caches = []
                weights = []
                window_loss = 0.0
                for t in range(base, base + config.tbptt_every):
                    i = int(ids[t])
                    x = vals[t, : n_sig[i]]
                    y3, cache = canet.step_arrays(params, st, i, x)
                    d = y3[slices[i]] - x
                    window_loss += w[i] * float(d @ d)
                    caches.append(cache)
                    weights.append(w[i])
                if not math.isfinite(window_loss):
                    bad = _locate_nonfinite(caches, slices, base)
                    raise NumericError(
                        f"non-finite loss at epoch {epoch + 1}, step {bad[0]}, "
                        f"id {params.config.bus.ids[bad[1]]!r}"
                    )
                canet.backward_window(params, caches, weights)
                epoch_loss += window_loss
            adam_update(adam, tensors)
            params.version += 1
        steps = config.batch_size * config.seq_len_messages
        history.append(EpochRecord(epoch + 1, epoch_loss / steps, steps))
        log.info("epoch %d/%d mean weighted loss %.6g", epoch + 1, config.epochs, epoch_loss / steps)
    return params, history


def _locate_nonfinite(caches, slices, base):
    for k, cache in enumerate(caches):
        d = cache.y3[slices[cache.id_index]] - cache.x
        if not np.isfinite(d @ d):
            return base + k, cache.id_index
    return base, caches[0].id_index if caches else 0


def nearest_rank_threshold(errors: np.ndarray) -> float:
    """99.99% percentile as the (floor(q*n) + 1)-th order statistic, capped
    at the maximum (1-indexed, no interpolation).

    The +1 makes n = 10000 land on rank 10000 and keeps the exceedance count
    strictly below 0.01% of the sample; for non-integral q*n it coincides
    with the ceil(q*n) rank. Samples smaller than MIN_CALIBRATION_SAMPLES
    always land on the maximum.
    """
    n = len(errors)
    if n == 0:
        raise DataError("no errors to take a percentile of")
    rank = min(n, int(math.floor(PERCENTILE_Q * n)) + 1)
    return float(np.partition(errors, rank - 1)[rank - 1])


def calibrate_thresholds(params, validation_trace: Trace, warm_up: int = DEFAULT_WARM_UP, return_errors: bool = False):
    """Per-signal thresholds from streaming the validation trace.

    Works for any model with a scorer adapter (the shared code path used at
    scoring time). States start from zero; the first ``warm_up`` messages
    are processed but not collected.
    """
    from . import scorer  # adapter registry; deferred to avoid an import cycle

    adapter = scorer.make_adapter(params)
    bus = validation_trace.config
    errors = scorer.collect_errors(adapter, validation_trace, warm_up)
    thresholds = np.empty(bus.total_signals)
    names = bus.signal_names()
    for s in range(bus.total_signals):
        errs = errors[s]
        if len(errs) == 0:
            raise DataError(f"signal {names[s]} never observed in validation data")
        if len(errs) < MIN_CALIBRATION_SAMPLES:
            log.warning(
                "signal %s: only %d validation errors (< %d); threshold falls on the max",
                names[s], len(errs), MIN_CALIBRATION_SAMPLES,
            )
        thresholds[s] = nearest_rank_threshold(errs)
    tset = scorer.ThresholdSet(thresholds)
    if return_errors:
        return tset, errors
    return tset
