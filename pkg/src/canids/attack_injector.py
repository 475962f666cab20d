"""Attack transformations over clean traces, with ground-truth labels.

Five kinds are supported:

* ``plateau``: one signal frozen at its interval-start value or jumped to a
  constant inside the typical (training) range;
* ``continuous``: one signal drifts linearly from its true value by a total
  offset over the interval;
* ``playback``: one signal replaced by its own recording from an earlier,
  clean window;
* ``suppress``: all messages of one ID removed inside the interval;
* ``flooding``: forged constant-valued messages of one ID inserted between
  genuine ones at a frequency multiple; genuine messages keep label 0.

``build_test_suite`` splits a clean test trace into six equal-time subsets:
one untouched and one per attack kind, each receiving a planned number of
disjoint 2-4 s intervals. Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import ATTACK_KINDS, AttackLabel, ScalerParams, Trace, split_trace
from .errors import ConfigError, DataError
from .keyval import format_text, parse_text
from .rng import Xoshiro256StarStar, derive_seed

SUITE_SUBSETS = ("normal", "plateau", "continuous", "playback", "suppress", "flooding")


@dataclass(frozen=True)
class AttackPlan:
    """Per-subset injection plan; value policies use the training ranges."""

    kind: str
    count: int
    min_len_us: int = 2_000_000
    max_len_us: int = 4_000_000
    min_gap_us: int = 1_000_000
    lead_in_us: int = 80_000_000  # no attacks before this offset into the subset
    # plateau: fraction of intervals that freeze instead of jumping
    freeze_fraction: float = 0.3
    # plateau jump / flooding payloads stay inside the central range quantiles
    jump_low_q: float = 0.1
    jump_high_q: float = 0.9
    # continuous: total drift as a fraction of the signal's training range
    drift_fraction: float = 0.3
    # playback: minimum separation between source window and target interval
    playback_min_sep_us: int = 60_000_000
    flood_multiplier: int = 10

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.count < 1:
            raise ConfigError("plan needs count >= 1")
        if not 0 < self.min_len_us < self.max_len_us:
            raise ConfigError("need 0 < min_len_us < max_len_us")
        if self.flood_multiplier < 2:
            raise ConfigError("flood_multiplier must be >= 2")


def default_plans(counts_per_subset: int = 100) -> dict[str, AttackPlan]:
    return {kind: AttackPlan(kind=kind, count=counts_per_subset) for kind in ATTACK_KINDS}


# ---------------------------------------------------------------------------
# single-interval injections


def _occurrences_in(trace: Trace, id_index: int, start_us: int, end_us: int) -> np.ndarray:
    rows = np.flatnonzero(trace.id_idx == id_index)
    t = trace.times_us[rows]
    return rows[(t >= start_us) & (t < end_us)]


def _id_index(trace: Trace, id_name: str) -> int:
    if id_name not in trace.config.id_to_index:
        raise DataError(f"unknown id {id_name!r}")
    return trace.config.id_to_index[id_name]


def _check_signal(trace: Trace, id_index: int, signal: int) -> None:
    if not 0 <= signal < int(trace.config.n_signals[id_index]):
        raise DataError(f"id {trace.config.ids[id_index]!r} has no signal {signal}")


def inject_plateau(trace: Trace, interval: tuple[int, int], id_name: str, signal: int, value: float) -> Trace:
    """Overwrite one signal with a constant inside [start, end)."""
    start, end = interval
    i = _id_index(trace, id_name)
    _check_signal(trace, i, signal)
    rows = _occurrences_in(trace, i, start, end)
    if len(rows) == 0:
        raise DataError(f"no messages of {id_name!r} in [{start}, {end}): empty attack")
    values = trace.values.copy()
    labels = trace.labels.copy()
    values[rows, signal] = value
    labels[rows] = True
    label = AttackLabel("plateau", start, end, id_name, signal)
    return trace.replace(values=values, labels=labels, attacks=trace.attacks + (label,))


def freeze_value(trace: Trace, interval: tuple[int, int], id_name: str, signal: int) -> float:
    """The signal's value at the first in-interval occurrence (freeze policy)."""
    i = _id_index(trace, id_name)
    rows = _occurrences_in(trace, i, interval[0], interval[1])
    if len(rows) == 0:
        raise DataError(f"no messages of {id_name!r} in the interval")
    return float(trace.values[rows[0], signal])


def inject_continuous(trace: Trace, interval: tuple[int, int], id_name: str, signal: int, delta_total: float) -> Trace:
    """Add a linear ramp 0 -> delta_total over the interval to one signal."""
    start, end = interval
    i = _id_index(trace, id_name)
    _check_signal(trace, i, signal)
    rows = _occurrences_in(trace, i, start, end)
    if len(rows) == 0:
        raise DataError(f"no messages of {id_name!r} in [{start}, {end}): empty attack")
    values = trace.values.copy()
    labels = trace.labels.copy()
    p = (trace.times_us[rows] - start) / (end - start)
    values[rows, signal] += p * delta_total
    labels[rows] = True
    label = AttackLabel("continuous", start, end, id_name, signal)
    return trace.replace(values=values, labels=labels, attacks=trace.attacks + (label,))


def inject_playback(
    trace: Trace,
    interval: tuple[int, int],
    id_name: str,
    signal: int,
    source_interval: tuple[int, int],
    source_trace: Trace | None = None,
) -> Trace:
    """Replace one signal with the k-th values of an earlier recorded window."""
    start, end = interval
    i = _id_index(trace, id_name)
    _check_signal(trace, i, signal)
    rows = _occurrences_in(trace, i, start, end)
    if len(rows) == 0:
        raise DataError(f"no messages of {id_name!r} in [{start}, {end}): empty attack")
    donor = source_trace if source_trace is not None else trace
    src_rows = _occurrences_in(donor, donor.config.id_to_index[id_name], source_interval[0], source_interval[1])
    if len(src_rows) < len(rows):
        raise DataError(
            f"playback source holds {len(src_rows)} occurrences, target needs {len(rows)}"
        )
    values = trace.values.copy()
    labels = trace.labels.copy()
    values[rows, signal] = donor.values[src_rows[: len(rows)], signal]
    labels[rows] = True
    label = AttackLabel("playback", start, end, id_name, signal)
    return trace.replace(values=values, labels=labels, attacks=trace.attacks + (label,))


def inject_suppress(trace: Trace, interval: tuple[int, int], id_name: str) -> Trace:
    """Drop every message of the ID inside the interval.

    No per-message labels remain to set; evaluation treats every scored step
    inside a suppress interval as attack-positive.
    """
    start, end = interval
    i = _id_index(trace, id_name)
    rows = _occurrences_in(trace, i, start, end)
    keep = np.ones(len(trace), dtype=bool)
    keep[rows] = False
    label = AttackLabel("suppress", start, end, id_name, None)
    return Trace(
        trace.config,
        trace.times_us[keep],
        trace.id_idx[keep],
        trace.values[keep],
        trace.labels[keep],
        trace.attacks + (label,),
        validate=False,
    )


def inject_flooding(
    trace: Trace,
    interval: tuple[int, int],
    id_name: str,
    multiplier: int,
    values: np.ndarray,
) -> Trace:
    """Insert (multiplier - 1) forged messages, evenly spaced, between each
    consecutive pair of genuine in-interval messages of the ID.

    Forged payloads hold the constant ``values`` vector; genuine messages are
    kept and stay label 0.
    """
    if multiplier < 2:
        raise ConfigError("flooding multiplier must be >= 2")
    start, end = interval
    i = _id_index(trace, id_name)
    n_sig = int(trace.config.n_signals[i])
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n_sig,):
        raise DataError(f"flooding payload needs {n_sig} values")
    rows = _occurrences_in(trace, i, start, end)
    new_times = []
    for a, b in zip(rows[:-1], rows[1:]):
        t_a, t_b = int(trace.times_us[a]), int(trace.times_us[b])
        for j in range(1, multiplier):
            new_times.append(t_a + (t_b - t_a) * j // multiplier)
    label = AttackLabel("flooding", start, end, id_name, None)
    if not new_times:
        return trace.replace(attacks=trace.attacks + (label,))
    m = len(new_times)
    add_times = np.array(new_times, dtype=np.int64)
    add_vals = np.full((m, trace.config.max_signals), np.nan)
    add_vals[:, :n_sig] = values
    times = np.concatenate([trace.times_us, add_times])
    id_idx = np.concatenate([trace.id_idx, np.full(m, i, dtype=np.int16)])
    vals = np.concatenate([trace.values, add_vals])
    labels = np.concatenate([trace.labels, np.ones(m, dtype=bool)])
    # stable sort keeps genuine-before-forged at equal timestamps
    order = np.argsort(times, kind="stable")
    return Trace(
        trace.config,
        times[order],
        id_idx[order],
        vals[order],
        labels[order],
        trace.attacks + (label,),
        validate=False,
    )


# ---------------------------------------------------------------------------
# suite builder


def _draw_intervals(rng: Xoshiro256StarStar, span: tuple[int, int], plan: AttackPlan) -> list[tuple[int, int]]:
    lo = span[0] + plan.lead_in_us
    hi = span[1]
    if hi - lo < plan.count * (plan.max_len_us + plan.min_gap_us):
        raise DataError(
            f"subset span of {(hi - span[0]) / 1e6:.0f}s too short for "
            f"{plan.count} intervals of kind {plan.kind!r}"
        )
    chosen: list[tuple[int, int]] = []
    attempts = 0
    while len(chosen) < plan.count:
        attempts += 1
        if attempts > 1000 * plan.count:
            raise DataError(f"could not place {plan.count} disjoint intervals in the subset")
        length = int(rng.uniform_in(plan.min_len_us, plan.max_len_us))
        start = int(rng.uniform_in(lo, hi - length))
        ok = all(
            start >= e + plan.min_gap_us or start + length + plan.min_gap_us <= s
            for s, e in chosen
        )
        if ok:
            chosen.append((start, start + length))
    return sorted(chosen)


def _jump_constant(rng: Xoshiro256StarStar, plan: AttackPlan, lo: float, hi: float) -> float:
    a = lo + plan.jump_low_q * (hi - lo)
    b = lo + plan.jump_high_q * (hi - lo)
    return rng.uniform_in(a, b)


def build_test_suite(
    trace: Trace,
    plans: dict[str, AttackPlan],
    seed: int,
    scaler: ScalerParams | None = None,
) -> dict[str, Trace]:
    """Six equal-time subsets from a clean trace: one normal, five attacked.

    ``scaler`` provides the training-time signal ranges used by the plateau
    jump and flooding payload policies; without it, ranges are fitted from
    the clean trace itself.
    """
    if sorted(plans) != sorted(ATTACK_KINDS):
        raise ConfigError(f"plans must cover exactly the kinds {ATTACK_KINDS}")
    if trace.attacks:
        raise DataError("test suite must be built from a clean trace")
    ranges = scaler if scaler is not None else None
    if ranges is None:
        from .data_model import fit_scaler

        ranges = fit_scaler(trace)
    subsets = split_trace(trace, [1.0 / 6.0] * 6)
    out: dict[str, Trace] = {"normal": subsets[0]}
    bus = trace.config
    all_signals = [(i, j) for i in range(len(bus.defs)) for j in range(int(bus.n_signals[i]))]
    for k, kind in enumerate(ATTACK_KINDS):
        clean = subsets[k + 1]
        plan = plans[kind]
        rng = Xoshiro256StarStar(derive_seed(seed, "suite", kind))
        span = (int(clean.times_us[0]), int(clean.times_us[-1]) + 1)
        intervals = _draw_intervals(rng, span, plan)
        attacked = clean
        for interval in intervals:
            if kind in ("suppress", "flooding"):
                i = rng.integer(len(bus.defs))
                id_name = bus.ids[i]
            else:
                i, sig = all_signals[rng.integer(len(all_signals))]
                id_name = bus.ids[i]
                g = int(bus.sig_offset[i]) + sig
            if kind == "plateau":
                if rng.uniform() < plan.freeze_fraction:
                    c = freeze_value(attacked, interval, id_name, sig)
                else:
                    c = _jump_constant(rng, plan, ranges.minimum[g], ranges.maximum[g])
                attacked = inject_plateau(attacked, interval, id_name, sig, c)
            elif kind == "continuous":
                width = float(ranges.maximum[g] - ranges.minimum[g])
                delta = plan.drift_fraction * width * (1.0 if rng.uniform() < 0.5 else -1.0)
                attacked = inject_continuous(attacked, interval, id_name, sig, delta)
            elif kind == "playback":
                attacked = _playback_from_earlier(attacked, clean, interval, id_name, sig, plan, rng)
            elif kind == "suppress":
                attacked = inject_suppress(attacked, interval, id_name)
            else:
                payload = np.array(
                    [
                        _jump_constant(
                            rng,
                            plan,
                            ranges.minimum[int(bus.sig_offset[i]) + j],
                            ranges.maximum[int(bus.sig_offset[i]) + j],
                        )
                        for j in range(int(bus.n_signals[i]))
                    ]
                )
                attacked = inject_flooding(attacked, interval, id_name, plan.flood_multiplier, payload)
        out[kind] = attacked
    return out


def _playback_from_earlier(attacked, clean, interval, id_name, sig, plan, rng):
    """Choose a clean source window ending well before the target interval."""
    start, end = interval
    length = end - start
    sub_start = int(clean.times_us[0])
    latest = start - plan.playback_min_sep_us - length
    if latest <= sub_start:
        raise DataError("target interval too early for a separated playback source")
    # retry a few times in case the jittered source window holds fewer messages
    for _ in range(20):
        src_start = int(rng.uniform_in(sub_start, latest))
        src = (src_start, src_start + length + int(0.2 * length))
        try:
            return inject_playback(attacked, interval, id_name, sig, src, source_trace=clean)
        except DataError:
            continue
    raise DataError("could not find a playback source window with enough messages")


# ---------------------------------------------------------------------------
# plan (de)serialization

_PLAN_INT_FIELDS = (
    "count", "min_len_us", "max_len_us", "min_gap_us", "lead_in_us",
    "playback_min_sep_us", "flood_multiplier",
)
_PLAN_FLOAT_FIELDS = ("freeze_fraction", "jump_low_q", "jump_high_q", "drift_fraction")


def plans_to_text(plans: dict[str, AttackPlan]) -> str:
    kv: dict[str, str] = {}
    for kind in ATTACK_KINDS:
        plan = plans[kind]
        for name in _PLAN_INT_FIELDS:
            kv[f"{kind}.{name}"] = str(getattr(plan, name))
        for name in _PLAN_FLOAT_FIELDS:
            kv[f"{kind}.{name}"] = repr(getattr(plan, name))
    return format_text(kv)


def plans_from_text(text: str) -> dict[str, AttackPlan]:
    kv = parse_text(text)
    plans: dict[str, AttackPlan] = {}
    for kind in ATTACK_KINDS:
        args: dict = {"kind": kind}
        for name in _PLAN_INT_FIELDS:
            if f"{kind}.{name}" in kv:
                args[name] = int(kv[f"{kind}.{name}"])
        for name in _PLAN_FLOAT_FIELDS:
            if f"{kind}.{name}" in kv:
                args[name] = float(kv[f"{kind}.{name}"])
        plans[kind] = AttackPlan(**args)
    return plans
