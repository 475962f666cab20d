"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The desk-scale pipeline is reproduced twice into temporary run directories
(once for the metric criteria, twice for the byte-determinism criterion).
Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from canids import canet, evaluator, gradcheck, pipeline, scorer, syncan_gen, trainer
from canids.data_model import Trace, scale_trace
from canids.profiles import DESK

ACCEPTANCE_SEED = 1

RESULTS: list[str] = []


def check(name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("desk")
    run_a, run_b = base / "run_a", base / "run_b"
    t0 = time.time()
    pipeline.reproduce(DESK, ACCEPTANCE_SEED, run_a)
    elapsed_a = time.time() - t0
    pipeline.reproduce(DESK, ACCEPTANCE_SEED, run_b)
    return {"a": run_a, "b": run_b, "elapsed": elapsed_a}


@pytest.fixture(scope="session")
def desk_metrics(desk_runs):
    summaries = evaluator.read_suite_csv(desk_runs["a"] / "eval" / "summary.csv")
    return {s.model: s.metrics for s in summaries}


@pytest.fixture(scope="session")
def desk_curves(desk_runs):
    import csv

    curves: dict[tuple[str, str], dict[int, float]] = {}
    for model in pipeline.MODEL_KINDS:
        path = desk_runs["a"] / "eval" / f"{model}_curves.csv"
        with open(path) as fh:
            for row in csv.DictReader(fh):
                key = (row["model"], row["subset"])
                curves.setdefault(key, {})[int(row["p_percent"])] = float(row["detected_ratio"])
    return curves


def test_criterion_1_gradient_soundness():
    t0 = time.time()
    reports = gradcheck.run_all(h_scale=5, tolerance=1e-4, samples_per_tensor=200)
    elapsed = time.time() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 120
    check(
        "1 gradient-soundness",
        ok,
        f"max rel err {worst:.2e} over {sum(r.checked_coords for r in reports.values())} coords, {elapsed:.0f}s",
    )


def test_criterion_2_selective_gradient_rule():
    config = canet.CanetConfig(syncan_gen.default_bus(), 5)
    params, state = canet.init(config, seed=7)
    gen = syncan_gen.default_config(11)
    trace = syncan_gen.generate_trace(gen, 40_000_000)
    bus = config.bus
    n_checked = 0
    for k in range(1000):
        i = int(trace.id_idx[k])
        x = trace.values[k, : int(bus.n_signals[i])]
        _, cache = canet.step_arrays(params, state, i, x)
        params.zero_grads()
        canet.backward(params, cache)
        for j, cell in enumerate(params.lstms):
            if j != i:
                assert not cell.W.grad.any() and not cell.b.grad.any()
        outside = np.ones(bus.total_signals, dtype=bool)
        outside[bus.slice_of(i)] = False
        assert not params.W3.grad[outside].any()
        assert not params.b3.grad[outside].any()
        n_checked += 1
    check("2 selective-gradients", n_checked == 1000, f"{n_checked} steps, non-target grads exactly zero")


def test_criterion_3_threshold_semantics(desk_runs):
    from canids.checkpoint import load_tensors

    # nearest-rank guarantee on the real calibration sample
    meta, errs = load_tensors(desk_runs["a"] / "models" / "canet_calibration_errors.ckpt")
    bundle = pipeline.load_bundle(desk_runs["a"] / "models" / "canet.calibrated.ckpt")
    worst_frac = 0.0
    for g in range(bundle.bus.total_signals):
        e = errs[f"errors.sig{g}"]
        frac = float((e > bundle.thresholds.values[g]).mean())
        worst_frac = max(worst_frac, frac)
        assert frac <= 0.0001 + 1e-12
    # exact order-statistic oracle on synthetic lists
    ladder = np.arange(1.0, 10001.0)
    rng = np.random.default_rng(0)
    rng.shuffle(ladder)
    assert trainer.nearest_rank_threshold(ladder) == 10000.0
    big = np.arange(1.0, 20001.0)
    assert trainer.nearest_rank_threshold(big) == float(np.sort(big)[19998])  # rank 19999
    for n in (37, 5000, 12345, 40000):
        e = rng.uniform(size=n)
        rank = min(n, math.floor(0.9999 * n) + 1)
        assert trainer.nearest_rank_threshold(e) == float(np.sort(e)[rank - 1])
        assert (e > trainer.nearest_rank_threshold(e)).sum() < 0.0001 * n + 1
    check("3 threshold-semantics", True, f"worst calibration exceedance {worst_frac:.6f} <= 0.0001")


def test_criterion_4_desk_end_to_end(desk_runs, desk_metrics):
    m = desk_metrics["canet"]
    acc = m["normal"].accuracy
    pl, co, py = m["plateau"], m["continuous"], m["playback"]
    ok = (
        acc >= 0.97
        and pl.tpr >= 0.6
        and pl.tnr >= 0.95
        and py.tpr >= 0.6
        and co.tpr >= 0.35
        and desk_runs["elapsed"] < 3600
    )
    check(
        "4 desk-end-to-end",
        ok,
        f"acc={acc:.4f} plateau={pl.tpr:.3f}/{pl.tnr:.3f} playback={py.tpr:.3f} "
        f"continuous={co.tpr:.3f} runtime={desk_runs['elapsed']:.0f}s",
    )


def test_criterion_5_ordering_vs_baselines(desk_metrics):
    c = desk_metrics["canet"]
    p = desk_metrics["predictive"]
    a = desk_metrics["autoencoder"]
    gaps = []
    ok = True
    for kind in ("plateau", "continuous", "playback"):
        ok &= c[kind].tpr > p[kind].tpr and c[kind].tpr > a[kind].tpr
        gaps.append(f"{kind}: {c[kind].tpr:.3f} vs {p[kind].tpr:.3f}/{a[kind].tpr:.3f}")
    ok &= p["playback"].tpr < 0.15 and a["playback"].tpr < 0.15
    check("5 baseline-ordering", ok, "; ".join(gaps))


def test_criterion_6_interval_criterion(desk_curves):
    canet_pl = desk_curves[("canet", "plateau")][10]
    canet_py = desk_curves[("canet", "playback")][10]
    pred_py = desk_curves[("predictive", "playback")][10]
    ae_py = desk_curves[("autoencoder", "playback")][10]
    monotone = all(
        all(c[p1] >= c[p2] for p1, p2 in zip(sorted(c), sorted(c)[1:]))
        for c in desk_curves.values()
    )
    ok = canet_pl >= 0.8 and canet_py >= 0.8 and pred_py < 0.3 and ae_py < 0.3 and monotone
    check(
        "6 interval-criterion",
        ok,
        f"canet P10 plateau={canet_pl:.2f} playback={canet_py:.2f}; "
        f"baseline playback P10 {pred_py:.2f}/{ae_py:.2f}; monotone={monotone}",
    )


def test_criterion_7_suppress_asymmetry(desk_metrics):
    m = desk_metrics["canet"]
    sup = m["suppress"].tpr
    others = {k: m[k].tpr for k in ("plateau", "continuous", "playback", "flooding")}
    ok = all(sup < v for v in others.values())
    check(
        "7 suppress-asymmetry",
        ok,
        f"suppress={sup:.3f} vs " + " ".join(f"{k}={v:.3f}" for k, v in others.items()),
    )


def test_criterion_8_determinism(desk_runs):
    run_a, run_b = desk_runs["a"], desk_runs["b"]
    differing = []
    n_files = 0
    for p in sorted(run_a.rglob("*")):
        if not p.is_file():
            continue
        q = run_b / p.relative_to(run_a)
        n_files += 1
        if not q.exists() or p.read_bytes() != q.read_bytes():
            differing.append(str(p.relative_to(run_a)))
    reports_ckpts = [
        d for d in differing if d.startswith("reports/") or d.endswith(".ckpt")
    ]
    check(
        "8 determinism",
        not differing,
        f"{n_files} files byte-compared, {len(differing)} differ"
        + (f" (incl. {reports_ckpts[:3]})" if reports_ckpts else ""),
    )


def test_criterion_9_baseline_independence(desk_runs):
    pred = pipeline.load_bundle(desk_runs["a"] / "models" / "predictive.calibrated.ckpt")
    ae = pipeline.load_bundle(desk_runs["a"] / "models" / "autoencoder.calibrated.ckpt")
    bus = pred.bus
    full = pipeline._read_trace_cached(desk_runs["a"] / "inject" / "normal.csv", bus, None)
    short = Trace(
        bus,
        full.times_us[:25_000],
        full.id_idx[:25_000],
        full.values[:25_000],
        full.labels[:25_000],
        validate=False,
    )
    scaled = scale_trace(short, pred.scaler)
    base_pred = scorer.score_stream(pred.params, pred.thresholds, scaled, warm_up=200)
    base_ae = scorer.score_stream(ae.params, ae.thresholds, scaled, warm_up=200)
    rng = np.random.default_rng(99)
    trials = 0
    for trial in range(20):
        use_pred = trial % 2 == 0
        if use_pred:
            unit_id = trial % len(bus.defs)
            keep_cols = {
                int(bus.sig_offset[unit_id]) + j for j in range(int(bus.n_signals[unit_id]))
            }
        else:
            g = trial * 7 % bus.total_signals
            unit_id, _ = bus.signal_owner(g)
            keep_cols = {g}
        vals = scaled.values.copy()
        for i, d in enumerate(bus.defs):
            rows = np.flatnonzero(scaled.id_idx == i)
            for j in range(d.n_signals):
                if int(bus.sig_offset[i]) + j in keep_cols:
                    continue
                vals[rows, j] = vals[rng.permutation(rows), j]
        permuted = Trace(bus, scaled.times_us, scaled.id_idx, vals, scaled.labels, validate=False)
        if use_pred:
            moved = scorer.score_stream(pred.params, pred.thresholds, permuted, warm_up=200)
            rows = base_pred.id_idx == unit_id
            assert np.array_equal(
                base_pred.slice_errors[rows], moved.slice_errors[rows], equal_nan=True
            )
            for j in range(int(bus.n_signals[unit_id])):
                bit = np.uint64(1) << np.uint64(int(bus.sig_offset[unit_id]) + j)
                assert np.array_equal(base_pred.indicators & bit, moved.indicators & bit)
        else:
            moved = scorer.score_stream(ae.params, ae.thresholds, permuted, warm_up=200)
            rows = base_ae.id_idx == unit_id
            col = g - int(bus.sig_offset[unit_id])
            assert np.array_equal(
                base_ae.slice_errors[rows][:, col], moved.slice_errors[rows][:, col], equal_nan=True
            )
            bit = np.uint64(1) << np.uint64(g)
            assert np.array_equal(base_ae.indicators & bit, moved.indicators & bit)
        trials += 1
    check("9 baseline-independence", trials == 20, f"{trials} permutation trials unchanged")


def test_desk_loss_curve_example(desk_runs):
    # training-run oracle: epoch-50 mean loss under 0.2x the epoch-1 loss
    lines = (desk_runs["a"] / "models" / "canet_loss.csv").read_text().splitlines()[1:]
    losses = [float(line.split(",")[1]) for line in lines]
    assert len(losses) == DESK.epochs
    assert losses[49] < 0.2 * losses[0]


@pytest.fixture(scope="session", autouse=True)
def summary_at_exit(tmp_path_factory):
    yield
    if RESULTS:
        out = Path(__file__).resolve().parent.parent / "acceptance_results.txt"
        out.write_text("\n".join(RESULTS) + "\n", encoding="utf-8")
