"""File-driven pipeline stages and the end-to-end reproduce driver.

Every stage reads its inputs from a run directory, writes deterministic
artifacts back into it, and records a manifest entry (input/output hashes
plus the seeds that produced them), so a finished run directory is fully
self-describing and a rerun with the same seed is byte-identical.

Run directory layout:

    gen/       config.txt, train.csv, test.csv
    inject/    plans.txt, normal.csv, plateau.csv, ..., flooding.csv
    models/    <model>.ckpt, <model>.calibrated.ckpt, <model>_loss.csv,
               <model>_calibration_errors.ckpt
    reports/   <model>/<subset>.report.csv
    eval/      <model>_metrics.csv, <model>_curves.csv,
               <model>_intervals_<subset>.csv, summary.txt, summary.csv
    manifest.txt
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from . import baselines, canet, evaluator, scorer, syncan_gen, trainer
from .attack_injector import SUITE_SUBSETS, build_test_suite, plans_to_text
from .checkpoint import load_tensors, save_tensors
from .data_model import (
    BusConfig,
    MessageDef,
    ScalerParams,
    Trace,
    fit_scaler,
    read_csv,
    scale_trace,
    split_trace,
    write_csv,
)
from .errors import ConfigError, DataError
from .profiles import Profile
from .rng import derive_seed

log = logging.getLogger(__name__)

MODEL_KINDS = ("canet", "predictive", "autoencoder")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# model bundles: tensors + bus layout + scaler (+ thresholds after calibration)


def _bus_meta(bus: BusConfig) -> dict:
    return {
        "ids": list(bus.ids),
        "n_signals": [int(n) for n in bus.n_signals],
        "periods_us": [d.nominal_period_us for d in bus.defs],
    }


def _bus_from_meta(meta: dict) -> BusConfig:
    return BusConfig(
        MessageDef(i, int(n), int(p))
        for i, n, p in zip(meta["ids"], meta["n_signals"], meta["periods_us"])
    )


def save_bundle(path, kind, bus, h_scale, tensors, scaler, thresholds=None, extra=None) -> None:
    meta = {
        "format": 1,
        "kind": kind,
        "bus": _bus_meta(bus),
        "h_scale": int(h_scale),
        "scaler_min": [float(v) for v in scaler.minimum],
        "scaler_max": [float(v) for v in scaler.maximum],
        "thresholds": None if thresholds is None else [float(v) for v in thresholds.values],
    }
    if extra:
        meta.update(extra)
    save_tensors(path, meta, tensors)


class Bundle:
    """Loaded model checkpoint: parameters plus scaling and thresholds."""

    def __init__(self, kind, bus, h_scale, params, scaler, thresholds, meta):
        self.kind = kind
        self.bus = bus
        self.h_scale = h_scale
        self.params = params
        self.scaler = scaler
        self.thresholds = thresholds
        self.meta = meta


def load_bundle(path) -> Bundle:
    meta, tensors = load_tensors(path)
    kind = meta.get("kind")
    bus = _bus_from_meta(meta["bus"])
    h_scale = int(meta["h_scale"])
    if kind == "canet":
        params = canet.params_from_tensors(canet.CanetConfig(bus, h_scale), tensors)
    elif kind == "predictive":
        params = baselines.predictive_from_tensors(bus, h_scale, tensors)
    elif kind == "autoencoder":
        params = baselines.autoencoder_from_tensors(bus, tensors)
    else:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    scaler = ScalerParams(np.array(meta["scaler_min"]), np.array(meta["scaler_max"]))
    thresholds = None
    if meta.get("thresholds") is not None:
        thresholds = scorer.ThresholdSet(np.array(meta["thresholds"]))
    return Bundle(kind, bus, h_scale, params, scaler, thresholds, meta)


def model_tensors(kind: str, params) -> dict[str, np.ndarray]:
    if kind == "canet":
        return canet.params_tensors_dict(params)
    if kind == "predictive":
        return baselines.predictive_tensors_dict(params)
    return baselines.autoencoder_tensors_dict(params)


# ---------------------------------------------------------------------------
# manifest helpers


class Manifest:
    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / "manifest.txt"
        self.entries: dict[str, str] = {}
        if self.path.exists():
            from .keyval import load

            self.entries = load(self.path)

    def record(self, stage: str, seeds: dict[str, int], inputs: list, outputs: list) -> None:
        for key, seed in seeds.items():
            self.entries[f"{stage}.seed.{key}"] = str(seed)
        for role, paths in (("input", inputs), ("output", outputs)):
            for p in sorted(str(Path(x).relative_to(self.run_dir)) for x in paths):
                self.entries[f"{stage}.{role}.{p}"] = sha256_file(self.run_dir / p)
        from .keyval import save

        save(self.path, self.entries)


def _read_trace_cached(path, bus: BusConfig, cache: dict | None) -> Trace:
    key = str(path)
    if cache is not None and key in cache:
        return cache[key]
    trace = read_csv(path, bus)
    if cache is not None:
        cache[key] = trace
    return trace


# ---------------------------------------------------------------------------
# stages


def stage_generate(profile: Profile, seed: int, run_dir, cache=None) -> dict:
    """One continuous synthetic recording, split into train and test traces."""
    run_dir = Path(run_dir)
    out = run_dir / "gen"
    out.mkdir(parents=True, exist_ok=True)
    gen_seed = derive_seed(seed, "generate")
    config = syncan_gen.default_config(gen_seed)
    total = profile.train_duration_us + profile.test_duration_us
    full = syncan_gen.generate_trace(config, total)
    train_frac = profile.train_duration_us / total
    train, test = split_trace(full, [train_frac, 1.0 - train_frac])
    (out / "config.txt").write_text(syncan_gen.config_to_text(config), encoding="utf-8")
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    if cache is not None:
        cache[str(out / "train.csv")] = read_csv(out / "train.csv", config.bus)
        cache[str(out / "test.csv")] = read_csv(out / "test.csv", config.bus)
    Manifest(run_dir).record(
        "generate",
        {"master": seed, "generator": gen_seed},
        [],
        [out / "config.txt", out / "train.csv", out / "test.csv"],
    )
    log.info("generated %d train and %d test messages", len(train), len(test))
    return {"train_csv": out / "train.csv", "test_csv": out / "test.csv", "bus": config.bus}


def stage_inject(profile: Profile, seed: int, run_dir, cache=None) -> dict:
    """Six equal-time test subsets: one clean, five attacked."""
    run_dir = Path(run_dir)
    bus = _load_bus(run_dir)
    out = run_dir / "inject"
    out.mkdir(parents=True, exist_ok=True)
    test = _read_trace_cached(run_dir / "gen" / "test.csv", bus, cache)
    train = _read_trace_cached(run_dir / "gen" / "train.csv", bus, cache)
    ranges = fit_scaler(train)
    plans = profile.attack_plans()
    suite_seed = derive_seed(seed, "suite")
    suite = build_test_suite(test, plans, suite_seed, scaler=ranges)
    (out / "plans.txt").write_text(plans_to_text(plans), encoding="utf-8")
    outputs = [out / "plans.txt"]
    for name in SUITE_SUBSETS:
        path = out / f"{name}.csv"
        write_csv(suite[name], path)
        outputs.append(path)
        if suite[name].attacks:
            outputs.append(Path(str(path) + ".attacks"))
        if cache is not None:
            cache[str(path)] = read_csv(path, bus)
    Manifest(run_dir).record(
        "inject",
        {"master": seed, "suite": suite_seed},
        [run_dir / "gen" / "train.csv", run_dir / "gen" / "test.csv"],
        outputs,
    )
    return {"subsets": {name: out / f"{name}.csv" for name in SUITE_SUBSETS}}


def _load_bus(run_dir: Path) -> BusConfig:
    config_path = Path(run_dir) / "gen" / "config.txt"
    if not config_path.exists():
        raise DataError(f"{config_path} not found; run the generate stage first")
    return syncan_gen.config_from_text(config_path.read_text(encoding="utf-8")).bus


def _train_validation_split(trace: Trace, validation_fraction: float) -> tuple[Trace, Trace]:
    return tuple(split_trace(trace, [1.0 - validation_fraction, validation_fraction]))


def stage_train(profile: Profile, model: str, seed: int, run_dir, jobs: int = 1, cache=None) -> dict:
    """Fit the scaler on the training split and train the chosen model on it."""
    if model not in MODEL_KINDS:
        raise ConfigError(f"unknown model {model!r}")
    run_dir = Path(run_dir)
    bus = _load_bus(run_dir)
    out = run_dir / "models"
    out.mkdir(parents=True, exist_ok=True)
    raw = _read_trace_cached(run_dir / "gen" / "train.csv", bus, cache)
    train_part, _ = _train_validation_split(raw, profile.validation_fraction)
    scaler = fit_scaler(train_part)
    scaled = scale_trace(train_part, scaler)
    train_seed = derive_seed(seed, model, "train")
    extra = {"profile": profile.name, "seed": seed}

    if model == "canet":
        config = canet.CanetConfig(bus, profile.h_scale)
        params, _ = canet.init(config, derive_seed(seed, "canet", "init"))
        id_weights = trainer.compute_id_weights(scaled)
        params, history = trainer.train(params, scaled, profile.train_config(train_seed), id_weights)
        records = [(r.epoch, r.mean_weighted_loss) for r in history]
        extra["id_weights"] = [float(w) for w in id_weights.weights]
    elif model == "predictive":
        params, losses = baselines.train_predictive(
            scaled, profile.h_scale, profile.predictive_config(train_seed), jobs=jobs
        )
        records = list(enumerate(losses, start=1))
    else:
        params, losses = baselines.train_autoencoder(
            scaled, profile.autoencoder_config(train_seed), jobs=jobs
        )
        records = list(enumerate(losses, start=1))

    ckpt = out / f"{model}.ckpt"
    save_bundle(ckpt, model, bus, profile.h_scale, model_tensors(model, params), scaler, extra=extra)
    loss_csv = out / f"{model}_loss.csv"
    with open(loss_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, value in records:
            fh.write(f"{epoch},{value:.9g}\n")
    Manifest(run_dir).record(
        f"train.{model}",
        {"master": seed, "train": train_seed},
        [run_dir / "gen" / "train.csv"],
        [ckpt, loss_csv],
    )
    return {"checkpoint": ckpt, "loss_csv": loss_csv}


def stage_calibrate(profile: Profile, model: str, seed: int, run_dir, cache=None) -> dict:
    """Thresholds from the held-out validation tail of the training trace."""
    run_dir = Path(run_dir)
    out = run_dir / "models"
    ckpt_in = out / f"{model}.ckpt"
    if not ckpt_in.exists():
        raise DataError(f"{ckpt_in} not found; run the train stage first")
    bundle = load_bundle(ckpt_in)
    raw = _read_trace_cached(run_dir / "gen" / "train.csv", bundle.bus, cache)
    _, val_part = _train_validation_split(raw, profile.validation_fraction)
    val_scaled = scale_trace(val_part, bundle.scaler)
    thresholds, errors = trainer.calibrate_thresholds(
        bundle.params, val_scaled, warm_up=profile.warm_up, return_errors=True
    )
    ckpt_out = out / f"{model}.calibrated.ckpt"
    save_bundle(
        ckpt_out,
        model,
        bundle.bus,
        bundle.h_scale,
        model_tensors(model, bundle.params),
        bundle.scaler,
        thresholds=thresholds,
        extra={k: bundle.meta[k] for k in ("profile", "seed", "id_weights") if k in bundle.meta}
        | {"warm_up": profile.warm_up},
    )
    errs_path = out / f"{model}_calibration_errors.ckpt"
    save_tensors(
        errs_path,
        {"kind": "calibration-errors", "model": model},
        {f"errors.sig{g}": errors[g] for g in range(bundle.bus.total_signals)},
    )
    Manifest(run_dir).record(
        f"calibrate.{model}",
        {"master": seed},
        [ckpt_in, run_dir / "gen" / "train.csv"],
        [ckpt_out, errs_path],
    )
    return {"checkpoint": ckpt_out, "errors": errs_path}


def stage_score(profile: Profile, model: str, seed: int, run_dir, cache=None) -> dict:
    """Score all six subsets with the calibrated model."""
    run_dir = Path(run_dir)
    ckpt = run_dir / "models" / f"{model}.calibrated.ckpt"
    if not ckpt.exists():
        raise DataError(f"{ckpt} not found; run the calibrate stage first")
    bundle = load_bundle(ckpt)
    if bundle.thresholds is None:
        raise DataError(f"{ckpt}: bundle has no thresholds")
    out = run_dir / "reports" / model
    out.mkdir(parents=True, exist_ok=True)
    params_hash = sha256_file(ckpt)[:16]
    reports = {}
    outputs = []
    inputs = [ckpt]
    for name in SUITE_SUBSETS:
        subset_path = run_dir / "inject" / f"{name}.csv"
        if not subset_path.exists():
            raise DataError(f"{subset_path} not found; run the inject stage first")
        trace = _read_trace_cached(subset_path, bundle.bus, cache)
        scaled = scale_trace(trace, bundle.scaler)
        report = scorer.score_stream(bundle.params, bundle.thresholds, scaled, warm_up=profile.warm_up)
        report.meta = {"model": model, "checkpoint_sha256": params_hash, "subset": name}
        path = out / f"{name}.report.csv"
        scorer.write_report(report, path, bundle.bus)
        reports[name] = path
        outputs.append(path)
        inputs.append(subset_path)
    Manifest(run_dir).record(f"score.{model}", {"master": seed}, inputs, outputs)
    return {"reports": reports}


def stage_evaluate(profile: Profile, model: str, seed: int, run_dir, cache=None) -> evaluator.SuiteSummary:
    """Pointwise metrics and interval curves for one model's reports."""
    run_dir = Path(run_dir)
    bus = _load_bus(run_dir)
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    inputs = []
    for name in SUITE_SUBSETS:
        report_path = run_dir / "reports" / model / f"{name}.report.csv"
        subset_path = run_dir / "inject" / f"{name}.csv"
        if not report_path.exists():
            log.warning("missing report %s; summary will be partial", report_path)
            continue
        report = scorer.read_report(report_path, bus)
        trace = _read_trace_cached(subset_path, bus, cache)
        results[name] = (report, trace)
        inputs += [report_path, subset_path]
    summary = evaluator.report_suite(model, results, out)
    outputs = [out / f"{model}_table.txt", out / f"{model}_metrics.csv", out / f"{model}_curves.csv"]
    outputs += [out / f"{model}_intervals_{name}.csv" for name in summary.curves]
    Manifest(run_dir).record(f"evaluate.{model}", {"master": seed}, inputs, outputs)
    return summary


def stage_report(run_dir, seed: int = 0) -> Path:
    """Merge per-model metrics into one aligned table and combined CSV."""
    run_dir = Path(run_dir)
    out = run_dir / "eval"
    summaries = []
    inputs = []
    for model in MODEL_KINDS:
        path = out / f"{model}_metrics.csv"
        if path.exists():
            summaries.extend(evaluator.read_suite_csv(path))
            inputs.append(path)
    if not summaries:
        raise DataError(f"no metrics CSVs under {out}; run the evaluate stage first")
    table = evaluator.format_table(summaries)
    (out / "summary.txt").write_text(table, encoding="utf-8")
    evaluator.write_suite_csv(summaries, out / "summary.csv")
    Manifest(run_dir).record(
        "report", {"master": seed}, inputs, [out / "summary.txt", out / "summary.csv"]
    )
    return out / "summary.txt"


def reproduce(profile: Profile, seed: int, run_dir, jobs: int = 1, models=MODEL_KINDS) -> Path:
    """Run every stage end to end; returns the summary table path."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    stage_generate(profile, seed, run_dir, cache)
    stage_inject(profile, seed, run_dir, cache)
    for model in models:
        stage_train(profile, model, seed, run_dir, jobs=jobs, cache=cache)
        stage_calibrate(profile, model, seed, run_dir, cache=cache)
        stage_score(profile, model, seed, run_dir, cache=cache)
        stage_evaluate(profile, model, seed, run_dir, cache=cache)
    summary = stage_report(run_dir, seed)
    log.info("summary written to %s", summary)
    return summary
