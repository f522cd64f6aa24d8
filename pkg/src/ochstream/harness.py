"""Experiment harness: mode comparison runs, throughput benchmarks, sweeps.

`run_eval` produces the versioned MetricsReport. Timing fields in eval reports
are null by design: identical (seed, config, stream) runs must produce
byte-identical JSON, so wall-clock numbers only appear in `run_bench` output.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import replace

import numpy as np

from . import metrics
from .engine import Engine, MODES, _config_to_dict
from .errors import ConfigError, OchstreamError

_TIMING_FIELDS = ("records_per_second", "wall_seconds", "och_fraction")


def derive_seed(base, *tags):
    """Stable 63-bit seed from a base seed and string tags."""
    text = "|".join([str(base), *map(str, tags)])
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def engine_for_mode(spec, source, config, mode, base_seed, forward_floor=0.0):
    """Engine with per-mode derived RNG seeds so modes never share draws."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    cfg = replace(
        config,
        mode=mode,
        och_x_params=replace(
            config.och_x_params, rng_seed=derive_seed(base_seed, mode, "x")
        ),
        och_y_params=replace(
            config.och_y_params, rng_seed=derive_seed(base_seed, mode, "y")
        ),
        och_x1_params=(
            replace(config.och_x1_params, rng_seed=derive_seed(base_seed, mode, "x1"))
            if config.och_x1_params is not None
            else None
        ),
    )
    return Engine(
        spec,
        source,
        cfg,
        seed=derive_seed(base_seed, mode, "engine"),
        forward_floor=forward_floor,
    )


def _run_mode(spec, source, config, mode, base_seed, records, forward_floor=0.0):
    engine = engine_for_mode(spec, source, config, mode, base_seed, forward_floor)
    checksum = hashlib.sha256()
    means, variances, confidences, predicted = [], [], [], []
    t0 = time.perf_counter()
    for rec in records:
        feats = np.ascontiguousarray(rec.features, dtype=np.float64)
        checksum.update(feats.astype("<f8").tobytes())
        summary = engine.step(feats)
        means.append(summary.mean)
        variances.append(float(summary.variance.mean()))
        confidences.append(summary.confidence)
        predicted.append(summary.predicted_class)
    wall = time.perf_counter() - t0
    return {
        "engine": engine,
        "means": np.stack(means) if means else np.empty((0,)),
        "variances": np.array(variances),
        "confidences": np.array(confidences),
        "predicted": predicted,
        "checksum": checksum.hexdigest(),
        "wall": wall,
    }


def _stream_labels(records, task):
    labels = [rec.label for rec in records]
    if any(lbl is None for lbl in labels):
        return None
    if task == "classification":
        return np.array([int(lbl) for lbl in labels])
    return np.stack([np.atleast_1d(np.asarray(lbl, dtype=np.float64)) for lbl in labels])


def run_eval(records, spec, source, config, modes=MODES, base_seed=0):
    """Run each requested mode over the same record sequence and report.

    A mode failure is recorded under its entry and does not abort the rest.
    """
    records = list(records)
    if not records:
        raise ConfigError("empty stream")
    report = {
        "schema_version": metrics.REPORT_SCHEMA_VERSION,
        "kind": "eval",
        "base_seed": base_seed,
        "config": _echo_config(config),
        "stream": {
            "n_records": len(records),
            "dim": int(records[0].features.shape[0]),
            "task": spec.task,
        },
        "modes": {},
    }
    outputs = {}
    for mode in modes:
        try:
            outputs[mode] = _run_mode(spec, source, config, mode, base_seed, records)
        except OchstreamError as exc:
            report["modes"][mode] = {"error": str(exc)}

    labels = _stream_labels(records, spec.task)
    threshold = config.confidence_threshold
    for mode, out in outputs.items():
        diag = out["engine"].diagnostics()
        entry = {
            "forward_pass_count": diag["forward_passes"],
            "cache_hits": diag["cache_hits"],
            "alpha_clamped": diag["alpha_clamped"],
            "features_checksum": out["checksum"],
            "mean_confidence": float(out["confidences"].mean()),
            "mean_variance": float(out["variances"].mean()),
            "accuracy": None,
            "accuracy_at_threshold": None,
            "coverage_at_threshold": None,
            "rmse_vs_label": None,
            "rmse_vs_oracle": None,
            "variance_rank_corr_vs_oracle": None,
        }
        for field in _TIMING_FIELDS:
            entry[field] = None
        if labels is not None and spec.task == "classification":
            preds = np.array([-1 if p is None else p for p in out["predicted"]])
            entry["accuracy"] = metrics.accuracy(preds, labels)
            coverage, acc_t = metrics.selective_accuracy(
                preds, labels, out["confidences"], threshold
            )
            entry["coverage_at_threshold"] = coverage
            entry["accuracy_at_threshold"] = acc_t
        elif labels is not None:
            entry["rmse_vs_label"] = metrics.rmse(out["means"], labels)
            coverage = float(np.mean(out["confidences"] >= threshold))
            entry["coverage_at_threshold"] = coverage
        report["modes"][mode] = entry

    if "MU" in outputs:
        mu = outputs["MU"]
        report["oracle"] = {
            "mu_spread_rms": float(np.sqrt(np.mean(mu["variances"]))),
            "mu_mean_dev_from_sp_rms": (
                metrics.rmse(mu["means"], outputs["SP"]["means"])
                if "SP" in outputs
                else None
            ),
        }
        for mode in ("DU", "DBNN"):
            if mode in outputs:
                entry = report["modes"][mode]
                entry["rmse_vs_oracle"] = metrics.rmse(outputs[mode]["means"], mu["means"])
                entry["variance_rank_corr_vs_oracle"] = metrics.variance_rank_correlation(
                    outputs[mode]["variances"], mu["variances"]
                )
    return report


def run_bench(records, spec, source, config, modes=MODES, forward_floor=0.0, base_seed=0):
    """Throughput table: records/s per mode plus the histogram-overhead share."""
    records = list(records)
    if not records:
        raise ConfigError("empty stream")
    table = {
        "schema_version": metrics.REPORT_SCHEMA_VERSION,
        "kind": "bench",
        "base_seed": base_seed,
        "forward_floor_seconds": forward_floor,
        "config": _echo_config(config),
        "stream": {"n_records": len(records)},
        "modes": {},
    }
    for mode in modes:
        try:
            out = _run_mode(
                spec, source, config, mode, base_seed, records, forward_floor
            )
        except OchstreamError as exc:
            table["modes"][mode] = {"error": str(exc)}
            continue
        diag = out["engine"].diagnostics()
        wall = out["wall"]
        table["modes"][mode] = {
            "records_per_second": len(records) / wall,
            "wall_seconds": wall,
            "forward_pass_count": diag["forward_passes"],
            "forward_seconds": diag["forward_seconds"],
            "och_seconds": diag["och_seconds"],
            "och_fraction": diag["och_seconds"] / wall,
            "forward_passes_per_record": diag["forward_passes"] / len(records),
        }
    return table


def run_sweep(records, spec, source, config, grid, metric="accuracy", seeds=(0,)):
    """DBNN quality across output-histogram hyperparameters.

    `grid` is an iterable of dicts with any of k_target / lambda_ / phi_logit
    overriding the output histogram's parameters. Needs MU runs only when the
    metric references the oracle. Per-point failures are recorded and the
    sweep continues.
    """
    records = list(records)
    known_metrics = ("accuracy", "accuracy_at_threshold", "neg_rmse_vs_label", "neg_rmse_vs_oracle")
    if metric not in known_metrics:
        raise ConfigError(f"metric must be one of {known_metrics}, got {metric!r}")
    labels = _stream_labels(records, spec.task)
    if metric in ("accuracy", "accuracy_at_threshold", "neg_rmse_vs_label") and labels is None:
        raise ConfigError(f"metric {metric!r} needs a labeled stream")

    rows = []
    for seed in seeds:
        mu_out = None
        if metric == "neg_rmse_vs_oracle":
            mu_out = _run_mode(spec, source, config, "MU", seed, records)
        for point in grid:
            och_y = replace(config.och_y_params, **point)
            cfg = replace(config, och_y_params=och_y)
            row = {
                "k_target": och_y.k_target,
                "lambda": och_y.lambda_,
                "phi_logit": och_y.phi_logit,
                "seed": seed,
                "metric": metric,
            }
            try:
                out = _run_mode(spec, source, cfg, "DBNN", seed, records)
                row["value"] = _sweep_metric(out, metric, labels, config, mu_out)
            except OchstreamError as exc:
                row["value"] = None
                row["error"] = str(exc)
            rows.append(row)
    return rows


def _sweep_metric(out, metric, labels, config, mu_out):
    if metric == "neg_rmse_vs_oracle":
        return -metrics.rmse(out["means"], mu_out["means"])
    if metric == "neg_rmse_vs_label":
        return -metrics.rmse(out["means"], labels)
    preds = np.array([-1 if p is None else p for p in out["predicted"]])
    if metric == "accuracy":
        return metrics.accuracy(preds, labels)
    _, acc_t = metrics.selective_accuracy(
        preds, labels, out["confidences"], config.confidence_threshold
    )
    return acc_t


def sweep_rows_to_csv(rows, path):
    columns = ["k_target", "lambda", "phi_logit", "seed", "metric", "value", "error"]
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            value = row.get(col)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _echo_config(config):
    return _config_to_dict(config)
