"""Selective-prediction metrics and the versioned report schema."""

from __future__ import annotations

import json

import numpy as np
from scipy import stats

REPORT_SCHEMA_VERSION = 1


def accuracy(predicted, labels):
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape[0] == 0:
        return None
    return float(np.mean(predicted == labels))


def selective_accuracy(predicted, labels, confidences, threshold):
    """(coverage, accuracy over the covered subset). Accuracy is None when
    nothing clears the threshold."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    confidences = np.asarray(confidences)
    covered = confidences >= threshold
    coverage = float(np.mean(covered)) if covered.shape[0] else 0.0
    if not covered.any():
        return coverage, None
    return coverage, float(np.mean(predicted[covered] == labels[covered]))


def rmse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rms(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.mean(a**2)))


def variance_rank_correlation(var_a, var_b):
    """Spearman rank correlation between two per-step uncertainty series."""
    rho, _ = stats.spearmanr(np.asarray(var_a), np.asarray(var_b))
    return float(rho)


def report_to_json(report):
    """Canonical JSON encoding: byte-identical for identical report values."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report, path):
    with open(path, "w") as fh:
        fh.write(report_to_json(report))


def write_mode_csv(report, path):
    """One row per mode with the headline metrics, for plotting."""
    modes = report["modes"]
    columns = [
        "mode",
        "accuracy",
        "accuracy_at_threshold",
        "coverage_at_threshold",
        "rmse_vs_label",
        "rmse_vs_oracle",
        "variance_rank_corr_vs_oracle",
        "forward_pass_count",
        "records_per_second",
    ]
    lines = [",".join(columns)]
    for mode in sorted(modes):
        row = modes[mode]
        cells = [mode]
        for col in columns[1:]:
            value = row.get(col)
            cells.append("" if value is None else repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
