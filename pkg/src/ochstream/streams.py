"""Stream generation and file ingestion.

Generated streams are deterministic per seed. Three kinds:

drifting-gaussian        features = start + t * drift + noise; the mean moves
                         a little every step (the continuity premise of the
                         incremental engine).
two-cluster-alternating  record parity selects one of two cluster centers.
piecewise-constant       the center jumps between seeded levels every
                         segment_len steps.

Labels come from fixed ground-truth functions of the features:
  regression       y = tanh(sum(x))                       (bounded, smooth)
  classification   1 if x . n > 0 else 0 with n the unit diagonal; optional
                   label noise flips the class with probability
                   noise_flip * exp(-(margin / boundary_width)^2), i.e. noise
                   concentrated near the decision boundary.
Exception: two-cluster-alternating labels the parity, which selects the
cluster (and coincides with the ground-truth class of the cluster centers).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

STREAM_KINDS = ("drifting-gaussian", "two-cluster-alternating", "piecewise-constant")


@dataclass
class StreamRecord:
    features: np.ndarray
    label: int | np.ndarray | None = None
    timestamp: int | None = None


def _truth_regression(x):
    return np.array([math.tanh(float(np.sum(x)))])


def _truth_class(x, rng, noise_flip, boundary_width):
    n = np.full(x.shape[0], 1.0 / math.sqrt(x.shape[0]))
    margin = float(x @ n)
    label = 1 if margin > 0 else 0
    if noise_flip > 0.0:
        p_flip = noise_flip * math.exp(-((margin / boundary_width) ** 2))
        if rng.random() < p_flip:
            label = 1 - label
    return label


def gen_stream(kind, params, seed):
    """Materialize a synthetic stream. `params` is a plain dict; unknown keys
    are rejected so config typos fail loudly."""
    if kind not in STREAM_KINDS:
        raise ConfigError(f"unknown stream kind {kind!r}, expected one of {STREAM_KINDS}")
    known = {
        "n_steps", "dim", "noise", "task", "start", "drift",
        "noise_flip", "boundary_width", "cluster_offset", "segment_len", "level_range",
    }
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown stream params {sorted(unknown)}")

    n_steps = int(params.get("n_steps", 1000))
    dim = int(params.get("dim", 2))
    noise = float(params.get("noise", 0.1))
    task = params.get("task", "classification")
    if n_steps < 1 or dim < 1:
        raise ConfigError("n_steps and dim must be positive")
    if task not in ("regression", "classification"):
        raise ConfigError(f"unknown task {task!r}")
    if noise < 0:
        raise ConfigError("noise must be >= 0")

    rng = np.random.default_rng(np.random.Philox(key=int(seed) & (2**128 - 1)))
    noise_flip = float(params.get("noise_flip", 0.0))
    boundary_width = float(params.get("boundary_width", 0.5))

    records = []
    if kind == "drifting-gaussian":
        start = np.asarray(params.get("start", np.zeros(dim)), dtype=np.float64)
        drift = np.asarray(params.get("drift", np.zeros(dim)), dtype=np.float64)
        if start.shape != (dim,) or drift.shape != (dim,):
            raise ConfigError("start and drift must match dim")
        for t in range(n_steps):
            x = start + t * drift + noise * rng.standard_normal(dim)
            records.append(_record(x, t, task, rng, noise_flip, boundary_width))
    elif kind == "two-cluster-alternating":
        offset = float(params.get("cluster_offset", 2.0))
        unit = np.full(dim, 1.0 / math.sqrt(dim))
        for t in range(n_steps):
            # parity selects the cluster; odd steps sit on the positive side so
            # the parity label matches the ground-truth class of the centers
            center = -offset * unit if t % 2 == 0 else offset * unit
            x = center + noise * rng.standard_normal(dim)
            label = t % 2 if task == "classification" else _truth_regression(x)
            records.append(StreamRecord(features=x, label=label, timestamp=t))
    else:  # piecewise-constant
        segment_len = int(params.get("segment_len", 100))
        level_range = float(params.get("level_range", 2.0))
        if segment_len < 1:
            raise ConfigError("segment_len must be >= 1")
        n_segments = (n_steps + segment_len - 1) // segment_len
        levels = rng.uniform(-level_range, level_range, size=(n_segments, dim))
        for t in range(n_steps):
            seg = t // segment_len
            x = levels[seg] + noise * rng.standard_normal(dim)
            records.append(_record(x, t, task, rng, noise_flip, boundary_width))
    return records


def _record(x, t, task, rng, noise_flip, boundary_width):
    if task == "regression":
        label = _truth_regression(x)
    else:
        label = _truth_class(x, rng, noise_flip, boundary_width)
    return StreamRecord(features=x, label=label, timestamp=t)


# -- files -------------------------------------------------------------------


def write_stream(records, path, fmt=None):
    fmt = fmt or _fmt_from_path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            dim = records[0].features.shape[0]
            label_cols = _label_cols(records[0].label)
            writer.writerow([f"f{i}" for i in range(dim)] + label_cols)
            for rec in records:
                row = [repr(float(v)) for v in rec.features]
                row += _label_values(rec.label)
                writer.writerow(row)
    elif fmt == "jsonl":
        with open(path, "w") as fh:
            for rec in records:
                obj = {"features": [float(v) for v in rec.features]}
                if rec.label is not None:
                    obj["label"] = (
                        int(rec.label)
                        if np.isscalar(rec.label) or isinstance(rec.label, int)
                        else [float(v) for v in np.atleast_1d(rec.label)]
                    )
                if rec.timestamp is not None:
                    obj["timestamp"] = int(rec.timestamp)
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
    else:
        raise ConfigError(f"unknown stream format {fmt!r}")


def _label_cols(label):
    if label is None:
        return []
    if np.isscalar(label) or isinstance(label, int):
        return ["label"]
    return [f"label{i}" for i in range(np.atleast_1d(label).shape[0])]


def _label_values(label):
    if label is None:
        return []
    if np.isscalar(label) or isinstance(label, int):
        return [str(int(label))]
    return [repr(float(v)) for v in np.atleast_1d(label)]


def _fmt_from_path(path):
    text = str(path)
    if text.endswith(".csv"):
        return "csv"
    if text.endswith(".jsonl"):
        return "jsonl"
    raise ConfigError(f"cannot infer format from {path!r}; pass fmt explicitly")


def ingest(path, fmt=None, normalize_warmup=0):
    """Lazily yield records from a csv/jsonl file.

    With normalize_warmup=W > 0 the first W records set per-feature z-score
    statistics applied to every record (including the warmup itself); this
    materializes the prefix before yielding.
    """
    fmt = fmt or _fmt_from_path(path)
    if fmt == "csv":
        source = _read_csv(path)
    elif fmt == "jsonl":
        source = _read_jsonl(path)
    else:
        raise ConfigError(f"unknown stream format {fmt!r}")
    if normalize_warmup <= 0:
        yield from source
        return

    warmup = []
    iterator = iter(source)
    for rec in iterator:
        warmup.append(rec)
        if len(warmup) >= normalize_warmup:
            break
    if not warmup:
        return
    feats = np.stack([r.features for r in warmup])
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0.0] = 1.0
    for rec in warmup:
        yield StreamRecord((rec.features - mean) / std, rec.label, rec.timestamp)
    for rec in iterator:
        yield StreamRecord((rec.features - mean) / std, rec.label, rec.timestamp)


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        feat_idx = [i for i, name in enumerate(header) if name.startswith("f")]
        label_idx = [i for i, name in enumerate(header) if name.startswith("label")]
        if not feat_idx:
            raise DataError("header declares no feature columns (f0, f1, ...)", line=1)
        dim = len(feat_idx)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"row has {len(row)} cells, header declares {len(header)}",
                    line=lineno,
                )
            try:
                feats = np.array([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise DataError(f"non-numeric feature: {exc}", line=lineno) from None
            if feats.shape[0] != dim:
                raise DataError("feature dimension drift", line=lineno)
            label = _parse_label([row[i] for i in label_idx], lineno)
            yield StreamRecord(features=feats, label=label, timestamp=lineno - 2)


def _parse_label(cells, lineno):
    if not cells:
        return None
    try:
        if len(cells) == 1:
            value = float(cells[0])
            return int(value) if value.is_integer() else np.array([value])
        return np.array([float(c) for c in cells])
    except ValueError as exc:
        raise DataError(f"non-numeric label: {exc}", line=lineno) from None


def _read_jsonl(path):
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"bad json: {exc}", line=lineno) from None
            if "features" not in obj:
                raise DataError("record lacks 'features'", line=lineno)
            try:
                feats = np.array([float(v) for v in obj["features"]])
            except (TypeError, ValueError) as exc:
                raise DataError(f"non-numeric feature: {exc}", line=lineno) from None
            if dim is None:
                dim = feats.shape[0]
            elif feats.shape[0] != dim:
                raise DataError("feature dimension drift", line=lineno)
            label = obj.get("label")
            if isinstance(label, list):
                label = np.array([float(v) for v in label])
            elif label is not None:
                label = int(label)
            yield StreamRecord(
                features=feats, label=label, timestamp=obj.get("timestamp", lineno - 1)
            )
