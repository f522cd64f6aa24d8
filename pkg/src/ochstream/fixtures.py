"""Committed fixture builders: small analytic predictors plus their streams.

Everything here is deterministic per seed; the acceptance suite and the
`fixture` CLI subcommand are the two consumers. The weight files carry
self-test records, so a written fixture can be cross-checked independently.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .engine import EngineConfig
from .mlp import GaussianPosterior, MlpSpec, save_predictor
from .och import OchParams
from .streams import gen_stream, write_stream

REGRESSION_SEED = 20240
CLASSIFICATION_SEED = 31337


def _flat_layout(spec):
    """Offsets of each layer's weight/bias block inside the flat vector."""
    sizes = spec.layer_sizes
    blocks = []
    off = 0
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        blocks.append(("w", i, off, off + n_in * n_out, (n_out, n_in)))
        off += n_in * n_out
        blocks.append(("b", i, off, off + n_out, (n_out,)))
        off += n_out
    return blocks, off


def regression_fixture():
    """Drifting 2-d regression stream with a relu net and an output-layer
    Gaussian posterior, so model uncertainty grows along the drift path.

    Returns (spec, posterior, records, config).
    """
    spec = MlpSpec((2, 16, 1), "relu", "regression")
    rng = np.random.default_rng(np.random.Philox(key=REGRESSION_SEED))
    blocks, total = _flat_layout(spec)
    mean = np.zeros(total)
    logvar = np.full(total, -np.inf)  # exact zero variance unless overridden
    for kind, layer, lo, hi, shape in blocks:
        if kind == "w":
            scale = 1.0 if layer == 0 else 0.45
            mean[lo:hi] = scale * rng.standard_normal(hi - lo)
        else:
            mean[lo:hi] = 0.1 * rng.standard_normal(hi - lo)
        if layer == len(spec.layer_sizes) - 2:  # output layer carries the noise
            logvar[lo:hi] = math.log(0.04**2)
    posterior = GaussianPosterior(mean, logvar)

    records = gen_stream(
        "drifting-gaussian",
        {
            "n_steps": 2000,
            "dim": 2,
            "task": "regression",
            "start": [0.08, 0.06],
            "drift": [0.00105, 0.00085],
            "noise": 0.02,
        },
        seed=REGRESSION_SEED + 1,
    )
    # output histogram with a longer memory than the input one: the predictive
    # mixture has to average over weight draws, not just echo the newest output
    config = EngineConfig(
        mode="DBNN",
        mu_samples=30,
        tau=1.0,
        och_x_params=OchParams(),
        och_y_params=OchParams(k_target=15, lambda_=0.3, phi_logit=1.0),
        confidence_threshold=0.9,
    )
    return spec, posterior, records, config


def classification_fixture():
    """Noisy-boundary 2-d classification stream crossing the class boundary.

    The linear logit net is confident in proportion to the boundary margin;
    the posterior jitters the boundary, so sampling-based modes lose
    confidence exactly where the labels are noisy.

    Returns (spec, posterior, records, config).
    """
    spec = MlpSpec((2, 2), "identity", "classification")
    gain = 6.0
    n = np.array([1.0, 1.0]) / math.sqrt(2.0)
    w = np.vstack([-gain * n, gain * n])  # logits (-g*m, g*m), m = x . n; class 1 iff m > 0
    mean = np.concatenate([w.reshape(-1), np.zeros(2)])
    logvar = np.concatenate(
        [np.full(4, math.log(1.6**2)), np.full(2, math.log(0.4**2))]
    )
    posterior = GaussianPosterior(mean, logvar)

    records = gen_stream(
        "drifting-gaussian",
        {
            "n_steps": 3000,
            "dim": 2,
            "task": "classification",
            "start": [-1.25, -1.25],
            "drift": [0.000834, 0.000834],
            "noise": 0.45,
            "noise_flip": 0.35,
            "boundary_width": 0.35,
        },
        seed=CLASSIFICATION_SEED + 1,
    )
    config = EngineConfig(
        mode="DBNN",
        mu_samples=30,
        tau=1.0,
        och_x_params=OchParams(),
        och_y_params=OchParams(k_target=15, lambda_=0.3, phi_logit=1.0),
        confidence_threshold=0.9,
    )
    return spec, posterior, records, config


def sweep_fixture():
    """Piecewise-constant classification stream for the hyperparameter sweep.

    Segment jumps stress the output histogram's forgetting; the committed
    sweep checks the quality trend over its K and forget-rate grid on this
    stream. Returns (spec, posterior, records, config) with the engine at the
    stock configuration.
    """
    spec, posterior, _, _ = classification_fixture()
    records = gen_stream(
        "piecewise-constant",
        {
            "n_steps": 1200,
            "dim": 2,
            "task": "classification",
            "segment_len": 20,
            "noise": 0.3,
            "level_range": 1.5,
        },
        seed=CLASSIFICATION_SEED + 2,
    )
    config = EngineConfig(
        mode="DBNN",
        mu_samples=30,
        tau=1.0,
        och_x_params=OchParams(),
        och_y_params=OchParams(),
        confidence_threshold=0.9,
    )
    return spec, posterior, records, config


def write_fixture(which, out_dir):
    """Materialize a fixture bundle (weight file + stream csv) on disk."""
    os.makedirs(out_dir, exist_ok=True)
    if which == "regression-drift":
        spec, posterior, records, _ = regression_fixture()
    elif which == "classification-boundary":
        spec, posterior, records, _ = classification_fixture()
    else:
        raise ValueError(f"unknown fixture {which!r}")
    weight_path = os.path.join(out_dir, f"{which}.mlpw")
    stream_path = os.path.join(out_dir, f"{which}.csv")
    save_predictor(weight_path, spec, posterior)
    write_stream(records, stream_path)
    return weight_path, stream_path
