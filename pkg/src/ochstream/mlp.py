"""Deterministic dense network plus weight posteriors, loadable from files.

Weight file format (documented byte-exactly):

    ASCII header of "key: value" lines, terminated by one blank line, then a
    raw little-endian float64 payload.

    required header keys
        format           MLPW1
        layers           comma-separated layer widths, e.g. 2,16,1
        activation       relu | tanh | identity   (hidden layers; output linear)
        task             regression | classification
        kind             weights | ensemble | gaussian
        payload_count    number of f64 values in the payload
        selftest_input   space-separated repr() floats, one per input unit
        selftest_output  space-separated repr() floats, one per output unit
    optional
        ensemble_size    member count (required when kind=ensemble)

    payload layout (per flat weight vector: layer-major, each layer the
    weight matrix row-major (out x in) followed by the bias)
        weights    one flat vector
        ensemble   ensemble_size flat vectors back to back
        gaussian   mean vector then per-parameter log-variance vector

The self-test record is checked on load: the forward pass of the reference
weights (the sample itself, the ensemble mean, or the Gaussian mean) on
selftest_input must reproduce selftest_output to 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, FormatError, InputError
from .och import Och

_ACT_CODES = {
    "relu": backend.ACT_RELU,
    "tanh": backend.ACT_TANH,
    "identity": backend.ACT_IDENTITY,
}

_FORMAT_TAG = "MLPW1"


@dataclass
class MlpSpec:
    layer_sizes: tuple
    activation: str
    task: str

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ConfigError("network needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in _ACT_CODES:
            raise ConfigError(
                f"unknown activation {self.activation!r}, expected one of {sorted(_ACT_CODES)}"
            )
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    def param_count(self):
        return sum(
            self.layer_sizes[i] * self.layer_sizes[i + 1] + self.layer_sizes[i + 1]
            for i in range(len(self.layer_sizes) - 1)
        )


@dataclass
class WeightSample:
    id: str
    flat: np.ndarray


class EnsemblePosterior:
    def __init__(self, samples):
        samples = list(samples)
        if not samples:
            raise ConfigError("ensemble posterior needs at least one member")
        n = samples[0].flat.shape[0]
        if any(s.flat.shape != (n,) for s in samples):
            raise ConfigError("ensemble members have mismatched lengths")
        self.samples = samples

    @property
    def dim(self):
        return self.samples[0].flat.shape[0]

    def sample(self, rng):
        idx = int(rng.integers(0, len(self.samples)))
        return self.samples[idx]

    def mean_weights(self):
        return np.mean(np.stack([s.flat for s in self.samples]), axis=0)


class GaussianPosterior:
    def __init__(self, mean, logvar):
        mean = np.asarray(mean, dtype=np.float64)
        logvar = np.asarray(logvar, dtype=np.float64)
        if mean.shape != logvar.shape or mean.ndim != 1:
            raise ConfigError("gaussian posterior needs matching 1-d mean and logvar")
        if not np.all(np.isfinite(mean)):
            raise ConfigError("gaussian posterior mean must be finite")
        if np.any(np.isnan(logvar)) or np.any(logvar == math.inf):
            raise ConfigError("gaussian posterior logvar must not be NaN or +inf")
        self.mean = mean
        self.logvar = logvar
        self._sample_counter = 0

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, rng):
        eps = rng.standard_normal(self.dim)
        flat = self.mean + np.exp(0.5 * self.logvar) * eps
        self._sample_counter += 1
        return WeightSample(id=f"g{self._sample_counter}", flat=flat)

    def mean_weights(self):
        return self.mean.copy()


def posterior_sample(posterior, rng):
    """One weight draw; deterministic per generator state."""
    return posterior.sample(rng)


def posterior_mean(source):
    """Point weights for SP/DU: the sample itself or the posterior mean."""
    if isinstance(source, WeightSample):
        return source.flat.copy()
    return source.mean_weights()


def forward(spec, flat_weights, d):
    """nn(d, w): deterministic forward pass, logits for classification."""
    flat = flat_weights.flat if isinstance(flat_weights, WeightSample) else flat_weights
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    if flat.shape != (spec.param_count(),):
        raise InputError(
            f"flat weights have {flat.shape[0]} values, spec needs {spec.param_count()}"
        )
    d = np.ascontiguousarray(d, dtype=np.float64)
    if d.shape != (spec.input_dim,):
        raise InputError(
            f"input has dimension {d.shape}, network expects ({spec.input_dim},)"
        )
    sizes = np.asarray(spec.layer_sizes, dtype=np.int64)
    return backend.mlp_forward(flat, sizes, _ACT_CODES[spec.activation], d)


def softmax(logits):
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


# -- weight files ------------------------------------------------------------


def _format_floats(vec):
    return " ".join(repr(float(v)) for v in vec)


def _parse_floats(text, key):
    try:
        return np.array([float(tok) for tok in text.split()], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"field {key!r} holds a non-numeric value: {exc}") from None


def save_predictor(path, spec, payload, *, selftest_input=None):
    """Write a weight file. `payload` is a WeightSample, EnsemblePosterior, or
    GaussianPosterior. The self-test probe defaults to a fixed ramp vector."""
    p = spec.param_count()
    if isinstance(payload, WeightSample):
        kind, flats = "weights", [payload.flat]
    elif isinstance(payload, EnsemblePosterior):
        kind, flats = "ensemble", [s.flat for s in payload.samples]
    elif isinstance(payload, GaussianPosterior):
        kind, flats = "gaussian", [payload.mean, payload.logvar]
    else:
        raise ConfigError(f"cannot save object of type {type(payload).__name__}")
    for flat in flats:
        if flat.shape != (p,):
            raise ConfigError(
                f"flat vector has {flat.shape[0]} values, spec needs {p}"
            )

    if selftest_input is None:
        selftest_input = np.linspace(-1.0, 1.0, spec.input_dim)
    reference = flats[0] if kind != "ensemble" else np.mean(np.stack(flats), axis=0)
    selftest_output = forward(spec, reference, selftest_input)

    payload_arr = np.concatenate(flats).astype("<f8")
    lines = [
        f"format: {_FORMAT_TAG}",
        "layers: " + ",".join(str(s) for s in spec.layer_sizes),
        f"activation: {spec.activation}",
        f"task: {spec.task}",
        f"kind: {kind}",
        f"payload_count: {payload_arr.shape[0]}",
        f"selftest_input: {_format_floats(selftest_input)}",
        f"selftest_output: {_format_floats(selftest_output)}",
    ]
    if kind == "ensemble":
        lines.insert(5, f"ensemble_size: {len(flats)}")
    header = "\n".join(lines) + "\n\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload_arr.tobytes())


def load_predictor(path):
    """Parse a weight file -> (MlpSpec, WeightSample | posterior)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError("missing blank line between header and payload")
    try:
        header_text = raw[:sep].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"header is not ASCII: {exc}") from None
    fields = {}
    for lineno, line in enumerate(header_text.splitlines(), start=1):
        if ":" not in line:
            raise FormatError(f"header line {lineno} is not 'key: value': {line!r}")
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()

    if fields.get("format") != _FORMAT_TAG:
        raise FormatError(
            f"format tag {fields.get('format')!r}, this build reads {_FORMAT_TAG!r}"
        )
    for key in ("layers", "activation", "task", "kind", "payload_count",
                "selftest_input", "selftest_output"):
        if key not in fields:
            raise FormatError(f"missing header field {key!r}")
    try:
        layer_sizes = tuple(int(tok) for tok in fields["layers"].split(","))
    except ValueError:
        raise FormatError(f"unparseable layers field {fields['layers']!r}") from None
    try:
        spec = MlpSpec(layer_sizes, fields["activation"], fields["task"])
    except ConfigError as exc:
        raise FormatError(str(exc)) from None

    payload = np.frombuffer(raw, dtype="<f8", offset=sep + 2)
    declared = int(fields["payload_count"])
    if payload.shape[0] != declared:
        raise FormatError(
            f"payload holds {payload.shape[0]} f64 values, header declares {declared}",
            offset=sep + 2,
        )
    p = spec.param_count()
    kind = fields["kind"]
    if kind == "weights":
        if payload.shape[0] != p:
            raise FormatError(f"payload holds {payload.shape[0]} weights, expected {p}")
        loaded = WeightSample(id="w0", flat=payload.copy())
        reference = loaded.flat
    elif kind == "ensemble":
        if "ensemble_size" not in fields:
            raise FormatError("kind=ensemble requires the ensemble_size field")
        m = int(fields["ensemble_size"])
        if m < 1 or payload.shape[0] != m * p:
            raise FormatError(
                f"payload holds {payload.shape[0]} weights, expected {m} x {p}"
            )
        samples = [
            WeightSample(id=f"e{i}", flat=payload[i * p : (i + 1) * p].copy())
            for i in range(m)
        ]
        loaded = EnsemblePosterior(samples)
        reference = loaded.mean_weights()
    elif kind == "gaussian":
        if payload.shape[0] != 2 * p:
            raise FormatError(
                f"payload holds {payload.shape[0]} values, expected 2 x {p}"
            )
        loaded = GaussianPosterior(payload[:p].copy(), payload[p:].copy())
        reference = loaded.mean
    else:
        raise FormatError(f"unknown kind {kind!r}")

    probe = _parse_floats(fields["selftest_input"], "selftest_input")
    expected = _parse_floats(fields["selftest_output"], "selftest_output")
    if probe.shape != (spec.input_dim,) or expected.shape != (spec.output_dim,):
        raise FormatError("self-test record shape does not match the layer sizes")
    got = forward(spec, reference, probe)
    if not np.allclose(got, expected, rtol=0.0, atol=1e-9):
        raise FormatError(
            f"self-test failed: forward produced {got!r}, file records {expected!r}"
        )
    return spec, loaded


# -- posterior histogram ------------------------------------------------------


def build_posterior_och(posterior, m_samples, params, *, lsh_params=None):
    """Quantize a weight posterior into a codevector histogram.

    Draws m_samples weights (stream seeded by params.rng_seed) and feeds each
    through the histogram update with count 1. The insertion gate is forced
    open for the first k_target updates so small-sample quantizations cannot
    stochastically collapse to a single codevector.
    """
    if m_samples < 1:
        raise ConfigError(f"m_samples must be >= 1, got {m_samples}")
    och = Och(posterior_dim(posterior), params, lsh_params=lsh_params)
    rng = np.random.default_rng(
        np.random.Philox(key=(params.rng_seed ^ 0x9E3779B9) & (2**128 - 1))
    )
    for i in range(m_samples):
        w = posterior_sample(posterior, rng) if not isinstance(posterior, WeightSample) else posterior
        och.update(w.flat, 1.0, force_insert=i < params.k_target)
    return och


def posterior_dim(source):
    if isinstance(source, WeightSample):
        return source.flat.shape[0]
    return source.dim
