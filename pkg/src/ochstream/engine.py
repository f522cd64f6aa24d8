"""Streaming inference engine with four modes.

SP    single forward pass with the point weights; confidence is the max
      softmax probability (defined as 1.0 for regression).
MU    the Monte-Carlo Bayes reference: mu_samples posterior draws, one
      forward pass each; sample mean / population variance (regression
      variance additionally carries the 1/tau observation noise).
DU    the incremental path below with a point posterior, so only the data
      stream contributes uncertainty.
DBNN  the incremental path with the quantized weight posterior.

The incremental path per step:
  1. draw a weight codevector w* from the posterior histogram;
  2. update the joint input histogram with (d*, w*) using the split-projection
     nearest-neighbor search;
  3. if that update created a codevector, run the network once on it and cache
     the output (never more than one forward pass per step);
  4. find the live input codevector nearest to d* in the data coordinates only
     (exact scan) and look up its cached output y*;
  5. update the output histogram with y*, using the input update's alpha
     clamped to at least ALPHA_FLOOR (counts must stay positive);
  6. summarize the output histogram into the prediction.

Predictions for the incremental modes are the mass-weighted mean of the output
histogram; variance is the mass-weighted per-dimension spread. Classification
confidence averages the per-codevector softmax; regression confidence is
1 / (1 + mean variance), an artifact-defined monotone score in (0, 1].
"""

from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import backend
from .errors import ConfigError, InputError, StateError
from .mlp import (
    EnsemblePosterior,
    WeightSample,
    build_posterior_och,
    forward,
    posterior_mean,
    posterior_sample,
    softmax,
)
from .och import Och, OchParams

MODES = ("SP", "MU", "DU", "DBNN")
ALPHA_FLOOR = 1e-6


@dataclass
class EngineConfig:
    mode: str = "DBNN"
    mu_samples: int = 30
    tau: float = 1.0
    och_x_params: OchParams = field(default_factory=OchParams)
    och_y_params: OchParams = field(default_factory=OchParams)
    och_x1_params: OchParams | None = None
    confidence_threshold: float = 0.9

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mu_samples < 1:
            raise ConfigError(f"mu_samples must be >= 1, got {self.mu_samples}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ConfigError(
                f"confidence_threshold must lie in (0, 1), got {self.confidence_threshold}"
            )
        self.och_x_params.validate()
        self.och_y_params.validate()
        if self.och_x1_params is not None:
            self.och_x1_params.validate()


@dataclass
class PredictiveSummary:
    mean: np.ndarray
    variance: np.ndarray
    class_probs: np.ndarray | None
    confidence: float
    predicted_class: int | None
    dnn_executed: bool = False
    alpha: float = 0.0


def summarize_och_y(och_y, task):
    """Mass-weighted mean/variance (and softmax mixture) of the output histogram."""
    if len(och_y) == 0:
        raise StateError("summarize on an empty output histogram")
    ids, mat = och_y.stacked()
    weights = np.array([och_y.entries[i].count for i in ids]) / och_y.total_count
    mean = weights @ mat
    centered = mat - mean
    variance = weights @ (centered * centered)
    if task == "classification":
        probs = weights @ np.stack([softmax(row) for row in mat])
        predicted = int(np.argmax(probs))
        confidence = float(probs[predicted])
    else:
        probs = None
        predicted = None
        confidence = 1.0 / (1.0 + float(variance.mean()))
    return PredictiveSummary(
        mean=mean,
        variance=variance,
        class_probs=probs,
        confidence=confidence,
        predicted_class=predicted,
    )


def _default_x1_params(mu_samples, seed):
    # Static posterior: no gate churn, forced first-K inserts in
    # build_posterior_och keep one codevector per draw; the small forget rate
    # keeps the codevector masses near-uniform so sampling covers the draws.
    return OchParams(
        k_target=mu_samples,
        lambda_=0.25,
        phi_logit=-math.inf,
        count_floor=1e-12,
        rng_seed=seed,
    )


class Engine:
    """One engine instance per stream; stepping is single-writer."""

    def __init__(self, spec, source, config, *, seed=0, forward_floor=0.0):
        config.validate()
        if config.mode == "MU" and isinstance(source, WeightSample):
            raise ConfigError("MU mode needs a posterior, not a single weight sample")
        self.spec = spec
        self.source = source
        self.config = config
        self.seed = int(seed)
        self.forward_floor = float(forward_floor)
        self.data_dim = spec.input_dim
        self.task = spec.task

        self.forward_passes = 0
        self.cache_hits = 0
        self.alpha_clamped = 0
        self.steps = 0
        self.och_seconds = 0.0
        self.forward_seconds = 0.0

        self.och_x = None
        self.och_y = None
        self.och_x1 = None
        self._cache = {}
        self._point_weights = None
        self._mu_rng = None

        mode = config.mode
        if mode in ("SP", "DU"):
            self._point_weights = posterior_mean(source)
        if mode == "MU":
            self._mu_rng = np.random.default_rng(
                np.random.Philox(key=(self.seed ^ 0x6D75) & (2**128 - 1))
            )
        if mode in ("DU", "DBNN"):
            self._init_histograms()

    def _init_histograms(self):
        config = self.config
        p_count = self.spec.param_count()
        x1_params = config.och_x1_params or _default_x1_params(
            config.mu_samples, self.seed ^ 0x7831
        )
        if config.mode == "DBNN":
            self.och_x1 = build_posterior_och(self.source, config.mu_samples, x1_params)
        else:
            point_params = replace(x1_params, k_target=1, lambda_=0.0, phi_logit=-math.inf)
            self.och_x1 = Och(p_count, point_params)
            self.och_x1.update(posterior_mean(self.source), 1.0)
        self.och_x = Och(self.data_dim + p_count, config.och_x_params)
        self.och_x.enable_split(self.data_dim)
        for cv in self.och_x1.entries.values():
            self.och_x.index.register_weight_sample(cv.id, cv.vector)
        self.och_y = Och(self.spec.output_dim, config.och_y_params)

    # -- forwards ------------------------------------------------------------

    def _forward(self, weights, d):
        t0 = time.perf_counter()
        y = forward(self.spec, weights, d)
        if self.forward_floor > 0.0:
            while time.perf_counter() - t0 < self.forward_floor:
                pass
        self.forward_passes += 1
        self.forward_seconds += time.perf_counter() - t0
        return y

    # -- steps ---------------------------------------------------------------

    def step(self, d):
        d = np.ascontiguousarray(d, dtype=np.float64)
        if d.shape != (self.data_dim,):
            raise InputError(
                f"input has dimension {d.shape}, engine expects ({self.data_dim},)"
            )
        self.steps += 1
        mode = self.config.mode
        if mode == "SP":
            return self._step_sp(d)
        if mode == "MU":
            return self._step_mu(d)
        return self._step_incremental(d)

    def _step_sp(self, d):
        y = self._forward(self._point_weights, d)
        if self.task == "classification":
            probs = softmax(y)
            predicted = int(np.argmax(probs))
            confidence = float(probs[predicted])
        else:
            probs = None
            predicted = None
            confidence = 1.0  # SP carries no regression uncertainty
        return PredictiveSummary(
            mean=y,
            variance=np.zeros_like(y),
            class_probs=probs,
            confidence=confidence,
            predicted_class=predicted,
            dnn_executed=True,
        )

    def _mu_weight_draws(self):
        # finite ensembles are enumerated round-robin (the exact expectation);
        # parametric posteriors are sampled
        if isinstance(self.source, EnsemblePosterior):
            members = self.source.samples
            return [members[i % len(members)] for i in range(self.config.mu_samples)]
        return [
            posterior_sample(self.source, self._mu_rng)
            for _ in range(self.config.mu_samples)
        ]

    def _step_mu(self, d):
        outs = np.stack(
            [self._forward(sample.flat, d) for sample in self._mu_weight_draws()]
        )
        mean = outs.mean(axis=0)
        variance = outs.var(axis=0)  # population variance: plug-in MC estimate
        if self.task == "classification":
            probs = np.stack([softmax(row) for row in outs]).mean(axis=0)
            predicted = int(np.argmax(probs))
            confidence = float(probs[predicted])
        else:
            variance = variance + 1.0 / self.config.tau
            probs = None
            predicted = None
            confidence = 1.0 / (1.0 + float(variance.mean()))
        return PredictiveSummary(
            mean=mean,
            variance=variance,
            class_probs=probs,
            confidence=confidence,
            predicted_class=predicted,
            dnn_executed=True,
        )

    def _step_incremental(self, d):
        if self.och_x is None:
            raise StateError("engine was not initialized with histograms")
        t0 = time.perf_counter()
        w_cv = self.och_x1.sample()
        outcome = self.och_x.update_split(d, w_cv.id, 1.0)
        self.och_seconds += time.perf_counter() - t0

        executed = False
        if outcome.inserted_id is not None:
            cv = self.och_x.entries[outcome.inserted_id]
            y_new = self._forward(cv.vector[self.data_dim :], cv.vector[: self.data_dim])
            self._cache[outcome.inserted_id] = y_new
            executed = True

        t1 = time.perf_counter()
        for gone in outcome.deleted_ids:
            self._cache.pop(gone, None)

        ids, mat = self.och_x.stacked()
        data_mat = np.ascontiguousarray(mat[:, : self.data_dim])
        idx, _ = backend.sq_dist_argmin(data_mat, d)
        star_id = ids[idx]
        y_star = self._cache[star_id]
        if not executed:
            self.cache_hits += 1

        alpha = outcome.alpha
        if alpha < ALPHA_FLOOR:
            alpha = ALPHA_FLOOR
            self.alpha_clamped += 1
        self.och_y.update(y_star, alpha)
        summary = summarize_och_y(self.och_y, self.task)
        self.och_seconds += time.perf_counter() - t1
        summary.dnn_executed = executed
        summary.alpha = alpha
        return summary

    # -- diagnostics -----------------------------------------------------------

    def diagnostics(self):
        return {
            "steps": self.steps,
            "forward_passes": self.forward_passes,
            "cache_hits": self.cache_hits,
            "alpha_clamped": self.alpha_clamped,
            "och_seconds": self.och_seconds,
            "forward_seconds": self.forward_seconds,
        }

    def cache_ids(self):
        return sorted(self._cache)

    # -- snapshot / restore ------------------------------------------------------

    def snapshot(self):
        """JSON snapshot of all mutable state (histograms, cache, counters)."""
        payload = {
            "schema": 1,
            "config": _config_to_dict(self.config),
            "seed": self.seed,
            "forward_floor": self.forward_floor,
            "counters": {
                "forward_passes": self.forward_passes,
                "cache_hits": self.cache_hits,
                "alpha_clamped": self.alpha_clamped,
                "steps": self.steps,
            },
            "och_x": _b64(self.och_x.serialize()) if self.och_x else None,
            "och_y": _b64(self.och_y.serialize()) if self.och_y else None,
            "och_x1": _b64(self.och_x1.serialize()) if self.och_x1 else None,
            "cache": {str(k): [float(v) for v in vec] for k, vec in self._cache.items()},
            "mu_rng": _philox_words(self._mu_rng) if self._mu_rng is not None else None,
        }
        return json.dumps(payload, sort_keys=True).encode("ascii")

    @classmethod
    def restore(cls, spec, source, blob):
        payload = json.loads(blob.decode("ascii"))
        config = _config_from_dict(payload["config"])
        eng = cls.__new__(cls)
        eng.spec = spec
        eng.source = source
        eng.config = config
        eng.seed = payload["seed"]
        eng.forward_floor = payload["forward_floor"]
        eng.data_dim = spec.input_dim
        eng.task = spec.task
        counters = payload["counters"]
        eng.forward_passes = counters["forward_passes"]
        eng.cache_hits = counters["cache_hits"]
        eng.alpha_clamped = counters["alpha_clamped"]
        eng.steps = counters["steps"]
        eng.och_seconds = 0.0
        eng.forward_seconds = 0.0
        eng.och_x = Och.deserialize(_unb64(payload["och_x"])) if payload["och_x"] else None
        eng.och_y = Och.deserialize(_unb64(payload["och_y"])) if payload["och_y"] else None
        eng.och_x1 = Och.deserialize(_unb64(payload["och_x1"])) if payload["och_x1"] else None
        eng._cache = {
            int(k): np.array(v, dtype=np.float64) for k, v in payload["cache"].items()
        }
        eng._point_weights = (
            posterior_mean(source) if config.mode in ("SP", "DU") else None
        )
        eng._mu_rng = None
        if payload["mu_rng"] is not None:
            eng._mu_rng = np.random.default_rng(np.random.Philox(key=0))
            _set_philox_words(eng._mu_rng, payload["mu_rng"])
        if eng.och_x is not None and eng.och_x1 is not None:
            for cv in eng.och_x1.entries.values():
                eng.och_x.index.register_weight_sample(cv.id, cv.vector)
        return eng


def _b64(raw):
    return base64.b64encode(raw).decode("ascii")


def _unb64(text):
    return base64.b64decode(text.encode("ascii"))


def _philox_words(rng):
    st = rng.bit_generator.state
    return (
        [int(w) for w in st["state"]["counter"]]
        + [int(w) for w in st["state"]["key"]]
        + [int(w) for w in st["buffer"]]
        + [int(st["buffer_pos"]), int(st["has_uint32"]), int(st["uinteger"])]
    )


def _set_philox_words(rng, words):
    st = rng.bit_generator.state
    st["state"]["counter"] = np.array(words[0:4], dtype=np.uint64)
    st["state"]["key"] = np.array(words[4:6], dtype=np.uint64)
    st["buffer"] = np.array(words[6:10], dtype=np.uint64)
    st["buffer_pos"] = words[10]
    st["has_uint32"] = words[11]
    st["uinteger"] = words[12]
    rng.bit_generator.state = st


def _och_params_to_dict(p):
    return asdict(p)


def _config_to_dict(config):
    return {
        "mode": config.mode,
        "mu_samples": config.mu_samples,
        "tau": config.tau,
        "och_x_params": _och_params_to_dict(config.och_x_params),
        "och_y_params": _och_params_to_dict(config.och_y_params),
        "och_x1_params": (
            _och_params_to_dict(config.och_x1_params)
            if config.och_x1_params is not None
            else None
        ),
        "confidence_threshold": config.confidence_threshold,
    }


def _config_from_dict(data):
    return EngineConfig(
        mode=data["mode"],
        mu_samples=data["mu_samples"],
        tau=data["tau"],
        och_x_params=OchParams(**data["och_x_params"]),
        och_y_params=OchParams(**data["och_y_params"]),
        och_x1_params=(
            OchParams(**data["och_x1_params"]) if data["och_x1_params"] else None
        ),
        confidence_threshold=data["confidence_threshold"],
    )
