"""Streaming approximate Bayesian inference over online codevector histograms."""

from .engine import Engine, EngineConfig, PredictiveSummary, summarize_och_y
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InputError,
    OchstreamError,
    StateError,
    UsageError,
)
from .lsh import LshIndex, LshParams
from .mlp import (
    EnsemblePosterior,
    GaussianPosterior,
    MlpSpec,
    WeightSample,
    build_posterior_och,
    forward,
    load_predictor,
    posterior_sample,
    save_predictor,
)
from .och import Codevector, Och, OchParams, UpdateOutcome
from .streams import StreamRecord, gen_stream, ingest, write_stream

__version__ = "0.1.0"

__all__ = [
    "Codevector",
    "ConfigError",
    "DataError",
    "Engine",
    "EngineConfig",
    "EnsemblePosterior",
    "FormatError",
    "GaussianPosterior",
    "InputError",
    "LshIndex",
    "LshParams",
    "MlpSpec",
    "Och",
    "OchParams",
    "OchstreamError",
    "PredictiveSummary",
    "StateError",
    "StreamRecord",
    "UpdateOutcome",
    "UsageError",
    "WeightSample",
    "build_posterior_och",
    "forward",
    "gen_stream",
    "ingest",
    "load_predictor",
    "posterior_sample",
    "save_predictor",
    "summarize_och_y",
    "write_stream",
]
