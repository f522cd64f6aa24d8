"""Command-line interface.

Subcommands: gen, fixture, eval, bench, sweep, kernel-bench. Engine flags
mirror the config field names (och params carry an och_x_/och_y_/och_x1_
prefix); a JSON config file passed with --config overrides any flags.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

import numpy as np

from . import backend, fixtures, harness, metrics
from .engine import EngineConfig
from .errors import ConfigError, DataError, FormatError, OchstreamError
from .mlp import load_predictor
from .och import OchParams
from .streams import STREAM_KINDS, gen_stream, ingest, write_stream

_OCH_FIELDS = ("k_target", "lambda", "phi_logit", "count_floor", "rng_seed")


def _add_engine_flags(parser):
    parser.add_argument("--mode", default=None)
    parser.add_argument("--mu_samples", type=int, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--confidence_threshold", type=float, default=None)
    for prefix in ("och_x", "och_y", "och_x1"):
        parser.add_argument(f"--{prefix}_k_target", type=int, default=None)
        parser.add_argument(f"--{prefix}_lambda", type=float, default=None)
        parser.add_argument(f"--{prefix}_phi_logit", type=float, default=None)
        parser.add_argument(f"--{prefix}_count_floor", type=float, default=None)
        parser.add_argument(f"--{prefix}_rng_seed", type=int, default=None)
    parser.add_argument("--config", default=None, help="JSON config file; overrides flags")


def _och_params_from_flags(args, prefix, fallback):
    values = {}
    for field in _OCH_FIELDS:
        flag = getattr(args, f"{prefix}_{field}", None)
        if flag is not None:
            key = "lambda_" if field == "lambda" else field
            values[key] = flag
    if not values and fallback is None:
        return None
    base = fallback if fallback is not None else OchParams()
    return replace(base, **values)


def _och_params_from_dict(data):
    if data is None:
        return None
    data = dict(data)
    if "lambda" in data:
        data["lambda_"] = data.pop("lambda")
    return OchParams(**data)


def _build_config(args):
    config = EngineConfig()
    if args.mode is not None:
        config = replace(config, mode=args.mode)
    if args.mu_samples is not None:
        config = replace(config, mu_samples=args.mu_samples)
    if args.tau is not None:
        config = replace(config, tau=args.tau)
    if args.confidence_threshold is not None:
        config = replace(config, confidence_threshold=args.confidence_threshold)
    config = replace(
        config,
        och_x_params=_och_params_from_flags(args, "och_x", config.och_x_params),
        och_y_params=_och_params_from_flags(args, "och_y", config.och_y_params),
        och_x1_params=_och_params_from_flags(args, "och_x1", None),
    )
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        overrides = {}
        for key in ("mode", "mu_samples", "tau", "confidence_threshold"):
            if key in data:
                overrides[key] = data[key]
        if "och_x_params" in data:
            overrides["och_x_params"] = _och_params_from_dict(data["och_x_params"])
        if "och_y_params" in data:
            overrides["och_y_params"] = _och_params_from_dict(data["och_y_params"])
        if "och_x1_params" in data:
            overrides["och_x1_params"] = _och_params_from_dict(data["och_x1_params"])
        config = replace(config, **overrides)
    config.validate()
    return config


def _add_stream_flags(parser):
    parser.add_argument("--stream", default=None, help="csv/jsonl stream file")
    parser.add_argument("--gen", default=None, choices=STREAM_KINDS)
    parser.add_argument("--gen_params", default="{}", help="JSON params for --gen")
    parser.add_argument("--gen_seed", type=int, default=0)
    parser.add_argument("--warmup_normalize", type=int, default=0)


def _load_records(args):
    if (args.stream is None) == (args.gen is None):
        raise ConfigError("pass exactly one of --stream or --gen")
    if args.stream is not None:
        return list(ingest(args.stream, normalize_warmup=args.warmup_normalize))
    return gen_stream(args.gen, json.loads(args.gen_params), args.gen_seed)


def _parse_modes(text):
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    if not modes:
        raise ConfigError("empty mode list")
    return modes


def _cmd_gen(args):
    records = gen_stream(args.kind, json.loads(args.params), args.seed)
    write_stream(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_fixture(args):
    names = (
        ("regression-drift", "classification-boundary")
        if args.which == "all"
        else (args.which,)
    )
    for name in names:
        weight_path, stream_path = fixtures.write_fixture(name, args.out_dir)
        print(f"{name}: {weight_path} {stream_path}")
    return 0


def _cmd_eval(args):
    config = _build_config(args)
    records = _load_records(args)
    spec, source = load_predictor(args.predictor)
    report = harness.run_eval(
        records, spec, source, config, modes=_parse_modes(args.modes), base_seed=args.seed
    )
    if args.report:
        metrics.write_report(report, args.report)
    if args.csv:
        metrics.write_mode_csv(report, args.csv)
    if not args.report:
        sys.stdout.write(metrics.report_to_json(report))
    return 0


def _cmd_bench(args):
    config = _build_config(args)
    records = _load_records(args)
    spec, source = load_predictor(args.predictor)
    table = harness.run_bench(
        records,
        spec,
        source,
        config,
        modes=_parse_modes(args.modes),
        forward_floor=args.forward_floor_ms / 1000.0,
        base_seed=args.seed,
    )
    if args.report:
        metrics.write_report(table, args.report)
    else:
        sys.stdout.write(metrics.report_to_json(table))
    return 0


def _cmd_sweep(args):
    config = _build_config(args)
    records = _load_records(args)
    spec, source = load_predictor(args.predictor)
    if args.grid:
        grid = json.loads(args.grid)
    else:
        grid = []
        for value in _parse_values(args.k_values, int):
            grid.append({"k_target": value})
        for value in _parse_values(args.lambda_values, float):
            grid.append({"lambda_": value})
        for value in _parse_values(args.phi_logit_values, float):
            grid.append({"phi_logit": value})
    if not grid:
        raise ConfigError("empty sweep grid")
    seeds = _parse_values(args.seeds, int) or [0]
    rows = harness.run_sweep(
        records, spec, source, config, grid, metric=args.metric, seeds=seeds
    )
    harness.sweep_rows_to_csv(rows, args.out)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def _parse_values(text, cast):
    if not text:
        return []
    return [cast(tok) for tok in text.split(",") if tok.strip()]


def _cmd_kernel_bench(args):
    rng = np.random.default_rng(np.random.Philox(key=args.seed))
    mat = rng.standard_normal((args.rows, args.dim))
    queries = rng.standard_normal((args.iters, args.dim))
    sizes = np.array([args.dim, 32, 32, 4], dtype=np.int64)
    flat = rng.standard_normal(int(np.sum(sizes[:-1] * sizes[1:] + sizes[1:])))
    print(f"rows={args.rows} dim={args.dim} iters={args.iters}")
    for name in backend.available_backends():
        kernels = backend.get_kernels(name)
        kernels.sq_dist_argmin(mat, queries[0])  # warm the jit cache
        t0 = time.perf_counter()
        for q in queries:
            kernels.sq_dist_argmin(mat, q)
        scan = time.perf_counter() - t0
        kernels.mlp_forward(flat, sizes, backend.ACT_TANH, queries[0])
        t0 = time.perf_counter()
        for q in queries:
            kernels.mlp_forward(flat, sizes, backend.ACT_TANH, q)
        fwd = time.perf_counter() - t0
        print(
            f"{name:>6}: distance-scan {scan / args.iters * 1e6:9.2f} us/call,"
            f" mlp-forward {fwd / args.iters * 1e6:9.2f} us/call"
        )
    print(f"active backend: {backend.BACKEND_NAME}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ochstream")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic stream file")
    p_gen.add_argument("--kind", required=True, choices=STREAM_KINDS)
    p_gen.add_argument("--params", default="{}")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen)

    p_fix = sub.add_parser("fixture", help="write the committed fixture bundles")
    p_fix.add_argument(
        "--which",
        default="all",
        choices=("all", "regression-drift", "classification-boundary"),
    )
    p_fix.add_argument("--out_dir", required=True)
    p_fix.set_defaults(func=_cmd_fixture)

    p_eval = sub.add_parser("eval", help="run modes over a stream and report metrics")
    _add_stream_flags(p_eval)
    _add_engine_flags(p_eval)
    p_eval.add_argument("--predictor", required=True)
    p_eval.add_argument("--modes", default="SP,MU,DU,DBNN")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--report", default=None)
    p_eval.add_argument("--csv", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="measure per-mode throughput")
    _add_stream_flags(p_bench)
    _add_engine_flags(p_bench)
    p_bench.add_argument("--predictor", required=True)
    p_bench.add_argument("--modes", default="SP,MU,DU,DBNN")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--forward_floor_ms", type=float, default=0.0)
    p_bench.add_argument("--report", default=None)
    p_bench.set_defaults(func=_cmd_bench)

    p_sweep = sub.add_parser("sweep", help="sweep output-histogram hyperparameters")
    _add_stream_flags(p_sweep)
    _add_engine_flags(p_sweep)
    p_sweep.add_argument("--predictor", required=True)
    p_sweep.add_argument("--metric", default="accuracy")
    p_sweep.add_argument("--k_values", default="")
    p_sweep.add_argument("--lambda_values", default="")
    p_sweep.add_argument("--phi_logit_values", default="")
    p_sweep.add_argument("--grid", default=None, help="JSON list of override dicts")
    p_sweep.add_argument("--seeds", default="0")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_kb = sub.add_parser("kernel-bench", help="compare the numba and numpy kernels")
    p_kb.add_argument("--rows", type=int, default=1024)
    p_kb.add_argument("--dim", type=int, default=64)
    p_kb.add_argument("--iters", type=int, default=2000)
    p_kb.add_argument("--seed", type=int, default=0)
    p_kb.set_defaults(func=_cmd_kernel_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OchstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
