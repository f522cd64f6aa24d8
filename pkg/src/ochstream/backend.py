"""Numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The active backend is chosen once at import time from the OCHSTREAM_BACKEND
environment variable:

    auto   (default) numba when importable, numpy otherwise
    numba  require numba, fail loudly if missing
    numpy  force the pure-numpy path

Both backends implement identical semantics (first-minimum tie breaking,
sequential layer evaluation); floating-point results may differ in the last
ulps between backends because summation order differs. Within one backend the
kernels are deterministic. ``get_kernels`` exposes both implementations so the
kernel benchmark can compare them side by side.
"""

from __future__ import annotations

import os
import warnings
from types import SimpleNamespace

import numpy as np

# Hidden-layer activation codes shared with the predictor module.
ACT_RELU = 0
ACT_TANH = 1
ACT_IDENTITY = 2


def _np_sq_dist_argmin(mat, q):
    """Index and squared distance of the row of `mat` closest to `q`.

    Ties resolve to the smallest index (numpy argmin returns the first
    minimum), which callers rely on for lowest-id tie breaking.
    """
    diff = mat - q
    sq = np.einsum("ij,ij->i", diff, diff)
    idx = int(np.argmin(sq))
    return idx, float(sq[idx])


def _np_mlp_forward(flat, sizes, act, x):
    """Forward pass through a dense net stored as a flat f64 vector.

    Layout per layer: weight matrix row-major (out x in), then bias.
    Hidden activation given by `act`; the last layer is always linear.
    """
    h = x
    off = 0
    n_layers = len(sizes) - 1
    for layer in range(n_layers):
        n_in = int(sizes[layer])
        n_out = int(sizes[layer + 1])
        w = flat[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = flat[off : off + n_out]
        off += n_out
        h = w @ h + b
        if layer < n_layers - 1:
            if act == ACT_RELU:
                h = np.maximum(h, 0.0)
            elif act == ACT_TANH:
                h = np.tanh(h)
    return h


_NUMPY = SimpleNamespace(
    name="numpy",
    sq_dist_argmin=_np_sq_dist_argmin,
    mlp_forward=_np_mlp_forward,
)

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    njit = None
    _HAVE_NUMBA = False


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_sq_dist_argmin(mat, q):
        n, d = mat.shape
        best = -1
        best_sq = np.inf
        for i in range(n):
            s = 0.0
            for j in range(d):
                t = mat[i, j] - q[j]
                s += t * t
            if s < best_sq:
                best_sq = s
                best = i
        return best, best_sq

    @njit(cache=True)
    def _nb_mlp_forward(flat, sizes, act, x):
        h = x.copy()
        off = 0
        n_layers = sizes.shape[0] - 1
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            out = np.empty(n_out)
            for i in range(n_out):
                s = 0.0
                base = off + i * n_in
                for j in range(n_in):
                    s += flat[base + j] * h[j]
                out[i] = s
            off += n_in * n_out
            for i in range(n_out):
                out[i] += flat[off + i]
            off += n_out
            if layer < n_layers - 1:
                if act == ACT_RELU:
                    for i in range(n_out):
                        if out[i] < 0.0:
                            out[i] = 0.0
                elif act == ACT_TANH:
                    for i in range(n_out):
                        out[i] = np.tanh(out[i])
            h = out
        return h

    def _numba_sq_dist_argmin(mat, q):
        idx, sq = _nb_sq_dist_argmin(mat, q)
        return int(idx), float(sq)

    _NUMBA = SimpleNamespace(
        name="numba",
        sq_dist_argmin=_numba_sq_dist_argmin,
        mlp_forward=_nb_mlp_forward,
    )
else:
    _NUMBA = None


def available_backends():
    names = ["numpy"]
    if _HAVE_NUMBA:
        names.append("numba")
    return names


def get_kernels(name):
    """Return the kernel namespace for `name` ("numpy" or "numba")."""
    if name == "numpy":
        return _NUMPY
    if name == "numba":
        if _NUMBA is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _NUMBA
    raise ValueError(f"unknown backend {name!r}")


def _resolve_active():
    requested = os.environ.get("OCHSTREAM_BACKEND", "auto").lower()
    if requested == "auto":
        return _NUMBA if _HAVE_NUMBA else _NUMPY
    if requested == "numpy":
        return _NUMPY
    if requested == "numba":
        return get_kernels("numba")
    warnings.warn(
        f"OCHSTREAM_BACKEND={requested!r} not recognized, falling back to auto",
        stacklevel=1,
    )
    return _NUMBA if _HAVE_NUMBA else _NUMPY


_ACTIVE = _resolve_active()

BACKEND_NAME = _ACTIVE.name
sq_dist_argmin = _ACTIVE.sq_dist_argmin
mlp_forward = _ACTIVE.mlp_forward
