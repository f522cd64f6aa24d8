"""Locality-sensitive hashing index over codevectors.

Hash family: h(x) = floor((a . x + b) / w) with a drawn from a standard normal
(2-stable, so collisions track Euclidean distance) and b uniform in [0, w).
Each of the `num_hashes` functions owns one single-probe table.

Search gathers the union of the query's buckets across tables and scans the
candidates exactly; when the union has fewer than `exact_fallback_threshold`
members (in particular when it is empty), the scan runs over the whole index
instead, so `nearest` is total and never worse than brute force on small
candidate sets. Ties always resolve to the lowest id.

Split queries: when the index is built with `split_dim`, every projection is
computed as a . x = a0 . x[:split] + a1 . x[split:]. Registered "weight"
sub-vectors cache their a1-part once, so a query given as (data_part, weight
id) hashes without materializing the concatenation and returns bit-identical
results to the concatenated query.

Same concurrency contract as the histogram: single-writer mutation,
concurrent read-only queries between mutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, InputError, StateError, UsageError

# exact_fallback_threshold value that forces exact scans on any realistic index
ALWAYS_EXACT = 2**62


@dataclass
class LshParams:
    num_hashes: int = 16
    bucket_width: float = 4.0
    seed: int = 0
    exact_fallback_threshold: int = 1

    def validate(self):
        if self.num_hashes < 1:
            raise ConfigError(f"num_hashes must be >= 1, got {self.num_hashes}")
        if not self.bucket_width > 0:
            raise ConfigError(f"bucket_width must be > 0, got {self.bucket_width}")
        if self.exact_fallback_threshold < 0:
            raise ConfigError(
                f"exact_fallback_threshold must be >= 0, got {self.exact_fallback_threshold}"
            )


def derive_lsh_params(k_target, rng_seed):
    """Index parameters for a histogram targeting `k_target` entries.

    Small histograms always scan exactly: at that size hashing buys nothing,
    so LSH candidate filtering only engages past 64 targeted entries.
    """
    num_hashes = max(4, int(math.ceil(math.log2(max(k_target, 2)))) * 4)
    threshold = ALWAYS_EXACT if k_target <= 64 else 1
    return LshParams(
        num_hashes=num_hashes,
        bucket_width=4.0,
        seed=rng_seed + 1,
        exact_fallback_threshold=threshold,
    )


class LshIndex:
    """Dynamic nearest-neighbor index with insert/remove and split queries."""

    def __init__(self, dim, params=None, split_dim=None):
        params = params if params is not None else LshParams()
        params.validate()
        if dim < 1:
            raise ConfigError(f"index dimension must be >= 1, got {dim}")
        if split_dim is not None and not 0 < split_dim < dim:
            raise ConfigError(f"split_dim must lie strictly inside (0, {dim})")
        self.dim = int(dim)
        self.params = params
        self.split_dim = split_dim

        rng = np.random.default_rng(np.random.Philox(key=params.seed & (2**128 - 1)))
        self._a = rng.normal(size=(params.num_hashes, dim))
        self._b = rng.uniform(0.0, params.bucket_width, size=params.num_hashes)
        if split_dim is not None:
            self._a0 = np.ascontiguousarray(self._a[:, :split_dim])
            self._a1 = np.ascontiguousarray(self._a[:, split_dim:])

        self._tables = [dict() for _ in range(params.num_hashes)]
        self._vectors = {}  # id -> vector
        self._keys = {}  # id -> int64 bucket key per table
        self._weight_vectors = {}  # weight sample id -> sub-vector
        self._weight_proj = {}  # weight sample id -> cached a1 . w per hash
        self._stack_ids = None
        self._stack_mat = None

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, entry_id):
        return entry_id in self._vectors

    def ids(self):
        return sorted(self._vectors)

    # -- projections ----------------------------------------------------

    def _project(self, vec):
        if self.split_dim is None:
            return self._a @ vec + self._b
        s = self.split_dim
        return self._a0 @ vec[:s] + self._a1 @ vec[s:] + self._b

    def _keys_for(self, proj):
        return np.floor(proj / self.params.bucket_width).astype(np.int64)

    # -- mutation --------------------------------------------------------

    def insert(self, entry_id, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise InputError(
                f"vector has dimension {vector.shape}, index expects ({self.dim},)"
            )
        if entry_id in self._vectors:
            raise UsageError(f"id {entry_id} already present in index")
        keys = self._keys_for(self._project(vector))
        for table, key in zip(self._tables, keys):
            table.setdefault(int(key), []).append(entry_id)
        self._vectors[entry_id] = vector
        self._keys[entry_id] = keys
        self._stack_ids = None

    def remove(self, entry_id):
        if entry_id not in self._vectors:
            raise UsageError(f"id {entry_id} not present in index")
        keys = self._keys.pop(entry_id)
        for table, key in zip(self._tables, keys):
            bucket = table[int(key)]
            bucket.remove(entry_id)
            if not bucket:
                del table[int(key)]
        del self._vectors[entry_id]
        self._stack_ids = None

    # -- weight-sample projection cache -----------------------------------

    def register_weight_sample(self, sample_id, weight_vector):
        if self.split_dim is None:
            raise UsageError("index was built without a split dimension")
        weight_vector = np.asarray(weight_vector, dtype=np.float64)
        expected = self.dim - self.split_dim
        if weight_vector.shape != (expected,):
            raise InputError(
                f"weight sub-vector has dimension {weight_vector.shape}, expected ({expected},)"
            )
        self._weight_vectors[sample_id] = weight_vector
        self._weight_proj[sample_id] = self._a1 @ weight_vector

    def weight_sample_ids(self):
        return sorted(self._weight_proj)

    def weight_vector(self, sample_id):
        return self._weight_vectors.get(sample_id)

    # -- search -----------------------------------------------------------

    def _stacked(self):
        if self._stack_ids is None:
            ids = sorted(self._vectors)
            self._stack_ids = ids
            self._stack_mat = (
                np.stack([self._vectors[i] for i in ids])
                if ids
                else np.empty((0, self.dim))
            )
        return self._stack_ids, self._stack_mat

    def _nearest_for_keys(self, keys, query):
        candidates = set()
        for table, key in zip(self._tables, keys):
            candidates.update(table.get(int(key), ()))
        if len(candidates) < max(self.params.exact_fallback_threshold, 1):
            ids, mat = self._stacked()
        elif len(candidates) == len(self._vectors):
            ids, mat = self._stacked()
        else:
            ids = sorted(candidates)
            mat = np.stack([self._vectors[i] for i in ids])
        idx, sq = backend.sq_dist_argmin(mat, query)
        return ids[idx], math.sqrt(sq)

    def nearest(self, query):
        if not self._vectors:
            raise StateError("nearest() on an empty index")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dim,):
            raise InputError(
                f"query has dimension {query.shape}, index expects ({self.dim},)"
            )
        keys = self._keys_for(self._project(query))
        return self._nearest_for_keys(keys, query)

    def nearest_split(self, data_part, weight_sample_id):
        if not self._vectors:
            raise StateError("nearest_split() on an empty index")
        if weight_sample_id not in self._weight_proj:
            raise UsageError(f"weight sample {weight_sample_id!r} has no cached projections")
        data_part = np.asarray(data_part, dtype=np.float64)
        if data_part.shape != (self.split_dim,):
            raise InputError(
                f"data part has dimension {data_part.shape}, expected ({self.split_dim},)"
            )
        proj = self._a0 @ data_part + self._weight_proj[weight_sample_id] + self._b
        keys = self._keys_for(proj)
        query = np.concatenate([data_part, self._weight_vectors[weight_sample_id]])
        return self._nearest_for_keys(keys, query)

    # -- introspection (tests) ---------------------------------------------

    def iter_buckets(self):
        for t, table in enumerate(self._tables):
            for key, bucket in table.items():
                yield t, key, tuple(bucket)
