"""Online codevector histogram: a decaying, self-resizing vector histogram.

The histogram holds (vector, count) entries; membership of a point is decided
by nearest-neighbor assignment, so each entry represents its Voronoi cell.
`update` runs the following steps, in order, on a non-empty histogram:

 1. match    -- find the nearest entry (ties: lowest id) and add the input
               count to it; N below is the total count after this increment.
 2. insert   -- with probability sigmoid(pi_i - 1/K + phi), pi_i = n_i/N,
               the input vector becomes a new entry holding n_i * f of the
               matched entry's mass, where f = exp(-lambda/N); the matched
               entry keeps the exact remainder n_i - n_i*f.
 3. decay    -- every count is multiplied by the same f.
 4. delete   -- each entry present at the start of this step, visited in
               ascending id order, is marked for removal with probability
               sigmoid(1/K - pi_k + phi) * (1/K); marked entries are then
               removed together, except that when no unmarked entry holds
               positive mass the largest-count marked entry (ties: lowest id)
               is preserved, so deletion can never empty the histogram or
               zero out its total and the surviving bin is the density mode.
 5. floor    -- entries whose count fell below `count_floor` are removed,
               with the same mode-preserving protection.

phi = sigmoid(phi_logit). A phi_logit of -inf (+inf) forces the sigmoid factor
in both gates to exactly 0 (1); -inf therefore disables both gates, which the
tests use to isolate the deterministic steps.

On an empty histogram the input becomes the first entry with its full count
and no gates run.

RNG contract: the histogram owns a seeded counter-based generator (Philox).
Step 2 consumes exactly one uniform per update and step 4 exactly one uniform
per entry present when it starts, whether or not the gate can fire, so a
trace is fully determined by (seed, input sequence). The empty-histogram
bootstrap consumes no draws.

The reported `delta_count` is the net change of the matched entry's count
across the whole update (its final count minus its count before step 1); if
the entry did not survive, it is minus the pre-update count. `alpha` is
delta_count / total_count_after, the fraction the downstream output histogram
is updated with.

Concurrency: a histogram is single-writer. `update` mutates internal state
and must be externally serialized; read-only queries (`density`, `sample`
with an explicitly passed generator) may run concurrently with each other but
not with updates. Instances may move between threads between calls.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InputError, StateError
from .lsh import LshIndex, LshParams, derive_lsh_params

_MAGIC = b"OCH"
_VERSION = b"1"

# exp(-lambda/N) saturates here instead of underflowing to exactly 0, which
# would annihilate every count (and the total) in one step when N is tiny.
DECAY_FLOOR = 2.2250738585072014e-308  # smallest positive normal f64


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def gate_factor(margin, phi_logit):
    """sigmoid(margin + phi) with phi = sigmoid(phi_logit); saturated at +-inf."""
    if phi_logit == -math.inf:
        return 0.0
    if phi_logit == math.inf:
        return 1.0
    return sigmoid(margin + sigmoid(phi_logit))


@dataclass
class OchParams:
    k_target: int = 5
    lambda_: float = 5.0
    phi_logit: float = 1.0
    count_floor: float = 1e-12
    rng_seed: int = 0

    def validate(self):
        if self.k_target < 1:
            raise ConfigError(f"k_target must be >= 1, got {self.k_target}")
        if not self.lambda_ >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_}")
        if not self.count_floor > 0:
            raise ConfigError(f"count_floor must be > 0, got {self.count_floor}")
        if math.isnan(self.phi_logit):
            raise ConfigError("phi_logit must not be NaN")


@dataclass
class Codevector:
    id: int
    vector: np.ndarray
    count: float


@dataclass
class UpdateOutcome:
    matched_id: int
    inserted_id: int | None
    deleted_ids: list[int] = field(default_factory=list)
    delta_count: float = 0.0
    total_count_after: float = 0.0
    alpha: float = 0.0


class Och:
    """See the module docstring for the update semantics."""

    def __init__(self, dim, params=None, lsh_params=None):
        params = params if params is not None else OchParams()
        params.validate()
        if dim < 1:
            raise ConfigError(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.params = params
        self.lsh_params = (
            lsh_params
            if lsh_params is not None
            else derive_lsh_params(params.k_target, params.rng_seed)
        )
        self.split_dim = None
        self.entries: dict[int, Codevector] = {}
        self.total_count = 0.0
        self._next_id = 0
        self._rng = np.random.default_rng(
            np.random.Philox(key=params.rng_seed & (2**128 - 1))
        )
        self.index = LshIndex(dim, self.lsh_params, split_dim=None)

    def enable_split(self, split_dim):
        """Rebuild the index with a data/weight split boundary. Only valid while empty."""
        if self.entries:
            raise StateError("cannot change the split boundary of a populated histogram")
        self.split_dim = split_dim
        self.index = LshIndex(self.dim, self.lsh_params, split_dim=split_dim)

    def __len__(self):
        return len(self.entries)

    # -- bookkeeping -------------------------------------------------------

    def _add_entry(self, vector, count):
        cv = Codevector(id=self._next_id, vector=np.array(vector, dtype=np.float64), count=float(count))
        self._next_id += 1
        self.entries[cv.id] = cv
        self.index.insert(cv.id, cv.vector)
        return cv

    def _remove_entry(self, entry_id):
        cv = self.entries.pop(entry_id)
        self.index.remove(entry_id)
        return cv

    def _remove_marked(self, marked):
        """Remove marked entries; if nothing else holds positive mass, keep the
        largest-count marked entry (ties: lowest id) so the density mode and a
        positive total survive."""
        if not marked:
            return []
        marked_ids = {cv.id for cv in marked}
        keeps_mass = any(
            cv.count > 0.0
            for key, cv in self.entries.items()
            if key not in marked_ids
        )
        if not keeps_mass:
            keep = max(marked, key=lambda cv: (cv.count, -cv.id))
            marked = [cv for cv in marked if cv.id != keep.id]
        removed = []
        for cv in marked:
            self._remove_entry(cv.id)
            self.total_count -= cv.count
            removed.append(cv.id)
        return removed

    def recomputed_total(self):
        """Sum of entry counts in ascending id order (the fixed summation order)."""
        return math.fsum(cv.count for cv in self.entries.values())

    def weights(self):
        """Normalized masses pi_i keyed by id."""
        if not self.entries:
            raise StateError("weights() on an empty histogram")
        n = self.total_count
        return {cv.id: cv.count / n for cv in self.entries.values()}

    def stacked(self):
        """(ids, matrix) of live entries in ascending id order."""
        ids = list(self.entries)
        mat = (
            np.stack([self.entries[i].vector for i in ids])
            if ids
            else np.empty((0, self.dim))
        )
        return ids, mat

    # -- update ------------------------------------------------------------

    def _check_input(self, vector, input_count):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise InputError(
                f"input has dimension {vector.shape}, histogram expects ({self.dim},)"
            )
        if not input_count > 0:
            raise InputError(f"input_count must be > 0, got {input_count}")
        return vector

    def update(self, vector, input_count, *, force_insert=False):
        vector = self._check_input(vector, input_count)
        if not self.entries:
            return self._bootstrap(vector, input_count)
        matched_id, _ = self.index.nearest(vector)
        return self._update_matched(vector, float(input_count), matched_id, force_insert)

    def update_split(self, data_part, weight_sample_id, input_count, *, force_insert=False):
        """Update with the input given as (data part, registered weight id)."""
        if self.split_dim is None:
            raise StateError("histogram has no split boundary")
        weight_vec = self.index.weight_vector(weight_sample_id)
        if weight_vec is None:
            raise InputError(f"weight sample {weight_sample_id!r} is not registered")
        vector = np.concatenate([np.asarray(data_part, dtype=np.float64), weight_vec])
        vector = self._check_input(vector, input_count)
        if not self.entries:
            return self._bootstrap(vector, input_count)
        matched_id, _ = self.index.nearest_split(data_part, weight_sample_id)
        return self._update_matched(vector, float(input_count), matched_id, force_insert)

    def _bootstrap(self, vector, input_count):
        cv = self._add_entry(vector, input_count)
        self.total_count = float(input_count)
        return UpdateOutcome(
            matched_id=cv.id,
            inserted_id=cv.id,
            deleted_ids=[],
            delta_count=float(input_count),
            total_count_after=self.total_count,
            alpha=1.0,
        )

    def _update_matched(self, vector, input_count, matched_id, force_insert):
        p = self.params
        pi_bar = 1.0 / p.k_target
        matched = self.entries[matched_id]
        pre_count = matched.count

        # step 1: match and increment
        matched.count += input_count
        self.total_count += input_count
        n_total = self.total_count
        decay = max(math.exp(-p.lambda_ / n_total), DECAY_FLOOR)

        # step 2: insertion gate (one draw, always)
        pi_i = matched.count / n_total
        u = self._rng.random()
        inserted = None
        if force_insert or u < gate_factor(pi_i - pi_bar, p.phi_logit):
            moved = matched.count * decay
            matched.count -= moved  # exact remainder keeps the total unchanged
            inserted = self._add_entry(vector, moved)

        # step 3: decay
        for cv in self.entries.values():
            cv.count *= decay
        self.total_count *= decay

        # step 4: deletion gates (one draw per entry, ascending id, always)
        deleted = []
        snapshot = list(self.entries.values())
        n_after_decay = self.total_count
        marked = []
        for cv in snapshot:
            pi_k = cv.count / n_after_decay
            q = gate_factor(pi_bar - pi_k, p.phi_logit) * pi_bar
            u = self._rng.random()
            if u < q:
                marked.append(cv)
        deleted.extend(self._remove_marked(marked))

        # step 5: count floor
        marked = [cv for cv in self.entries.values() if cv.count < p.count_floor]
        deleted.extend(self._remove_marked(marked))

        # re-derive the total: pure incremental maintenance accumulates
        # cancellation residue that can dominate the true sum after deep decay
        self.total_count = self.recomputed_total()

        survivor = self.entries.get(matched_id)
        delta = survivor.count - pre_count if survivor is not None else -pre_count
        inserted_id = inserted.id if inserted is not None and inserted.id in self.entries else None
        return UpdateOutcome(
            matched_id=matched_id,
            inserted_id=inserted_id,
            deleted_ids=deleted,
            delta_count=delta,
            total_count_after=self.total_count,
            alpha=delta / self.total_count,
        )

    # -- queries -------------------------------------------------------------

    def density(self, query):
        """Mass of the cell containing `query` (the cell weight pi_i, not a
        per-volume density: cell volumes are not computed)."""
        if not self.entries:
            raise StateError("density() on an empty histogram")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dim,):
            raise InputError(
                f"query has dimension {query.shape}, histogram expects ({self.dim},)"
            )
        matched_id, _ = self.index.nearest(query)
        return self.entries[matched_id].count / self.total_count

    def sample(self, rng=None):
        """Draw an entry with probability pi_i. Uses the histogram's own RNG
        unless an explicit generator is passed (one uniform per call)."""
        if not self.entries:
            raise StateError("sample() on an empty histogram")
        rng = rng if rng is not None else self._rng
        u = rng.random() * self.total_count
        acc = 0.0
        last = None
        for cv in self.entries.values():
            acc += cv.count
            last = cv
            if u < acc:
                return cv
        return last  # numeric edge: u == total

    # -- serialization ---------------------------------------------------------

    def serialize(self):
        """Versioned binary snapshot; see README for the byte layout."""
        p = self.params
        lp = self.lsh_params
        state = self._rng.bit_generator.state
        rng_words = (
            [int(w) for w in state["state"]["counter"]]
            + [int(w) for w in state["state"]["key"]]
            + [int(w) for w in state["buffer"]]
            + [int(state["buffer_pos"]), int(state["has_uint32"]), int(state["uinteger"])]
        )
        out = bytearray()
        out += _MAGIC + _VERSION
        out += struct.pack("<I", self.dim)
        out += struct.pack("<Q", len(self.entries))
        out += struct.pack(
            "<Iddd q", p.k_target, p.lambda_, p.phi_logit, p.count_floor, p.rng_seed
        )
        out += struct.pack(
            "<IdqQ", lp.num_hashes, lp.bucket_width, lp.seed, lp.exact_fallback_threshold
        )
        out += struct.pack("<q", -1 if self.split_dim is None else self.split_dim)
        out += struct.pack("<Qd", self._next_id, self.total_count)
        out += struct.pack("<13Q", *rng_words)
        for cv in self.entries.values():
            out += struct.pack("<Qd", cv.id, cv.count)
            out += cv.vector.astype("<f8").tobytes()
        return bytes(out)

    @classmethod
    def deserialize(cls, blob):
        view = memoryview(blob)
        off = 0

        def take(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(view):
                raise FormatError("truncated histogram blob", offset=off)
            vals = struct.unpack_from(fmt, view, off)
            off += size
            return vals

        if len(view) < 4:
            raise FormatError("truncated histogram blob", offset=0)
        if view[:3] != _MAGIC:
            raise FormatError(f"bad magic {bytes(view[:3])!r}", offset=0)
        version = bytes(view[3:4])
        off = 4
        if version != _VERSION:
            raise FormatError(
                f"unsupported version {version!r}, this build reads version {_VERSION!r}",
                offset=3,
            )
        (dim,) = take("<I")
        (n_entries,) = take("<Q")
        k_target, lambda_, phi_logit, count_floor, rng_seed = take("<Iddd q")
        num_hashes, bucket_width, lsh_seed, fallback = take("<IdqQ")
        (split_dim,) = take("<q")
        next_id, total_count = take("<Qd")
        rng_words = take("<13Q")

        params = OchParams(
            k_target=k_target,
            lambda_=lambda_,
            phi_logit=phi_logit,
            count_floor=count_floor,
            rng_seed=rng_seed,
        )
        lsh_params = LshParams(
            num_hashes=num_hashes,
            bucket_width=bucket_width,
            seed=lsh_seed,
            exact_fallback_threshold=fallback,
        )
        och = cls(dim, params, lsh_params)
        if split_dim >= 0:
            och.enable_split(split_dim)
        for _ in range(n_entries):
            entry_id, count = take("<Qd")
            vec_bytes = dim * 8
            if off + vec_bytes > len(view):
                raise FormatError("truncated entry vector", offset=off)
            vector = np.frombuffer(view, dtype="<f8", count=dim, offset=off).copy()
            off += vec_bytes
            cv = Codevector(id=entry_id, vector=vector, count=count)
            och.entries[entry_id] = cv
            och.index.insert(entry_id, vector)
        if off != len(view):
            raise FormatError("trailing bytes after final entry", offset=off)
        och._next_id = next_id
        och.total_count = total_count
        state = och._rng.bit_generator.state
        state["state"]["counter"] = np.array(rng_words[0:4], dtype=np.uint64)
        state["state"]["key"] = np.array(rng_words[4:6], dtype=np.uint64)
        state["buffer"] = np.array(rng_words[6:10], dtype=np.uint64)
        state["buffer_pos"] = rng_words[10]
        state["has_uint32"] = rng_words[11]
        state["uinteger"] = rng_words[12]
        och._rng.bit_generator.state = state
        return och
