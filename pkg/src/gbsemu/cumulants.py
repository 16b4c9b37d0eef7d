"""Correlator and cumulant tables over mode subsets of order 1..K.

The correlator of a subset is the expectation of its parity; it is
computed from the covariance matrix as an alternating sum over
sub-subsets of vacuum overlaps.  Cumulants are the partition-weighted
transform of correlators.  Both live in dense arrays indexed by the
order-then-colex layout of :mod:`gbsemu.subsets`, which the sampler
reads directly.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ResourceGuardError, ValidationError
from .gaussian import GaussianInstance, reduce_modes, vacuum_overlap
from .subsets import (
    colex_rank,
    order_offset,
    partition_patterns,
    subset_rank,
    subset_unrank,
    table_size,
)

MAX_ORDER = 6
DEFAULT_MEM_CAP_BYTES = 8 << 30
MOMENT_MAX_ORDER = 12

_MAGIC = {"correlator": b"GBSC", "cumulant": b"GBSK"}
_FILE_VERSION = 1


@dataclass(frozen=True)
class SubsetTable:
    """Dense per-subset values for orders 1..K (correlators or cumulants)."""

    M: int
    K: int
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _MAGIC:
            raise ValidationError(f"unknown table kind {self.kind!r}")
        if not 1 <= self.K <= MAX_ORDER or self.K > self.M:
            raise ValidationError(f"order K={self.K} invalid for M={self.M}")
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.shape != (table_size(self.M, self.K),):
            raise ValidationError(
                f"table must hold {table_size(self.M, self.K)} values, got {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value(self, subset) -> float:
        return float(self.values[subset_rank(tuple(subset), self.M, self.K)])


@lru_cache(maxsize=64)
def _sub_index_arrays(d: int):
    """For each r, the doubled (rows ++ rows+d) index arrays of all r-subsets."""
    out = []
    for r in range(1, d + 1):
        combs = list(combinations(range(d), r))
        idx = np.array([R + tuple(k + d for k in R) for R in combs], dtype=int)
        out.append(idx)
    return out


def correlator(inst: GaussianInstance, subset) -> float:
    """Parity expectation over a mode subset.

    (-1)^d * sum over R of (-2)^|R| times the no-click probability of the
    reduced state on R; the empty R contributes 1.  Uses the mean vector
    when the instance is displaced.
    """
    subset = tuple(sorted(int(k) for k in subset))
    d = len(subset)
    if d == 0:
        return 1.0
    red = reduce_modes(inst, subset)
    sig, hbar = red.sigma, red.hbar
    displaced = red.is_displaced
    total = 1.0
    for r, idx in enumerate(_sub_index_arrays(d), start=1):
        mats = sig[idx[:, :, None], idx[:, None, :]]
        A = (mats + (hbar / 2.0) * np.eye(2 * r)) / hbar
        vals = 1.0 / np.sqrt(np.linalg.det(A))
        if displaced:
            for t in range(idx.shape[0]):
                mu_r = red.mu[idx[t]]
                shifted = mats[t] + (hbar / 2.0) * np.eye(2 * r)
                vals[t] *= np.exp(-0.5 * float(mu_r @ np.linalg.solve(shifted, mu_r)))
        total += (-2.0) ** r * float(vals.sum())
    return (-1.0) ** d * total


_WORKER_INST: GaussianInstance | None = None


def _init_worker(inst: GaussianInstance) -> None:
    global _WORKER_INST
    _WORKER_INST = inst


def _correlator_chunk(args):
    M, K, start, stop = args
    out = np.empty(stop - start)
    for off in range(start, stop):
        out[off - start] = correlator(_WORKER_INST, subset_unrank(off, M, K))
    return start, out


def correlator_table(
    inst: GaussianInstance,
    K: int,
    workers: int = 1,
    mem_cap_bytes: int | None = None,
) -> SubsetTable:
    """Correlators of every subset of order 1..K.

    Entries are computed independently per subset, so the result is
    bit-identical for any worker count.  Refuses when the value array
    would exceed the memory cap (GBS_MEM_CAP_BYTES or 8 GiB).
    """
    M = inst.M
    if not 1 <= K <= min(MAX_ORDER, M):
        raise ValidationError(f"order K={K} invalid for M={M}")
    count = table_size(M, K)
    cap = _mem_cap(mem_cap_bytes)
    if 8 * count > cap:
        raise ResourceGuardError(
            f"correlator table needs {8 * count} bytes, cap is {cap}; "
            "raise GBS_MEM_CAP_BYTES to proceed"
        )
    values = np.empty(count)
    if workers <= 1:
        for d in range(1, K + 1):
            base = order_offset(M, d)
            for S in combinations(range(M), d):
                values[base + colex_rank(S)] = correlator(inst, S)
    else:
        chunk = max(256, count // (workers * 8))
        tasks = [(M, K, s, min(s + chunk, count)) for s in range(0, count, chunk)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(inst,)) as ex:
            for start, arr in ex.map(_correlator_chunk, tasks):
                values[start : start + arr.size] = arr
    return SubsetTable(M=M, K=K, values=values, kind="correlator")


def _mem_cap(explicit: int | None) -> int:
    if explicit is not None:
        return explicit
    env = os.environ.get("GBS_MEM_CAP_BYTES")
    return int(env) if env else DEFAULT_MEM_CAP_BYTES


def _comb_vec(n: np.ndarray, k: int) -> np.ndarray:
    """Binomial coefficients of an integer array (exact for desk sizes)."""
    out = np.ones(n.shape, dtype=np.int64)
    for j in range(k):
        out = out * (n - j)
    for j in range(2, k + 1):
        out //= j
    return np.where(n >= k, out, 0)


def _block_ranks(idx: np.ndarray, block: tuple[int, ...], M: int) -> np.ndarray:
    """Dense table offsets of {subset[pos] for pos in block} per subset row."""
    cols = idx[:, list(block)]
    rank = np.zeros(idx.shape[0], dtype=np.int64)
    for j in range(len(block)):
        rank += _comb_vec(cols[:, j], j + 1)
    return rank + order_offset(M, len(block))


def _partition_transform(table: SubsetTable, use_weights: bool, kind: str) -> SubsetTable:
    M, K = table.M, table.K
    src = table.values
    out = np.empty_like(src)
    out[:M] = src[:M]
    for d in range(2, K + 1):
        idx = np.array(list(combinations(range(M), d)), dtype=np.int64)
        acc = np.zeros(idx.shape[0])
        for pat in partition_patterns(d):
            prod = np.ones(idx.shape[0])
            for block in pat.blocks:
                prod *= src[_block_ranks(idx, block, M)]
            acc += (pat.weight if use_weights else 1.0) * prod
        out[_block_ranks(idx, tuple(range(d)), M)] = acc
    return SubsetTable(M=M, K=K, values=out, kind=kind)


def cumulants_from_correlators(table: SubsetTable) -> SubsetTable:
    """Partition-weighted transform; order-1 entries pass through."""
    if table.kind != "correlator":
        raise ValidationError("expected a correlator table")
    return _partition_transform(table, use_weights=True, kind="cumulant")


def correlators_from_cumulants(table: SubsetTable) -> SubsetTable:
    """Exact inverse of :func:`cumulants_from_correlators`."""
    if table.kind != "cumulant":
        raise ValidationError("expected a cumulant table")
    return _partition_transform(table, use_weights=False, kind="correlator")


def cumulant_recursion_residual(
    correlators: SubsetTable, cumulants: SubsetTable, s_prime, n: int
) -> float:
    """Residual of the correlator split over the block containing n.

    c(S' + {n}) - sum over R of kappa(R + {n}) c(S' - R); identically zero
    for consistent tables.
    """
    s_prime = tuple(sorted(int(k) for k in s_prime))
    if n in s_prime:
        raise ValidationError("n must not belong to S'")
    d = len(s_prime) + 1
    if d > correlators.K or d > cumulants.K:
        raise ValidationError(f"tables must cover order {d}")
    lhs = correlators.value(tuple(sorted(s_prime + (n,))))
    rhs = 0.0
    for r in range(len(s_prime) + 1):
        for R in combinations(s_prime, r):
            rest = tuple(k for k in s_prime if k not in R)
            c_rest = correlators.value(rest) if rest else 1.0
            rhs += cumulants.value(tuple(sorted(R + (n,)))) * c_rest
    return lhs - rhs


def moments_from_click_marginals(inst: GaussianInstance, subset) -> float:
    """Probability that every mode in the subset clicks.

    Inclusion-exclusion over no-click events: sum over R of (-1)^|R|
    times the no-click probability of the reduced state on R.
    """
    subset = tuple(sorted(int(k) for k in subset))
    if len(subset) > MOMENT_MAX_ORDER:
        raise ResourceGuardError(f"joint click moment refused beyond order {MOMENT_MAX_ORDER}")
    if not subset:
        return 1.0
    total = 1.0
    for r in range(1, len(subset) + 1):
        for R in combinations(subset, r):
            red = reduce_modes(inst, R)
            total += (-1.0) ** r * vacuum_overlap(red.sigma, red.mu, red.hbar)
    return total


def click_cumulant(inst: GaussianInstance, subset) -> float:
    """Theoretical joint cumulant of the 0/1 click variables on a subset."""
    subset = tuple(sorted(int(k) for k in subset))
    d = len(subset)
    if d == 1:
        return moments_from_click_marginals(inst, subset)
    total = 0.0
    for pat in partition_patterns(d):
        prod = 1.0
        for block in pat.blocks:
            prod *= moments_from_click_marginals(inst, tuple(subset[p] for p in block))
        total += pat.weight * prod
    return total


def save_table(table: SubsetTable, path) -> None:
    """Write the little-endian binary container with trailing byte-sum checksum."""
    header = _MAGIC[table.kind] + struct.pack(
        "<IIIQ", _FILE_VERSION, table.M, table.K, table.values.size
    )
    payload = header + table.values.astype("<f8").tobytes()
    checksum = int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64))
    Path(path).write_bytes(payload + struct.pack("<Q", checksum))


def load_table(path) -> SubsetTable:
    """Read a table container, verifying magic, version and checksum."""
    data = Path(path).read_bytes()
    if len(data) < 28:
        raise ValidationError(f"table file {path} truncated")
    magic = data[:4]
    kinds = {v: k for k, v in _MAGIC.items()}
    if magic not in kinds:
        raise ValidationError(f"table file {path} has unknown magic {magic!r}")
    version, M, K, count = struct.unpack("<IIIQ", data[4:24])
    if version != _FILE_VERSION:
        raise ValidationError(f"unsupported table version {version}")
    end = 24 + 8 * count
    if len(data) != end + 8:
        raise ValidationError(f"table file {path} has wrong length")
    (checksum,) = struct.unpack("<Q", data[end:])
    actual = int(np.frombuffer(data[:end], dtype=np.uint8).sum(dtype=np.uint64))
    if actual != checksum:
        raise ValidationError(f"table file {path} checksum mismatch")
    values = np.frombuffer(data[24:end], dtype="<f8").astype(float)
    return SubsetTable(M=int(M), K=int(K), values=values, kind=kinds[magic])
