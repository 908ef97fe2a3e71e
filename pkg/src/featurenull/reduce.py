"""Popcount dimensionality reduction of 256-bit descriptors.

A descriptor is stored packed, 32 bytes, bit ``i`` being bit ``i % 8`` of
byte ``i // 8``. Reduction maps each run of 16 bits to its popcount,
giving 16 integer components in [0, 16].
"""

from __future__ import annotations

import csv

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import stats
from .errors import DegenerateInputError, InvalidArgumentError
from .validation import (
    DESCRIPTOR_BYTES,
    GROUP_BITS,
    N_BITS,
    N_GROUPS,
    check_descriptors,
    check_reduced,
)

_POPCOUNT8 = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)


def reduce_descriptors(descriptors) -> np.ndarray:
    """Reduce packed descriptors (n, 32) to popcount vectors (n, 16)."""
    d = check_descriptors(descriptors)
    bits = np.unpackbits(d, axis=1, bitorder="little")
    return bits.reshape(-1, N_GROUPS, GROUP_BITS).sum(axis=2).astype(np.uint8)


def reduce_descriptor(descriptor) -> np.ndarray:
    """Reduce one packed 256-bit descriptor to its 16 popcount components."""
    return reduce_descriptors(descriptor)[0]


def hamming(a, b) -> int:
    """Number of differing bits between two packed descriptors."""
    av = check_descriptors(a)[0]
    bv = check_descriptors(b)[0]
    return int(_POPCOUNT8[av ^ bv].sum())


def sq_euclidean(u, v) -> int:
    """Squared Euclidean distance between two reduced vectors."""
    uv = check_reduced(u)[0].astype(np.int64)
    vv = check_reduced(v)[0].astype(np.int64)
    return int(((uv - vv) ** 2).sum())


class PopcountReducer(TransformerMixin, BaseEstimator):
    """Stateless transformer from packed descriptors to reduced vectors.

    Exists so the reduction step can sit inside scikit-learn pipelines;
    `transform` is equivalent to :func:`reduce_descriptors`.
    """

    def fit(self, X, y=None):
        check_descriptors(X)
        return self

    def transform(self, X):
        return reduce_descriptors(X)


def _flip_partners(base_bits: np.ndarray, d: int, rng: np.random.Generator) -> np.ndarray:
    """Flip d distinct uniformly chosen bits in each row."""
    n = base_bits.shape[0]
    order = rng.random((n, N_BITS)).argpartition(d - 1, axis=1)[:, :d]
    partner = base_bits.copy()
    partner[np.arange(n)[:, None], order] ^= 1
    return partner


def _reduce_bits(bits: np.ndarray) -> np.ndarray:
    return bits.reshape(-1, N_GROUPS, GROUP_BITS).sum(axis=2, dtype=np.int64)


def correlation_experiment(
    pairs_per_distance: int,
    d_max: int = 30,
    seed: int = 20190601,
    csv_path=None,
    _chunk: int = 20_000,
):
    """Measure how well reduction preserves descriptor similarity.

    For each hamming distance d = 1..d_max, draws `pairs_per_distance`
    uniform random descriptors, flips d distinct bits to form partners,
    and correlates d against the squared Euclidean distance of the
    reduced pair. Returns (rho, p_value). Each distance uses its own
    derived seed (seed + d), so the run parallelizes deterministically.

    When `csv_path` is given, writes per-distance rows
    (d, mean_sq_euclidean, variance).
    """
    if pairs_per_distance < 100:
        raise InvalidArgumentError(
            f"pairs_per_distance must be >= 100, got {pairs_per_distance}")
    if not 1 <= d_max <= N_BITS:
        raise InvalidArgumentError(f"d_max must lie in [1, {N_BITS}], got {d_max}")

    # exact integer moment sums; combined with Python ints to avoid overflow
    n_total = 0
    sx = sy = sxx = syy = sxy = 0
    per_d = []
    for d in range(1, d_max + 1):
        rng = np.random.default_rng(seed + d)
        sum_y = sum_yy = 0
        remaining = pairs_per_distance
        while remaining > 0:
            m = min(remaining, _chunk)
            remaining -= m
            base = rng.integers(0, 2, size=(m, N_BITS), dtype=np.uint8)
            partner = _flip_partners(base, d, rng)
            diff = _reduce_bits(base) - _reduce_bits(partner)
            y = (diff * diff).sum(axis=1)
            sum_y += int(y.sum())
            sum_yy += int((y * y).sum())
        n = pairs_per_distance
        n_total += n
        sx += d * n
        sxx += d * d * n
        sy += sum_y
        syy += sum_yy
        sxy += d * sum_y
        mean = sum_y / n
        var = (sum_yy - n * mean * mean) / (n - 1)
        per_d.append((d, mean, var))

    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["d", "mean_sq_euclidean", "variance"])
            for row in per_d:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])

    var_x = n_total * sxx - sx * sx
    var_y = n_total * syy - sy * sy
    if var_x == 0 or var_y == 0:
        which = "hamming distances" if var_x == 0 else "squared Euclidean distances"
        raise DegenerateInputError(
            f"correlation undefined: zero variance in {which} (d_max={d_max})")
    rho = (n_total * sxy - sx * sy) / (var_x * var_y) ** 0.5
    return rho, stats.pearson_p_from_r(rho, n_total)
