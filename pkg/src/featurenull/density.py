"""Generative null model: per-cluster independent categoricals.

Each cluster j carries a weight |C_j|/N and, per component i, an
add-one-smoothed categorical over the component's values. The log
probability of a vector is the log-sum-exp over clusters of
sum_i ln p(x_i | C_j) + ln p(C_j).
"""

from __future__ import annotations

import os
import struct

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin

from .errors import (
    DataError,
    InvalidArgumentError,
    ModelFormatError,
    ModelMagicError,
    ModelTruncatedError,
    ModelVersionError,
)
from .orb import BriefPattern

MODEL_MAGIC = b"FNDM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQQqIII")


def log_sum_exp(values) -> float:
    """ln of the sum of exponentials, stable under large negative inputs."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgumentError("log_sum_exp needs a non-empty 1-D sequence")
    m = float(v.max())
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.exp(v - m).sum()))


def _logsumexp_rows(ll: np.ndarray) -> np.ndarray:
    m = ll.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(ll - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(m), out, m)


class CategoricalMixtureDensity(DensityMixin, BaseEstimator):
    """Mixture of per-cluster independent categorical distributions.

    Parameters
    ----------
    n_categories : int, default 17
        Number of values each component can take (0 .. n_categories-1).
        17 matches popcounts of 16-bit groups; the smoothing denominator
        adds exactly this count so every categorical sums to 1.
    tolerate_empty : bool, default False
        When True, empty clusters get weight -inf (probability zero)
        instead of raising; their categorical tables are uniform.

    Attributes set by `fit`
    -----------------------
    n_clusters_, n_features_in_, n_samples_ : int
    log_weights_ : (K,) float64, ln p(C_j)
    log_tables_ : (K, F, C) float64, ln p(x_i = a | C_j)

    The serialized artifact additionally carries `centroids_` (K, F),
    `pattern_` (the descriptor sampling pattern) and `meta_`.
    """

    def __init__(self, n_categories: int = 17, tolerate_empty: bool = False):
        self.n_categories = n_categories
        self.tolerate_empty = tolerate_empty

    def _validate_vectors(self, X, n_features=None) -> np.ndarray:
        arr = np.asarray(X)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise InvalidArgumentError(f"X must be 2-D, got ndim={arr.ndim}")
        if not np.issubdtype(arr.dtype, np.integer):
            cast = arr.astype(np.int64)
            if arr.size and not np.array_equal(cast, arr):
                raise InvalidArgumentError("components must be integers")
            arr = cast
        if n_features is not None and arr.shape[1] != n_features:
            raise InvalidArgumentError(
                f"expected {n_features} components per row, got {arr.shape[1]}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.n_categories):
            raise InvalidArgumentError(
                f"components must lie in [0, {self.n_categories - 1}]")
        return arr.astype(np.int64)

    def fit(self, X, y, n_clusters: int | None = None):
        """Estimate weights and smoothed tables from vectors and assignments.

        Parameters
        ----------
        X : (n, F) integer array of reduced feature vectors.
        y : (n,) cluster assignments in [0, n_clusters).
        n_clusters : cluster count; inferred as max(y) + 1 when omitted.
        """
        X = self._validate_vectors(X)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidArgumentError("y must be 1-D with one label per row of X")
        n = X.shape[0]
        if n == 0:
            raise DataError("cannot fit a density model on zero samples")
        y = y.astype(np.int64)
        if y.min() < 0:
            raise InvalidArgumentError("cluster assignments must be non-negative")
        k = int(n_clusters) if n_clusters is not None else int(y.max()) + 1
        if y.max() >= k:
            raise InvalidArgumentError(
                f"assignment {int(y.max())} out of range for {k} clusters")

        c = self.n_categories
        sizes = np.bincount(y, minlength=k)
        if not self.tolerate_empty and (sizes == 0).any():
            j = int(np.flatnonzero(sizes == 0)[0])
            raise DataError(
                f"cluster {j} is empty; reseed clusters or pass tolerate_empty=True")

        with np.errstate(divide="ignore"):
            log_weights = np.log(sizes / n)

        f = X.shape[1]
        tables = np.empty((k, f, c), dtype=np.float64)
        flat_base = y * c
        for i in range(f):
            counts = np.bincount(flat_base + X[:, i], minlength=k * c).reshape(k, c)
            tables[:, i, :] = np.log((counts + 1) / (sizes[:, None] + c))

        self.n_clusters_ = k
        self.n_features_in_ = f
        self.n_samples_ = n
        self.log_weights_ = log_weights
        self.log_tables_ = tables
        return self

    def _check_fitted(self):
        if not hasattr(self, "log_tables_"):
            raise InvalidArgumentError("model is not fitted")

    def score_samples(self, X) -> np.ndarray:
        """ln p(x) for each row of X."""
        self._check_fitted()
        X = self._validate_vectors(X, self.n_features_in_)
        ll = np.broadcast_to(self.log_weights_, (X.shape[0], self.n_clusters_)).copy()
        for i in range(self.n_features_in_):
            ll += self.log_tables_[:, i, X[:, i]].T
        return _logsumexp_rows(ll)

    def log_prob(self, x) -> float:
        """ln p of a single reduced vector."""
        return float(self.score_samples(np.asarray(x)[None, :] if np.asarray(x).ndim == 1 else x)[0])

    def score(self, X, y=None) -> float:
        """Mean ln p over the rows of X."""
        return float(self.score_samples(X).mean())


def _default_meta(n_samples: int) -> dict:
    # created comes from SOURCE_DATE_EPOCH (else 0) so that identical
    # training runs serialize to byte-identical files
    return {
        "n_samples": int(n_samples),
        "created": int(os.environ.get("SOURCE_DATE_EPOCH", "0")),
        "version": MODEL_VERSION,
    }


def attach_artifacts(model: CategoricalMixtureDensity, centroids, pattern: BriefPattern,
                     meta: dict | None = None) -> CategoricalMixtureDensity:
    """Attach the serialization payload a bare fitted estimator lacks."""
    model._check_fitted()
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape != (model.n_clusters_, model.n_features_in_):
        raise InvalidArgumentError(
            f"centroids must have shape ({model.n_clusters_}, {model.n_features_in_})")
    model.centroids_ = centroids
    model.pattern_ = pattern
    model.meta_ = dict(meta) if meta is not None else _default_meta(model.n_samples_)
    return model


def save_model(model: CategoricalMixtureDensity, path) -> None:
    """Write the fitted model, centroids and pattern as one binary file."""
    model._check_fitted()
    if getattr(model, "pattern_", None) is None or getattr(model, "centroids_", None) is None:
        raise InvalidArgumentError(
            "model lacks centroids_/pattern_; call attach_artifacts() first")
    pat = model.pattern_
    meta = getattr(model, "meta_", None) or _default_meta(model.n_samples_)
    header = _HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        model.n_clusters_,
        model.n_features_in_,
        model.n_categories,
        int(meta["n_samples"]),
        int(meta["created"]),
        int(pat.seed),
        pat.pairs.shape[0],
        pat.rotated.shape[0],
        int(pat.patch_radius),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.log_weights_, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.log_tables_, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.centroids_, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(pat.pairs, dtype="i1").tobytes())
        fh.write(np.ascontiguousarray(pat.rotated, dtype="i1").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ModelTruncatedError(
            f"model file ends inside {what}: wanted {count} bytes, got {len(data)}")
    return data


def load_model(path) -> CategoricalMixtureDensity:
    """Read a model file; the inverse of `save_model`, bit-exact."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < 4 or raw[:4] != MODEL_MAGIC:
            raise ModelMagicError(f"not a model file (bad magic): {path}")
        if len(raw) != _HEADER.size:
            raise ModelTruncatedError("model file ends inside the header")
        (_, version, k, f, c, n_samples, created, pat_seed,
         n_pairs, n_templates, patch_radius) = _HEADER.unpack(raw)
        if version != MODEL_VERSION:
            raise ModelVersionError(
                f"unsupported model version {version} (expected {MODEL_VERSION})")

        def read_f8(count, what):
            return np.frombuffer(_read_exact(fh, count * 8, what), dtype="<f8").copy()

        log_weights = read_f8(k, "cluster weights")
        log_tables = read_f8(k * f * c, "categorical tables").reshape(k, f, c)
        centroids = read_f8(k * f, "centroids").reshape(k, f)
        pairs = np.frombuffer(
            _read_exact(fh, n_pairs * 4, "pattern"), dtype="i1").copy().reshape(n_pairs, 2, 2)
        rotated = np.frombuffer(
            _read_exact(fh, n_templates * n_pairs * 4, "rotated templates"),
            dtype="i1").copy().reshape(n_templates, n_pairs, 2, 2)
        if fh.read(1):
            raise ModelFormatError("model file has trailing bytes after payload")

    model = CategoricalMixtureDensity(n_categories=c)
    model.n_clusters_ = k
    model.n_features_in_ = f
    model.n_samples_ = int(n_samples)
    model.log_weights_ = log_weights
    model.log_tables_ = log_tables
    model.centroids_ = centroids
    model.pattern_ = BriefPattern(
        pairs=pairs, rotated=rotated, patch_radius=patch_radius, seed=pat_seed)
    model.meta_ = {"n_samples": int(n_samples), "created": int(created), "version": version}
    return model
