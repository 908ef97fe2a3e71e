"""k-means over reduced feature vectors: k-means++ seeding plus Lloyd.

Everything is deterministic for a fixed seed: assignment ties go to the
lowest cluster index, per-cluster sums accumulate in ascending point
order (bincount semantics), and empty clusters are reseeded to the point
currently farthest from its centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .errors import InvalidArgumentError
from .validation import check_positive_int

DEFAULT_N_CLUSTERS = 2000
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4
_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class Clustering:
    centroids: np.ndarray      # (K, F) float64
    assignments: np.ndarray    # (n,) int64
    sizes: np.ndarray          # (K,) int64
    inertia: float
    n_iter: int


def _as_points(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError("data must be a non-empty 2-D array of points")
    return x


def _assign_chunked(x: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per point (ties to lowest index) and its squared distance."""
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n, dtype=np.float64)
    c_norm = (centroids * centroids).sum(axis=1)
    ct = centroids.T
    for start in range(0, n, _CHUNK_ROWS):
        chunk = x[start:start + _CHUNK_ROWS]
        d = (chunk * chunk).sum(axis=1)[:, None] + c_norm[None, :] - 2.0 * (chunk @ ct)
        lab = d.argmin(axis=1)
        rows = np.arange(chunk.shape[0])
        labels[start:start + _CHUNK_ROWS] = lab
        dist2[start:start + _CHUNK_ROWS] = np.maximum(d[rows, lab], 0.0)
    return labels, dist2


def assign(x, centroids) -> int:
    """Index of the nearest centroid by squared Euclidean distance."""
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0:
        raise InvalidArgumentError("centroids must be a non-empty 2-D array")
    pt = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if pt.shape[1] != c.shape[1]:
        raise InvalidArgumentError(
            f"point has {pt.shape[1]} components, centroids have {c.shape[1]}")
    labels, _ = _assign_chunked(pt, c)
    return int(labels[0])


def kmeans_pp_seed(data, n_clusters: int, seed: int) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, then D^2 sampling."""
    x = _as_points(data)
    k = check_positive_int(n_clusters, "n_clusters")
    n_distinct = np.unique(x, axis=0).shape[0]
    if k > n_distinct:
        raise InvalidArgumentError(
            f"n_clusters={k} exceeds the {n_distinct} distinct points available")
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    diff = x - centroids[0]
    min_d2 = (diff * diff).sum(axis=1)
    for j in range(1, k):
        probs = min_d2 / min_d2.sum()
        idx = int(rng.choice(n, p=probs))
        centroids[j] = x[idx]
        diff = x - centroids[j]
        np.minimum(min_d2, (diff * diff).sum(axis=1), out=min_d2)
    return centroids


def _reseed_empty(x, centroids, labels, dist2, sizes):
    """Move each empty cluster onto the point farthest from its centroid."""
    for j in np.flatnonzero(sizes == 0):
        idx = int(dist2.argmax())
        old = labels[idx]
        centroids[j] = x[idx]
        labels[idx] = j
        dist2[idx] = 0.0
        sizes[old] -= 1
        sizes[j] += 1


def lloyd(data, centroids, max_iter: int = DEFAULT_MAX_ITER,
          tol: float = DEFAULT_TOL) -> Clustering:
    """Lloyd iterations from the given initial centroids.

    Stops when the largest centroid displacement drops below `tol` or after
    `max_iter` rounds. Inertia is checked to be non-increasing every round.
    """
    x = _as_points(data)
    c = np.array(centroids, dtype=np.float64, copy=True)
    if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] != x.shape[1]:
        raise InvalidArgumentError("centroids must be non-empty with matching width")
    check_positive_int(max_iter, "max_iter")
    k = c.shape[0]

    labels, dist2 = _assign_chunked(x, c)
    sizes = np.bincount(labels, minlength=k)
    _reseed_empty(x, c, labels, dist2, sizes)
    prev_inertia = float(dist2.sum())
    inertia = prev_inertia
    n_iter = 0
    for it in range(1, max_iter + 1):
        sums = np.empty_like(c)
        for f in range(x.shape[1]):
            sums[:, f] = np.bincount(labels, weights=x[:, f], minlength=k)
        new_c = sums / sizes[:, None]
        shift = float(np.sqrt(((new_c - c) ** 2).sum(axis=1)).max())
        c = new_c

        labels, dist2 = _assign_chunked(x, c)
        sizes = np.bincount(labels, minlength=k)
        _reseed_empty(x, c, labels, dist2, sizes)
        inertia = float(dist2.sum())
        assert inertia <= prev_inertia * (1.0 + 1e-12) + 1e-9, \
            f"inertia increased: {prev_inertia} -> {inertia}"
        prev_inertia = inertia
        n_iter = it
        if shift < tol:
            break
    return Clustering(centroids=c, assignments=labels, sizes=sizes,
                      inertia=inertia, n_iter=n_iter)


class ReducedKMeans(ClusterMixin, BaseEstimator):
    """k-means estimator over reduced feature vectors.

    Parameters
    ----------
    n_clusters : int, default 2000
    seed : int, default 20190601
        Seeds the k-means++ initialization.
    max_iter : int, default 100
    tol : float, default 1e-4
        Convergence threshold on the largest centroid displacement.

    Attributes after `fit`: `cluster_centers_`, `labels_`, `cluster_sizes_`,
    `inertia_`, `n_iter_`.
    """

    def __init__(self, n_clusters: int = DEFAULT_N_CLUSTERS, seed: int = 20190601,
                 max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        x = _as_points(X)
        seeds = kmeans_pp_seed(x, self.n_clusters, self.seed)
        result = lloyd(x, seeds, max_iter=self.max_iter, tol=self.tol)
        self.cluster_centers_ = result.centroids
        self.labels_ = result.assignments
        self.cluster_sizes_ = result.sizes
        self.inertia_ = result.inertia
        self.n_iter_ = result.n_iter
        return self

    def predict(self, X):
        if not hasattr(self, "cluster_centers_"):
            raise InvalidArgumentError("estimator is not fitted")
        labels, _ = _assign_chunked(_as_points(X), self.cluster_centers_)
        return labels
