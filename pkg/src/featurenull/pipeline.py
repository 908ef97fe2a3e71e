"""End-to-end model training: extract, sample, cluster, fit, attach."""

from __future__ import annotations

from dataclasses import dataclass

from . import corpus, orb
from .cluster import ReducedKMeans
from .density import CategoricalMixtureDensity, attach_artifacts
from .errors import InvalidArgumentError


@dataclass
class RunConfig:
    """Operator-facing knobs with their documented defaults."""
    clusters: int = 2000
    sample_fraction: float = 1.0
    seed: int = 20190601
    max_keypoints: int = 500
    stride: int = 3
    n_levels: int = 8
    scale_factor: float = 1.2
    fast_threshold: int = 20


@dataclass
class TrainResult:
    model: CategoricalMixtureDensity
    manifest: corpus.CorpusManifest
    extracted: int
    sampled: int
    inertia: float
    n_iter: int


def train_null_model(corpus_dir, config: RunConfig, threads: int = 1) -> TrainResult:
    """Scan a corpus and fit the serializable null model.

    Pipeline: walk + decode, top-N keypoints + descriptors per image,
    popcount reduction, seeded subsampling, k-means++ and Lloyd, then the
    smoothed categorical mixture over the final assignments.
    """
    pattern = orb.make_brief_pattern()
    manifest, store = corpus.extract_corpus(
        corpus_dir, config.max_keypoints, pattern,
        n_levels=config.n_levels, scale_factor=config.scale_factor,
        fast_threshold=config.fast_threshold, threads=threads)
    sampled = corpus.sample_features(store, config.sample_fraction, config.seed)
    if sampled.count < config.clusters:
        raise InvalidArgumentError(
            f"only {sampled.count} feature records for {config.clusters} clusters; "
            f"use a smaller --clusters or more/larger images")
    try:
        km = ReducedKMeans(n_clusters=config.clusters, seed=config.seed).fit(
            sampled.vectors.astype(float))
    except InvalidArgumentError as exc:
        raise InvalidArgumentError(f"{exc}; use a smaller --clusters") from exc
    model = CategoricalMixtureDensity().fit(
        sampled.vectors, km.labels_, n_clusters=config.clusters)
    attach_artifacts(model, km.cluster_centers_, pattern)
    return TrainResult(model=model, manifest=manifest, extracted=store.count,
                       sampled=sampled.count, inertia=km.inertia_, n_iter=km.n_iter_)
