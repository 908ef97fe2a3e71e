"""featurenull: null model of scientific-image features.

Estimates how probable an image feature is across a corpus and renders
per-pixel rarity maps plus group-level statistics.
"""

from .cluster import Clustering, ReducedKMeans, assign, kmeans_pp_seed, lloyd
from .corpus import (
    CorpusManifest,
    FeatureStore,
    ManifestEntry,
    extract_corpus,
    load_grayscale,
    read_manifest,
    read_store,
    sample_features,
    scan_corpus,
    write_manifest,
    write_store,
)
from .density import (
    CategoricalMixtureDensity,
    attach_artifacts,
    load_model,
    log_sum_exp,
    save_model,
)
from .orb import (
    BriefPattern,
    Keypoint,
    Pyramid,
    brief_descriptor,
    build_pyramid,
    descriptor_at_point,
    detect_fast,
    detect_keypoints,
    harris_response,
    make_brief_pattern,
    orientation,
    top_keypoints,
)
from .pipeline import RunConfig, TrainResult, train_null_model
from .probmap import (
    ProbabilityMap,
    auto_mask,
    interpolate,
    mean_log_prob,
    render_heatmap,
    score_grid,
    write_grid_binary,
    write_grid_csv,
)
from .reduce import (
    PopcountReducer,
    correlation_experiment,
    hamming,
    reduce_descriptor,
    reduce_descriptors,
    sq_euclidean,
)
from .stats import TestResult, pearson, student_t_cdf, welch_t_test

__version__ = "0.1.0"

__all__ = [
    "BriefPattern", "CategoricalMixtureDensity", "Clustering", "CorpusManifest",
    "FeatureStore", "Keypoint", "ManifestEntry", "PopcountReducer",
    "ProbabilityMap", "Pyramid", "ReducedKMeans", "RunConfig", "TestResult",
    "TrainResult", "assign", "attach_artifacts", "auto_mask",
    "brief_descriptor", "build_pyramid", "correlation_experiment",
    "descriptor_at_point", "detect_fast", "detect_keypoints", "extract_corpus",
    "hamming", "harris_response", "interpolate", "kmeans_pp_seed",
    "load_grayscale", "load_model", "lloyd", "log_sum_exp", "make_brief_pattern",
    "mean_log_prob", "orientation", "pearson", "read_manifest", "read_store",
    "reduce_descriptor", "reduce_descriptors", "render_heatmap",
    "sample_features", "save_model", "scan_corpus", "score_grid",
    "sq_euclidean", "student_t_cdf", "top_keypoints", "train_null_model",
    "welch_t_test", "write_grid_binary", "write_grid_csv", "write_manifest",
    "write_store",
]
