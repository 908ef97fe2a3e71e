"""Corpus walking, grayscale decoding, feature stores and subsampling.

Manifests list images in lexicographic order of their root-relative
POSIX paths, which makes image indices stable across runs and machines.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import orb
from .errors import ImageDecodeError, ImageTooSmallError, InvalidArgumentError, StoreFormatError
from .reduce import reduce_descriptors
from .validation import N_GROUPS, check_fraction, check_positive_int

logger = logging.getLogger(__name__)

STORE_MAGIC = b"FNFS"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIQ")
_RECORD_DTYPE = np.dtype([("image_index", "<u4"), ("reduced", "u1", (N_GROUPS,))])

# ITU-R BT.601 luma weights; the conversion rounds half-up
_LUMA = np.array([0.299, 0.587, 0.114])

DEFAULT_MAX_KEYPOINTS = 500


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    width: int
    height: int
    keypoint_count: int


@dataclass
class CorpusManifest:
    entries: list
    total_images: int
    skipped: int = 0


@dataclass
class FeatureStore:
    """Reduced feature vectors with the index of their source image."""
    image_indices: np.ndarray      # (n,) uint32
    vectors: np.ndarray            # (n, 16) uint8

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @classmethod
    def empty(cls) -> "FeatureStore":
        return cls(np.empty(0, np.uint32), np.empty((0, N_GROUPS), np.uint8))


def load_grayscale(path) -> np.ndarray:
    """Decode any raster image to 8-bit grayscale.

    Color inputs are converted with BT.601 weights (0.299/0.587/0.114),
    rounded half-up; alpha is composited over white first.
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8)
            has_alpha = im.mode in ("RGBA", "LA", "PA") or (
                im.mode == "P" and "transparency" in im.info)
            if has_alpha:
                rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
                a = rgba[..., 3:4] / 255.0
                rgb = rgba[..., :3] * a + 255.0 * (1.0 - a)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise ImageDecodeError(path, str(exc)) from exc
    y = rgb @ _LUMA
    return np.clip(np.floor(y + 0.5), 0.0, 255.0).astype(np.uint8)


def _sorted_files(root) -> list:
    rootp = Path(root)
    if not rootp.is_dir():
        raise InvalidArgumentError(f"corpus root is not a directory: {root}")
    files = [p for p in rootp.rglob("*") if p.is_file()]
    files.sort(key=lambda p: p.relative_to(rootp).as_posix())
    return files


def run_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def scan_corpus(root, max_keypoints: int = DEFAULT_MAX_KEYPOINTS, *,
                n_levels: int = orb.DEFAULT_N_LEVELS,
                scale_factor: float = orb.DEFAULT_SCALE_FACTOR,
                fast_threshold: int = orb.DEFAULT_FAST_THRESHOLD,
                threads: int = 1) -> CorpusManifest:
    """Walk `root`, decode every file, and list the decodable images.

    Undecodable files are skipped with a warning and counted in
    `manifest.skipped`. Entries appear in lexicographic path order.
    """
    check_positive_int(max_keypoints, "max_keypoints")
    rootp = Path(root)
    files = _sorted_files(rootp)

    def probe(path):
        rel = path.relative_to(rootp).as_posix()
        try:
            img = load_grayscale(path)
        except ImageDecodeError as exc:
            return ("skip", rel, str(exc))
        try:
            kps = orb.detect_keypoints(
                img, max_keypoints, n_levels=n_levels,
                scale_factor=scale_factor, fast_threshold=fast_threshold)
            count = len(kps)
        except ImageTooSmallError:
            count = 0
        return ("ok", ManifestEntry(rel, img.shape[1], img.shape[0], count), None)

    entries = []
    skipped = 0
    for status, payload, detail in run_ordered(probe, files, threads):
        if status == "ok":
            entries.append(payload)
        else:
            skipped += 1
            logger.warning("skipping undecodable file %s: %s", payload, detail)
    return CorpusManifest(entries=entries, total_images=len(entries), skipped=skipped)


def extract_corpus(root, max_keypoints: int, pattern, *,
                   n_levels: int = orb.DEFAULT_N_LEVELS,
                   scale_factor: float = orb.DEFAULT_SCALE_FACTOR,
                   fast_threshold: int = orb.DEFAULT_FAST_THRESHOLD,
                   threads: int = 1):
    """Scan and describe in one pass: (manifest, FeatureStore)."""
    check_positive_int(max_keypoints, "max_keypoints")
    rootp = Path(root)
    files = _sorted_files(rootp)

    def extract(path):
        rel = path.relative_to(rootp).as_posix()
        try:
            img = load_grayscale(path)
        except ImageDecodeError as exc:
            return ("skip", rel, str(exc), None)
        try:
            pairs = orb.top_keypoints(
                img, max_keypoints, pattern, n_levels=n_levels,
                scale_factor=scale_factor, fast_threshold=fast_threshold)
        except ImageTooSmallError:
            pairs = []
        if pairs:
            descs = np.stack([d for _, d in pairs])
            vecs = reduce_descriptors(descs)
        else:
            vecs = np.empty((0, N_GROUPS), np.uint8)
        entry = ManifestEntry(rel, img.shape[1], img.shape[0], len(pairs))
        return ("ok", entry, None, vecs)

    entries = []
    skipped = 0
    index_parts = []
    vector_parts = []
    for status, payload, detail, vecs in run_ordered(extract, files, threads):
        if status != "ok":
            skipped += 1
            logger.warning("skipping undecodable file %s: %s", payload, detail)
            continue
        image_index = len(entries)
        entries.append(payload)
        if vecs.shape[0]:
            index_parts.append(np.full(vecs.shape[0], image_index, np.uint32))
            vector_parts.append(vecs)
    manifest = CorpusManifest(entries=entries, total_images=len(entries), skipped=skipped)
    if vector_parts:
        store = FeatureStore(np.concatenate(index_parts), np.concatenate(vector_parts))
    else:
        store = FeatureStore.empty()
    return manifest, store


def sample_features(store: FeatureStore, fraction: float, seed: int) -> FeatureStore:
    """Seeded sampling without replacement, keeping record order.

    The output holds round(fraction * count) records (round half-up).
    """
    f = check_fraction(fraction)
    n = store.count
    k = int(np.floor(f * n + 0.5))
    if k >= n:
        return FeatureStore(store.image_indices.copy(), store.vectors.copy())
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return FeatureStore(store.image_indices[idx].copy(), store.vectors[idx].copy())


# --- persistence -------------------------------------------------------------

def write_manifest(manifest: CorpusManifest, path) -> None:
    """One JSON object per line: path, width, height, keypoint_count."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(json.dumps(
                {"path": e.path, "width": e.width, "height": e.height,
                 "keypoint_count": e.keypoint_count},
                ensure_ascii=False) + "\n")


def read_manifest(path) -> CorpusManifest:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entries.append(ManifestEntry(
                obj["path"], int(obj["width"]), int(obj["height"]),
                int(obj["keypoint_count"])))
    return CorpusManifest(entries=entries, total_images=len(entries))


def write_store(store: FeatureStore, path) -> None:
    """Little-endian binary: magic, u32 version, u64 count, then records."""
    records = np.empty(store.count, dtype=_RECORD_DTYPE)
    records["image_index"] = store.image_indices
    records["reduced"] = store.vectors
    with open(path, "wb") as fh:
        fh.write(_STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, store.count))
        fh.write(records.tobytes())


def read_store(path) -> FeatureStore:
    with open(path, "rb") as fh:
        head = fh.read(_STORE_HEADER.size)
        if len(head) < 4 or head[:4] != STORE_MAGIC:
            raise StoreFormatError(f"not a feature store (bad magic): {path}")
        if len(head) != _STORE_HEADER.size:
            raise StoreFormatError("feature store ends inside the header")
        _, version, count = _STORE_HEADER.unpack(head)
        if version != STORE_VERSION:
            raise StoreFormatError(f"unsupported feature store version {version}")
        payload = fh.read()
    expected = count * _RECORD_DTYPE.itemsize
    if len(payload) != expected:
        raise StoreFormatError(
            f"feature store payload is {len(payload)} bytes, expected {expected}")
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    return FeatureStore(records["image_index"].copy(), records["reduced"].copy())
