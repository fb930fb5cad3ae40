"""Gallery data model, on-disk JSON format, and the synthetic generator.

A dataset bundles a gallery of images (region feature matrices, object-index
sets, captions), an object-word vocabulary, and a word-embedding table that
places words in the same space as the region features.  The synthetic
generator builds galleries where captions, objects, and region features are
aligned by construction, so retrieval experiments run without any external
feature-extraction pipeline.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidConfig, ParseError, SchemaError

SCHEMA_VERSION = 1
_UNIT_TOL = 1e-9

# Constants of the synthetic generative process.  Word frequencies follow a
# Zipf-like power law; the vocabulary is interleaved into co-occurrence
# clusters so some object pairs appear together far more often than chance.
ZIPF_EXPONENT = 0.7
CLUSTER_SIZE = 10
IN_CLUSTER_PROB = 0.5
CAPTION_LENGTH_PROBS = (0.45, 0.35, 0.20)  # 1, 2, or 3 words

KNOWN_SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GalleryImage:
    """One gallery entry: region features, object indices, captions."""

    id: str
    regions: np.ndarray            # (M, d) float64, unit rows
    objects: np.ndarray            # sorted unique vocab indices, int32
    captions: tuple[str, ...]
    split: str = "train"
    url: str | None = None

    @property
    def n_regions(self) -> int:
        return self.regions.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Immutable gallery + vocabulary + embedding table."""

    version: int
    feature_dim: int
    vocab: tuple[str, ...]
    embeddings: np.ndarray         # (|vocab|, d) float64, rows aligned to vocab
    images: tuple[GalleryImage, ...]
    rng_seed: int | None = None

    @cached_property
    def word_index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.vocab)}

    @cached_property
    def id_index(self) -> dict[str, int]:
        return {img.id: i for i, img in enumerate(self.images)}

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def split_indices(self, split: str) -> np.ndarray:
        """Positions of all images tagged with ``split``."""
        return np.array([i for i, img in enumerate(self.images) if img.split == split],
                        dtype=np.int64)


@dataclass(frozen=True)
class ObjectPresenceIndex:
    """Object-by-image presence bitmap with per-object gallery counts."""

    presence: np.ndarray           # (|vocab|, N) bool
    counts: np.ndarray             # (|vocab|,) int64 row popcounts

    @property
    def n_images(self) -> int:
        return self.presence.shape[1]


@dataclass
class ValidationReport:
    """All invariant violations found in a dataset (empty list = valid)."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    """Normalize rows to unit length.

    Rows already unit within tolerance are left untouched so that datasets
    written by this package round-trip bit-exactly; zero rows stay zero.
    """
    out = np.array(x, dtype=np.float64)
    norms = np.linalg.norm(out, axis=-1)
    fix = (np.abs(norms - 1.0) > _UNIT_TOL) & (norms > 1e-12)
    if np.any(fix):
        out[fix] /= norms[fix, None]
    return out


# ---------------------------------------------------------------------------
# On-disk format


def _schema_error(msg: str) -> SchemaError:
    return SchemaError(msg)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise _schema_error(f"{where}: missing field '{key}'")
    return doc[key]


def _as_float_matrix(rows, dim: int, where: str) -> np.ndarray:
    if not isinstance(rows, list) or not rows:
        raise _schema_error(f"{where}: expected a non-empty list of {dim}-vectors")
    mat = []
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != dim:
            actual = len(row) if isinstance(row, list) else type(row).__name__
            raise _schema_error(f"{where}: row {r} has dimension {actual}, expected {dim}")
        mat.append(row)
    arr = np.asarray(mat, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise _schema_error(f"{where}: non-finite feature value")
    return arr


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Load and validate a dataset JSON document.

    Raises ParseError for malformed JSON and SchemaError (naming the
    offending image or field) for structural violations.  Region features
    and embeddings are normalized to unit rows on load.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read dataset file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed dataset document: {exc}") from exc
    if not isinstance(doc, dict):
        raise _schema_error("top level: expected a JSON object")

    version = _require(doc, "version", "top level")
    if version != SCHEMA_VERSION:
        raise _schema_error(f"top level: unsupported version {version!r}")
    dim = _require(doc, "feature_dim", "top level")
    if not isinstance(dim, int) or dim < 1:
        raise _schema_error("top level: feature_dim must be a positive integer")
    vocab = _require(doc, "vocab", "top level")
    if not isinstance(vocab, list) or not vocab or not all(isinstance(w, str) for w in vocab):
        raise _schema_error("top level: vocab must be a non-empty list of strings")
    if len(set(vocab)) != len(vocab):
        raise _schema_error("top level: vocab contains duplicate words")

    raw_emb = _require(doc, "embeddings", "top level")
    if not isinstance(raw_emb, dict):
        raise _schema_error("top level: embeddings must be a word -> vector map")
    emb = np.zeros((len(vocab), dim), dtype=np.float64)
    for i, word in enumerate(vocab):
        if word not in raw_emb:
            raise _schema_error(f"embeddings: missing vector for vocab word '{word}'")
        emb[i] = _as_float_matrix([raw_emb[word]], dim, f"embeddings['{word}']")[0]
    emb = _unit_rows(emb)

    raw_images = _require(doc, "images", "top level")
    if not isinstance(raw_images, list):
        raise _schema_error("top level: images must be a list")
    images: list[GalleryImage] = []
    seen_ids: set[str] = set()
    for pos, item in enumerate(raw_images):
        if not isinstance(item, dict):
            raise _schema_error(f"images[{pos}]: expected an object")
        img_id = _require(item, "id", f"images[{pos}]")
        if not isinstance(img_id, str) or not img_id:
            raise _schema_error(f"images[{pos}]: id must be a non-empty string")
        where = f"image '{img_id}'"
        if img_id in seen_ids:
            raise _schema_error(f"{where}: duplicate image id")
        seen_ids.add(img_id)
        regions = _unit_rows(_as_float_matrix(_require(item, "regions", where), dim,
                                              f"{where}: regions"))
        raw_objects = _require(item, "objects", where)
        if (not isinstance(raw_objects, list) or not raw_objects
                or not all(isinstance(o, int) and not isinstance(o, bool) for o in raw_objects)):
            raise _schema_error(f"{where}: objects must be a non-empty list of integers")
        if len(set(raw_objects)) != len(raw_objects):
            raise _schema_error(f"{where}: duplicate object indices")
        for o in raw_objects:
            if o < 0 or o >= len(vocab):
                raise _schema_error(
                    f"{where}: object index {o} out of range for vocab size {len(vocab)}")
        captions = _require(item, "captions", where)
        if not isinstance(captions, list) or not captions or not all(
                isinstance(c, str) for c in captions):
            raise _schema_error(f"{where}: captions must be a non-empty list of strings")
        split = item.get("split", "train")
        if not isinstance(split, str):
            raise _schema_error(f"{where}: split must be a string")
        url = item.get("url")
        if url is not None and not isinstance(url, str):
            raise _schema_error(f"{where}: url must be a string")
        images.append(GalleryImage(
            id=img_id,
            regions=regions,
            objects=np.array(sorted(raw_objects), dtype=np.int32),
            captions=tuple(captions),
            split=split,
            url=url,
        ))

    seed = doc.get("rng_seed")
    if seed is not None and not isinstance(seed, int):
        raise _schema_error("top level: rng_seed must be an integer")
    return Dataset(version=SCHEMA_VERSION, feature_dim=dim, vocab=tuple(vocab),
                   embeddings=emb, images=tuple(images), rng_seed=seed)


def dataset_to_doc(dataset: Dataset) -> dict:
    """Dataset as a plain JSON-serializable document (schema v1)."""
    doc: dict = {
        "version": dataset.version,
        "feature_dim": dataset.feature_dim,
        "vocab": list(dataset.vocab),
        "embeddings": {w: dataset.embeddings[i].tolist()
                       for i, w in enumerate(dataset.vocab)},
        "images": [],
    }
    if dataset.rng_seed is not None:
        doc["rng_seed"] = dataset.rng_seed
    for img in dataset.images:
        entry = {
            "id": img.id,
            "regions": img.regions.tolist(),
            "objects": [int(o) for o in img.objects],
            "captions": list(img.captions),
            "split": img.split,
        }
        if img.url is not None:
            entry["url"] = img.url
        doc["images"].append(entry)
    return doc


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    """Write the dataset atomically (temp file + rename).

    Floats are serialized with Python's shortest round-trip representation,
    so load(save(D)) reproduces every value bit-exactly.
    """
    atomic_write_text(path, json.dumps(dataset_to_doc(dataset),
                                       ensure_ascii=False, separators=(",", ":")) + "\n")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write a text file atomically in the destination directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".objseek-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Structural equality with exact float comparison."""
    if (a.version, a.feature_dim, a.vocab, a.rng_seed) != (b.version, b.feature_dim,
                                                           b.vocab, b.rng_seed):
        return False
    if not np.array_equal(a.embeddings, b.embeddings):
        return False
    if len(a.images) != len(b.images):
        return False
    for x, y in zip(a.images, b.images):
        if (x.id, x.captions, x.split, x.url) != (y.id, y.captions, y.split, y.url):
            return False
        if not np.array_equal(x.regions, y.regions) or not np.array_equal(x.objects, y.objects):
            return False
    return True


# ---------------------------------------------------------------------------
# Synthetic generator

_SYLLABLES = (
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
    "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
    "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
    "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su",
    "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu",
)


def _make_word(i: int) -> str:
    k = len(_SYLLABLES)
    if i < k * k:
        return _SYLLABLES[i // k] + _SYLLABLES[i % k]
    i -= k * k
    if i < k * k * k:
        return _SYLLABLES[i // (k * k)] + _SYLLABLES[(i // k) % k] + _SYLLABLES[i % k]
    raise InvalidConfig(f"vocab_size exceeds the synthetic word space ({k*k + k**3})")


def _zipf_weights(size: int) -> np.ndarray:
    w = (np.arange(size, dtype=np.float64) + 1.0) ** -ZIPF_EXPONENT
    return w / w.sum()


def generate_synthetic(n_images: int, vocab_size: int, dim: int,
                       regions_per_image: int,
                       objects_per_image_range: tuple[int, int],
                       captions_per_image: int, noise_sigma: float,
                       seed: int, *, train_fraction: float = 0.8) -> Dataset:
    """Build a gallery where text and image features share one space.

    Each vocabulary word gets a random unit prototype vector that doubles as
    its embedding.  Every image samples a set of objects (Zipf-skewed word
    frequencies with cluster-correlated co-occurrence), each region feature
    is the prototype of one sampled object plus Gaussian noise renormalized
    to unit length, and each caption is a short string of the image's own
    object words.  Deterministic in ``seed``.
    """
    obj_lo, obj_hi = objects_per_image_range
    if n_images < 1:
        raise InvalidConfig("n_images must be >= 1")
    if vocab_size < 1:
        raise InvalidConfig("vocab_size must be >= 1")
    if dim < 2:
        raise InvalidConfig("dim must be >= 2")
    if regions_per_image < 1:
        raise InvalidConfig("regions_per_image must be >= 1")
    if captions_per_image < 1:
        raise InvalidConfig("captions_per_image must be >= 1")
    if not (1 <= obj_lo <= obj_hi):
        raise InvalidConfig("objects_per_image_range must satisfy 1 <= min <= max")
    if obj_hi > vocab_size:
        raise InvalidConfig(
            f"objects_per_image_range max {obj_hi} exceeds vocab_size {vocab_size}")
    if noise_sigma < 0:
        raise InvalidConfig("noise_sigma must be >= 0")
    if not (0.0 < train_fraction <= 1.0):
        raise InvalidConfig("train_fraction must be in (0, 1]")

    rng = np.random.default_rng(seed)
    vocab = tuple(_make_word(i) for i in range(vocab_size))
    prototypes = _unit_rows(rng.standard_normal((vocab_size, dim)))

    global_w = _zipf_weights(vocab_size)
    n_clusters = max(1, vocab_size // CLUSTER_SIZE)
    cluster_of = np.arange(vocab_size) % n_clusters
    cluster_w = []
    for c in range(n_clusters):
        w = np.where(cluster_of == c, global_w, 0.0)
        cluster_w.append(w / w.sum())
    length_probs = np.array(CAPTION_LENGTH_PROBS)

    n_train = math.ceil(train_fraction * n_images)
    digits = max(4, len(str(n_images - 1)))
    images: list[GalleryImage] = []
    for n in range(n_images):
        cluster = int(rng.integers(n_clusters))
        k = int(rng.integers(obj_lo, obj_hi + 1))
        mix = IN_CLUSTER_PROB * cluster_w[cluster] + (1.0 - IN_CLUSTER_PROB) * global_w
        objects = np.sort(rng.choice(vocab_size, size=k, replace=False, p=mix))

        # Regions cover the object set cyclically in a shuffled order, so a
        # complete description and the region mean agree in direction while
        # any single caption stays ambiguous.
        owners = objects[rng.permutation(k)][np.arange(regions_per_image) % k]
        feats = prototypes[owners] + noise_sigma * rng.standard_normal((regions_per_image, dim))
        feats = _unit_rows(feats)

        cycle = objects[rng.permutation(k)]
        cursor = 0
        captions = []
        for _ in range(captions_per_image):
            length = min(int(rng.choice(3, p=length_probs)) + 1, k)
            words = [cycle[(cursor + j) % k] for j in range(length)]
            cursor = (cursor + length) % k
            captions.append(" ".join(vocab[w] for w in words))

        images.append(GalleryImage(
            id=f"img{n:0{digits}d}",
            regions=feats,
            objects=objects.astype(np.int32),
            captions=tuple(captions),
            split="train" if n < n_train else "test",
        ))

    return Dataset(version=SCHEMA_VERSION, feature_dim=dim, vocab=vocab,
                   embeddings=prototypes, images=tuple(images), rng_seed=seed)


# ---------------------------------------------------------------------------
# Indexing and validation


def build_object_index(dataset: Dataset) -> ObjectPresenceIndex:
    """Presence bitmap: presence[a, n] is true iff object a is in image n."""
    presence = np.zeros((dataset.vocab_size, dataset.n_images), dtype=bool)
    for n, img in enumerate(dataset.images):
        presence[img.objects, n] = True
    return ObjectPresenceIndex(presence=presence, counts=presence.sum(axis=1))


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check every dataset invariant; violations are data, not errors."""
    report = ValidationReport()
    dim = dataset.feature_dim
    vocab_size = dataset.vocab_size
    if vocab_size < 2:
        report.add(f"vocab has {vocab_size} words, expected at least 2")
    if dataset.embeddings.shape != (vocab_size, dim):
        report.add(f"embeddings shape {dataset.embeddings.shape} does not match "
                   f"({vocab_size}, {dim})")
    seen: set[str] = set()
    for img in dataset.images:
        where = f"image '{img.id}'"
        if img.id in seen:
            report.add(f"{where}: duplicate id")
        seen.add(img.id)
        if img.regions.ndim != 2 or img.regions.shape[0] < 1:
            report.add(f"{where}: needs at least one region feature")
        elif img.regions.shape[1] != dim:
            report.add(f"{where}: region dimension {img.regions.shape[1]}, expected {dim}")
        if not np.all(np.isfinite(img.regions)):
            report.add(f"{where}: non-finite region feature")
        if img.objects.size == 0:
            report.add(f"{where}: empty object set")
        if np.unique(img.objects).size != img.objects.size:
            report.add(f"{where}: duplicate object indices")
        bad = [int(o) for o in img.objects if o < 0 or o >= vocab_size]
        if bad:
            report.add(f"{where}: object indices {bad} out of range for vocab size {vocab_size}")
        if not img.captions or any(not c for c in img.captions):
            report.add(f"{where}: needs at least one non-empty caption")
        if img.split not in KNOWN_SPLITS:
            report.add(f"{where}: unknown split tag '{img.split}'")
    return report
