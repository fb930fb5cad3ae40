"""Similarity computation, negative-object refinement, ranking, and metrics.

Two similarity backends are provided: an attention-weighted region matcher
(``sscan``) that softmax-weights per-region cosines, and a global matcher
(``tcmpl``) that compares the query against the mean region vector.  Refined
scores multiply an image's similarity by 0.9 once per call when the image
contains any confirmed-absent object.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import (DegenerateImage, DimensionMismatch, EmptyInput,
                     EmptyQuerySet, InvalidConfig, UnknownTarget)
from .gallery import Dataset, GalleryImage, ObjectPresenceIndex

RANKER_KINDS = ("sscan", "tcmpl")
REFINE_FACTOR = 0.9
TOP_K_DEFAULT = 100


class GalleryView:
    """Packed feature arrays for one gallery (or a split of it).

    Region matrices are padded into a single (N, M_max, d) tensor so the
    scan kernels can run over the whole gallery at once; object presence is
    kept as an (|vocab|, N) bitmap for refinement and top-K distributions.
    """

    def __init__(self, dataset: Dataset, indices: Sequence[int] | None = None):
        if indices is None:
            indices = np.arange(dataset.n_images, dtype=np.int64)
        else:
            indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise InvalidConfig("gallery view over an empty image set")
        self.dataset = dataset
        self.indices = indices
        self.images: tuple[GalleryImage, ...] = tuple(dataset.images[i] for i in indices)
        self.ids: tuple[str, ...] = tuple(img.id for img in self.images)
        self.pos_of: dict[str, int] = {img_id: p for p, img_id in enumerate(self.ids)}

        n = len(self.images)
        dim = dataset.feature_dim
        counts = np.array([img.n_regions for img in self.images], dtype=np.int32)
        m_max = int(counts.max())
        regions = np.zeros((n, m_max, dim), dtype=np.float64)
        means = np.zeros((n, dim), dtype=np.float64)
        for p, img in enumerate(self.images):
            regions[p, :img.n_regions] = img.regions
            means[p] = img.regions.mean(axis=0)
        self.regions = np.ascontiguousarray(regions)
        self.region_counts = counts
        mean_norms = np.linalg.norm(means, axis=1)
        self.degenerate = mean_norms <= 1e-12
        safe = np.where(self.degenerate, 1.0, mean_norms)
        self.mean_regions = means / safe[:, None]

        presence = np.zeros((dataset.vocab_size, n), dtype=bool)
        for p, img in enumerate(self.images):
            presence[img.objects, p] = True
        self.presence = presence
        self.presence_i8 = presence.astype(np.int8)
        # Rank of each id in ascending lexicographic order, used as the
        # deterministic tie-break of rank_gallery.
        order = sorted(range(n), key=lambda p: self.ids[p])
        id_rank = np.empty(n, dtype=np.int64)
        for r, p in enumerate(order):
            id_rank[p] = r
        self.id_rank = id_rank

    @property
    def n_images(self) -> int:
        return len(self.images)

    @cached_property
    def object_index(self) -> ObjectPresenceIndex:
        return ObjectPresenceIndex(presence=self.presence, counts=self.presence.sum(axis=1))

    def require_target(self, target_id: str) -> int:
        pos = self.pos_of.get(target_id)
        if pos is None:
            raise UnknownTarget(f"image id '{target_id}' not in gallery")
        return pos


@dataclass
class RankedList:
    """Gallery positions ordered by descending score (ties: ascending id)."""

    view: GalleryView
    order: np.ndarray              # (N,) positions, best first
    scores: np.ndarray             # (N,) aligned with order, non-increasing
    target_rank: int | None = None

    @property
    def ids(self) -> list[str]:
        return [self.view.ids[p] for p in self.order]

    def top(self, k: int) -> list[tuple[str, float]]:
        k = min(k, self.order.size)
        return [(self.view.ids[p], float(s))
                for p, s in zip(self.order[:k], self.scores[:k])]

    def rank_of(self, image_id: str) -> int:
        pos = self.view.require_target(image_id)
        return int(np.nonzero(self.order == pos)[0][0]) + 1


def _check_query(x_t: np.ndarray, dim: int) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (dim,):
        raise DimensionMismatch(f"query feature has shape {x_t.shape}, expected ({dim},)")
    return x_t


def _is_zero(x: np.ndarray) -> bool:
    return bool(np.linalg.norm(x) <= 1e-12)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        return 0.0
    return float(a @ b / (na * nb))


def sscan_similarity(x_t: np.ndarray, image: GalleryImage) -> float:
    """Softmax-attention similarity: mean over regions of weight * cosine.

    The 1/M prefactor is kept, so magnitudes shrink with the region count;
    ranking is unaffected for a fixed M.  A zero query scores 0.
    """
    x_t = _check_query(x_t, image.regions.shape[1])
    if _is_zero(x_t):
        return 0.0
    cos = np.array([_cosine(x_t, r) for r in image.regions])
    w = np.exp(cos - cos.max())
    gamma = w / w.sum()
    return float((gamma * cos).sum() / image.n_regions)


def tcmpl_similarity(x_t: np.ndarray, image: GalleryImage) -> float:
    """Global similarity: cosine between the query and the mean region."""
    x_t = _check_query(x_t, image.regions.shape[1])
    mean = image.regions.mean(axis=0)
    if _is_zero(mean):
        raise DegenerateImage(f"image '{image.id}' has a zero mean region vector")
    if _is_zero(x_t):
        return 0.0
    return _cosine(x_t, mean)


def similarity(x_t: np.ndarray, image: GalleryImage, kind: str) -> float:
    if kind == "sscan":
        return sscan_similarity(x_t, image)
    if kind == "tcmpl":
        return tcmpl_similarity(x_t, image)
    raise InvalidConfig(f"unknown ranker kind '{kind}'")


def query_set_similarity(queries: Sequence[np.ndarray], image: GalleryImage,
                         kind: str) -> float:
    """Arithmetic mean of per-query similarities under one backend."""
    if len(queries) == 0:
        raise EmptyQuerySet("query_set_similarity needs at least one query")
    return float(np.mean([similarity(q, image, kind) for q in queries]))


def gallery_scores(view: GalleryView, x_t: np.ndarray, kind: str) -> np.ndarray:
    """Per-image similarity of one query feature over the whole view."""
    x_t = _check_query(x_t, view.dataset.feature_dim)
    if _is_zero(x_t):
        return np.zeros(view.n_images, dtype=np.float64)
    if kind == "sscan":
        return _kernels.sscan_scores(view.regions, view.region_counts,
                                     np.ascontiguousarray(x_t))
    if kind == "tcmpl":
        if view.degenerate.any():
            bad = view.ids[int(np.argmax(view.degenerate))]
            raise DegenerateImage(f"image '{bad}' has a zero mean region vector")
        return _kernels.dot_scores(view.mean_regions, np.ascontiguousarray(x_t))
    raise InvalidConfig(f"unknown ranker kind '{kind}'")


def refine_similarities(scores: np.ndarray, negatives: Iterable[int],
                        index: ObjectPresenceIndex,
                        factor: float = REFINE_FACTOR) -> np.ndarray:
    """Multiply by ``factor`` once per image containing any negative object."""
    scores = np.asarray(scores, dtype=np.float64)
    negatives = np.asarray(sorted(set(int(a) for a in negatives)), dtype=np.int64)
    out = scores.copy()
    if negatives.size == 0:
        return out
    if negatives.min() < 0 or negatives.max() >= index.presence.shape[0]:
        raise DimensionMismatch("negative object index out of vocabulary range")
    mask = index.presence[negatives].any(axis=0)
    out[mask] *= factor
    return out


def rank_gallery(scores: np.ndarray, view: GalleryView,
                 target_id: str | None = None) -> RankedList:
    """Stable descending sort with ascending-id tie-break."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (view.n_images,):
        raise DimensionMismatch(
            f"score vector has shape {scores.shape}, expected ({view.n_images},)")
    order = np.lexsort((view.id_rank, -scores))
    ranked = RankedList(view=view, order=order, scores=scores[order])
    if target_id is not None:
        pos = view.require_target(target_id)
        ranked.target_rank = int(np.nonzero(order == pos)[0][0]) + 1
    return ranked


def top_object_distribution(ranked: RankedList, index: ObjectPresenceIndex,
                            k: int = TOP_K_DEFAULT) -> np.ndarray:
    """Object distribution over the top-K ranked images (sums to 1)."""
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    top = ranked.order[:min(k, ranked.order.size)]
    counts = index.presence[:, top].sum(axis=1).astype(np.float64)
    total = counts.sum()
    return counts / total


def recall_at_k(target_ranks: Sequence[int], k: int) -> float:
    """Percentage of trials with the target ranked in the top K."""
    ranks = np.asarray(target_ranks, dtype=np.int64)
    if ranks.size == 0:
        raise EmptyInput("recall over an empty rank list")
    if ranks.min() < 1:
        raise InvalidConfig("ranks are 1-based")
    return float(100.0 * np.count_nonzero(ranks <= k) / ranks.size)


def mean_rank(target_ranks: Sequence[int]) -> float:
    """Arithmetic mean of 1-based target ranks."""
    ranks = np.asarray(target_ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EmptyInput("mean rank over an empty rank list")
    if ranks.min() < 1:
        raise InvalidConfig("ranks are 1-based")
    return float(ranks.mean())
