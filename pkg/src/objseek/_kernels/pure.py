"""Numpy implementations of the gallery scan kernels (fallback backend)."""

import numpy as np


def sscan_scores(regions: np.ndarray, counts: np.ndarray, query: np.ndarray,
                 out: np.ndarray | None = None) -> np.ndarray:
    """Attention-weighted cosine score of one query against every image.

    ``regions`` is the zero-padded region tensor ``(N, M_max, d)`` with unit
    rows, ``counts`` the number of real regions per image.  Per image the
    region cosines are softmax-weighted, averaged, and divided by the region
    count.
    """
    n, m_max, _ = regions.shape
    cos = regions.reshape(n * m_max, -1) @ query
    cos = cos.reshape(n, m_max)
    valid = np.arange(m_max)[None, :] < counts[:, None]
    z = np.where(valid, cos, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    weighted = (w * np.where(valid, cos, 0.0)).sum(axis=1)
    scores = weighted / (w.sum(axis=1) * counts)
    if out is None:
        return scores
    out[:] = scores
    return out


def dot_scores(vectors: np.ndarray, query: np.ndarray,
               out: np.ndarray | None = None) -> np.ndarray:
    """Plain dot product of one query against row vectors ``(N, d)``."""
    scores = vectors @ query
    if out is None:
        return scores
    out[:] = scores
    return out
