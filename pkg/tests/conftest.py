import numpy as np
import pytest

from objseek.gallery import Dataset, GalleryImage, generate_synthetic


def flatten_params(params) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays().values()])


def with_flat_params(params, flat: np.ndarray):
    out = type(params)(**{k: a.copy() for k, a in params.arrays().items()})
    i = 0
    for _, a in out.arrays().items():
        a.flat[:] = flat[i:i + a.size]
        i += a.size
    return out


def fd_gradient(loss_fn, params, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss over all parameters."""
    flat = flatten_params(params)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_fn(with_flat_params(params, up))
                   - loss_fn(with_flat_params(params, down))) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@pytest.fixture(scope="session")
def small_ds() -> Dataset:
    """Fast fixture gallery: 60 images, 16 words, 8 dims."""
    return generate_synthetic(60, 16, 8, 4, (2, 4), 4, 0.1, seed=5)


@pytest.fixture(scope="session")
def mid_ds() -> Dataset:
    """Medium gallery for episode/eval tests."""
    return generate_synthetic(300, 40, 16, 6, (2, 5), 6, 0.12, seed=11)


def make_image(img_id: str, regions, objects, captions, split="train") -> GalleryImage:
    return GalleryImage(id=img_id,
                        regions=np.asarray(regions, dtype=np.float64),
                        objects=np.asarray(sorted(objects), dtype=np.int32),
                        captions=tuple(captions), split=split)


def make_dataset(vocab, embeddings, images, dim=None) -> Dataset:
    emb = np.asarray(embeddings, dtype=np.float64)
    return Dataset(version=1, feature_dim=dim or emb.shape[1], vocab=tuple(vocab),
                   embeddings=emb, images=tuple(images))


@pytest.fixture(scope="session")
def toy_ds() -> Dataset:
    """Hand-built 3-word gallery in 2-D with exactly known geometry."""
    vocab = ("man", "tree", "dog")
    emb = np.array([[1.0, 0.0], [0.0, 1.0],
                    [np.sqrt(0.5), np.sqrt(0.5)]])
    images = [
        make_image("a", [[1.0, 0.0], [0.0, 1.0]], [0, 1], ["man tree", "man"]),
        make_image("b", [[0.0, 1.0]], [1], ["tree"]),
        make_image("c", [[np.sqrt(0.5), np.sqrt(0.5)]], [2], ["dog"]),
    ]
    return make_dataset(vocab, emb, images)
