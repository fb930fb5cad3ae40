"""Interactive text-to-image retrieval with confirmation-driven refinement."""

from ._kernels import backend_name
from .gallery import (Dataset, GalleryImage, ObjectPresenceIndex,
                      build_object_index, generate_synthetic, load_dataset,
                      save_dataset, validate_dataset)
from .interaction import (LearnedPolicy, QACohePolicy, QASimPolicy,
                          RandomPolicy, RetrievalSession, evaluate,
                          oracle_confirm, run_episode)
from .learning import PpoConfig, train
from .ranker import (GalleryView, mean_rank, rank_gallery, recall_at_k,
                     refine_similarities)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "GalleryImage", "ObjectPresenceIndex", "GalleryView",
    "PpoConfig", "RetrievalSession", "LearnedPolicy", "RandomPolicy",
    "QASimPolicy", "QACohePolicy", "backend_name", "build_object_index",
    "evaluate", "generate_synthetic", "load_dataset", "mean_rank",
    "oracle_confirm", "rank_gallery", "recall_at_k", "refine_similarities",
    "run_episode", "save_dataset", "train", "validate_dataset", "__version__",
]
