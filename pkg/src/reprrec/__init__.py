"""Entity representations for collaborative filtering: artificial-sentence
corpora, CBOW/Skip-gram training, vector queries, neighbourhood predictors,
a weighted hybrid and the fold-based evaluation protocol."""

__version__ = "0.1.0"

from .corpus import EntityToken, Namespace, Vocabulary, build_sentences, build_vocabulary  # noqa: E402
from .embedding import EmbeddingConfig, Word2VecEmbedder, load_embeddings, save_embeddings, train  # noqa: E402
from .evaluation import ProtocolConfig, partition, rmse, run_protocol  # noqa: E402
from .hybrid import HybridWeights, LinearWeightedHybrid, fit_weights  # noqa: E402
from .recommender import ItemKNNRegressor, RatingsStore, UserKNNRegressor  # noqa: E402
from .vectorspace import ArithmeticQuery, RepresentationStore, combine, cosine  # noqa: E402

__all__ = [
    "ArithmeticQuery", "EmbeddingConfig", "EntityToken", "HybridWeights", "ItemKNNRegressor",
    "LinearWeightedHybrid", "Namespace", "ProtocolConfig", "RatingsStore", "RepresentationStore",
    "UserKNNRegressor", "Vocabulary", "Word2VecEmbedder", "build_sentences", "build_vocabulary",
    "combine", "cosine", "fit_weights", "load_embeddings", "partition", "rmse", "run_protocol",
    "save_embeddings", "train", "__version__",
]
