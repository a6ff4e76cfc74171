"""Distribution propagation graph network for few-shot classification."""
from .backbone import EmbeddingNet, embed
from .config import DataConfig, DPGNConfig, RunConfig, TrainConfig
from .episodes import (
    DatasetSource,
    Episode,
    EpisodeSpec,
    EpisodeStream,
    load_dataset,
    make_synthetic_clusters,
    make_synthetic_images,
    sample_episode,
)
from .graph import DPGN, GenerationModules, GraphHistory, run_generations
from .objectives import LossBundle, episode_losses, predict, total_loss
from .training import EvalReport, evaluate, fit, load_checkpoint, save_checkpoint, train

__all__ = [
    "DPGN", "DPGNConfig", "DataConfig", "DatasetSource", "EmbeddingNet", "Episode",
    "EpisodeSpec", "EpisodeStream", "EvalReport", "GenerationModules", "GraphHistory",
    "LossBundle", "RunConfig", "TrainConfig", "embed", "episode_losses", "evaluate", "fit",
    "load_checkpoint", "load_dataset", "make_synthetic_clusters", "make_synthetic_images",
    "predict", "run_generations", "sample_episode", "save_checkpoint", "total_loss", "train",
]
