"""Deep multi-view clustering with dual (global and local) contrastive
calibration of pseudo-label and feature-similarity graphs."""

from .calibration import (
    calibration_loss,
    feature_similarity_graph,
    label_consistency_loss,
    local_calibration_loss,
    pseudo_label_graph,
    total_loss,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import MultiViewDataset, batch_iter, generate_synthetic, load_dataset, normalize_views, save_dataset
from .fusion import FusionState, adaptive_fusion, fuse
from .metrics import ClusterResult, clustering_accuracy, evaluate, nmi, purity
from .networks import DealMVC, reconstruction_loss
from .trainer import TrainConfig, TrainHistory, predict_clusters, pretrain, train

__version__ = "0.1.0"
