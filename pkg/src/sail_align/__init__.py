"""Vision-language alignment over frozen, pre-encoded embeddings.

Train lightweight alignment heads (linear / MLP / GLU) with contrastive
losses on pre-encoded image-text pairs, and score the resulting joint
space with retrieval, classification, probing and segmentation metrics.
"""

from .embed_store import (
    BatchPlan,
    EmbeddingMatrix,
    LabeledDataset,
    PairedDataset,
    load_labeled_dataset,
    load_paired_dataset,
    make_batch_plan,
    read_embeddings,
    write_embeddings,
)
from .errors import (
    ChecksumError,
    ConfigError,
    FormatError,
    SailAlignError,
    ShapeError,
    TruncatedFileError,
    ValidationError,
)
from .heads import HeadConfig, HeadParams, head_backward, head_forward, init_head
from .losses import LossConfig, LossOutput, infonce_loss, multi_positive_loss, sigmoid_loss
from .optim import LionState, init_lion, lion_step
from .trainer import (
    TrainConfig,
    TrainerState,
    embed_with_head,
    load_checkpoint,
    probe_config,
    sail_config,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BatchPlan", "EmbeddingMatrix", "LabeledDataset", "PairedDataset",
    "load_labeled_dataset", "load_paired_dataset", "make_batch_plan",
    "read_embeddings", "write_embeddings",
    "ChecksumError", "ConfigError", "FormatError", "SailAlignError",
    "ShapeError", "TruncatedFileError", "ValidationError",
    "HeadConfig", "HeadParams", "head_backward", "head_forward", "init_head",
    "LossConfig", "LossOutput", "infonce_loss", "multi_positive_loss", "sigmoid_loss",
    "LionState", "init_lion", "lion_step",
    "TrainConfig", "TrainerState", "embed_with_head", "load_checkpoint",
    "probe_config", "sail_config", "save_checkpoint", "train",
    "__version__",
]
