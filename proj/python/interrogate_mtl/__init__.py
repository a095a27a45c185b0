"""Gated multi-task learning engine: train, sweep, prune, account."""

from ._core import (  # noqa: F401
    __version__,
    default_config,
    delta_mtl,
    generate_dataset,
    mean_rank,
    prune_checkpoint,
    sparsity_loss,
    train,
)

__all__ = [
    "__version__",
    "default_config",
    "delta_mtl",
    "generate_dataset",
    "mean_rank",
    "prune_checkpoint",
    "sparsity_loss",
    "train",
]
