from .network import (
    NetworkConfig,
    ShapeError,
    forward,
    init_params,
    loss,
    loss_and_gradients,
    training_loss,
)
from .train import (
    TrainConfig,
    TrainResult,
    learning_rate_at,
    load_checkpoint,
    save_checkpoint,
    stacked_batch_fn,
    train,
)

__all__ = [
    "NetworkConfig",
    "ShapeError",
    "forward",
    "init_params",
    "loss",
    "loss_and_gradients",
    "training_loss",
    "TrainConfig",
    "TrainResult",
    "learning_rate_at",
    "load_checkpoint",
    "save_checkpoint",
    "stacked_batch_fn",
    "train",
]
