from .losses import (
    LossConfig,
    LossError,
    loss_collision,
    loss_mse,
    loss_normal,
    nearest_anchors,
    patch_centers_t,
    total_loss,
    vertex_normals_t,
)
from .trainer import DEFAULT_EPOCHS, Adam, TrainConfig, Trainer, one_step_loss
