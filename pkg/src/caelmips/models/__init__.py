from .losses import (
    LossBreakdown,
    collision_entropy,
    collision_factor,
    loss_bias,
    loss_reward,
    loss_total,
    loss_var,
)
from .net import EmbeddingNet, embed_forward, predict_reward, predict_reward_from_embeddings
from .posterior import PosteriorConfig, PosteriorModel, fit_posterior
from .train import (
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    cael_mips_estimate,
    network_loss_and_grad,
    train_embeddings,
)
from .checkpoint import load_checkpoint, save_checkpoint
