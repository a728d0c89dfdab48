from .layers import (
    ACT_IDENTITY,
    ACT_SELU,
    SELU_ALPHA,
    SELU_SCALE,
    DenseLayer,
    Mlp,
    backward,
    build_mlp,
    forward,
    repack_into_flat,
    selu,
    selu_grad_from_output,
)
from .losses import LOSS_MAE, LOSS_MSE, loss_value_and_grad, mae, mse
from .optim import AdamState, FlatAdam, ListAdam, adam_step
from .serialize import load_networks, load_networks_file, dump_networks, save_networks
from .train import TrainConfig, TrainTrace, batch_slices, run_epoch, train

__all__ = [
    "ACT_IDENTITY",
    "ACT_SELU",
    "SELU_ALPHA",
    "SELU_SCALE",
    "DenseLayer",
    "Mlp",
    "backward",
    "build_mlp",
    "forward",
    "selu",
    "selu_grad_from_output",
    "LOSS_MAE",
    "LOSS_MSE",
    "loss_value_and_grad",
    "mae",
    "mse",
    "AdamState",
    "FlatAdam",
    "ListAdam",
    "adam_step",
    "repack_into_flat",
    "load_networks",
    "load_networks_file",
    "dump_networks",
    "save_networks",
    "TrainConfig",
    "TrainTrace",
    "batch_slices",
    "run_epoch",
    "train",
]
