"""Sparse MLPs trained with an expected-L0 penalty through hard concrete gates."""

from .autodiff import Node, NumericError, ShapeError, backward
from .data import Dataset, IdxFormatError, load_idx, synth_sparse_regression, synth_xor
from .gates import GateParams, RngStream, deterministic_gate, point_masses, prob_active, sample_hard_concrete
from .objective import GateGroup, GateKL, PenaltyConfig, l0_complexity, regularized_loss
from .sparse_net import SparseMLP, expected_flops, forward_eval, forward_train, init_mlp, load_model, save_model
from .train import AdamConfig, TrainConfig, TrainingDiverged, evaluate, scaled_penalty, train

__version__ = "0.1.0"

__all__ = [
    "AdamConfig",
    "Dataset",
    "GateGroup",
    "GateKL",
    "GateParams",
    "IdxFormatError",
    "Node",
    "NumericError",
    "PenaltyConfig",
    "RngStream",
    "ShapeError",
    "SparseMLP",
    "TrainConfig",
    "TrainingDiverged",
    "backward",
    "deterministic_gate",
    "evaluate",
    "expected_flops",
    "forward_eval",
    "forward_train",
    "init_mlp",
    "l0_complexity",
    "load_idx",
    "load_model",
    "point_masses",
    "prob_active",
    "regularized_loss",
    "sample_hard_concrete",
    "save_model",
    "scaled_penalty",
    "synth_sparse_regression",
    "synth_xor",
    "train",
]
