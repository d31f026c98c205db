"""Flat run configuration: one YAML/JSON mapping, unknown keys rejected."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import Dataset, load_idx, synth_sparse_regression, synth_xor
from .gates import BETA, GAMMA, ZETA, GateParams
from .objective import GateKL
from .train import AdamConfig, TrainConfig


class ConfigLoadError(ValueError):
    pass


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    # optimisation
    seed: int = 0
    epochs: int = Field(1, ge=1)
    batch_size: int = Field(100, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    lr_log_alpha: Optional[float] = Field(None, gt=0)
    ema_decay: Optional[float] = Field(0.999, ge=0, lt=1)
    num_gate_samples: int = Field(1, ge=1)
    eval_every: int = Field(100, ge=1)
    grad_clip: Optional[float] = Field(None, gt=0)
    max_steps: Optional[int] = Field(None, ge=1)

    # penalty; lambda in units of 1/N, so 0.1 means 0.1/N
    lambda_times_N: Union[float, list[float]] = 0.1
    l2_coeff: float = Field(0.0, ge=0)
    gate_kl_weight: float = Field(0.0, ge=0)
    gate_kl_prior_log_alpha: float = 0.0
    gate_kl_mc_samples: int = Field(64, ge=1)

    # network
    layer_sizes: Optional[list[int]] = None
    activation: Literal["relu", "identity"] = "relu"
    init_rate: float = Field(0.5, gt=0, lt=1)
    log_alpha_init_std: float = Field(0.01, ge=0)
    beta: float = BETA
    gamma: float = GAMMA
    zeta: float = ZETA

    # data
    dataset: Literal["idx", "synthetic_regression", "xor"] = "idx"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_subset: Optional[int] = Field(None, ge=1)
    num_classes: int = Field(10, ge=2)
    synth_n: int = Field(2000, ge=1)
    synth_d: int = Field(50, ge=1)
    synth_k: int = Field(5, ge=1)
    synth_noise_std: float = Field(0.1, ge=0)
    synth_seed: int = 0
    synth_test_n: int = Field(0, ge=0)
    xor_n: int = Field(400, ge=4)

    # output
    out_dir: str = "run"
    record_wall_time: bool = False

    @field_validator("lambda_times_N")
    @classmethod
    def _nonneg(cls, v):
        vals = v if isinstance(v, list) else [v]
        if any(x < 0 for x in vals):
            raise ValueError("lambda_times_N must be >= 0")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        GateParams(0.0, self.beta, self.gamma, self.zeta)
        if self.dataset == "idx" and not (self.train_images and self.train_labels):
            raise ValueError("dataset 'idx' needs train_images and train_labels")
        if bool(self.test_images) != bool(self.test_labels):
            raise ValueError("test_images and test_labels must be given together")
        if self.dataset == "synthetic_regression" and self.synth_k > self.synth_d:
            raise ValueError("synth_k must not exceed synth_d")
        if self.layer_sizes is not None and len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output sizes")
        return self

    # -- derived objects ---------------------------------------------------

    @property
    def loss(self) -> str:
        return "squared_error" if self.dataset == "synthetic_regression" else "softmax_cross_entropy"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            adam=AdamConfig(self.lr, self.beta1, self.beta2, self.adam_eps),
            lr_log_alpha=self.lr_log_alpha,
            ema_decay=self.ema_decay,
            seed=self.seed,
            num_gate_samples=self.num_gate_samples,
            eval_every=self.eval_every,
            grad_clip=self.grad_clip,
            max_steps=self.max_steps,
        )

    def gate_kl(self) -> Optional[GateKL]:
        if self.gate_kl_weight == 0.0:
            return None
        prior = GateParams(self.gate_kl_prior_log_alpha, self.beta, self.gamma, self.zeta)
        return GateKL(prior, self.gate_kl_weight, self.gate_kl_mc_samples)

    def sizes(self, train: Dataset) -> list[int]:
        if self.layer_sizes is not None:
            return list(self.layer_sizes)
        out = train.targets.shape[1] if not train.is_classification else train.num_classes
        return [train.dim, out]

    def datasets(self, base: Path = Path(".")) -> tuple[Dataset, Optional[Dataset]]:
        """Build ``(train, test)``; test is None when not configured."""
        if self.dataset == "idx":
            train = load_idx(base / self.train_images, base / self.train_labels, self.num_classes)
            test = None
            if self.test_images:
                test = load_idx(base / self.test_images, base / self.test_labels, self.num_classes)
        elif self.dataset == "synthetic_regression":
            full, _ = synth_sparse_regression(
                self.synth_n + self.synth_test_n, self.synth_d, self.synth_k, self.synth_noise_std, self.synth_seed
            )
            train = full.subset(slice(0, self.synth_n))
            test = full.subset(slice(self.synth_n, None)) if self.synth_test_n else None
        else:
            train = synth_xor(self.xor_n, self.synth_seed)
            test = None
        if self.train_subset is not None and self.train_subset < len(train):
            train = train.subset(slice(0, self.train_subset))
        return train, test


def load_config(path) -> tuple[RunConfig, Path]:
    """Parse and validate; returns the config and the directory relative paths resolve against."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigLoadError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigLoadError(f"{path}: not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigLoadError(f"{path}: expected a key/value mapping")
    try:
        return RunConfig.model_validate(doc), path.parent
    except ValidationError as exc:
        raise ConfigLoadError(f"{path}: {exc}") from exc
