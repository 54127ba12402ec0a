"""Pydantic request/response models shared by the HTTP service, runner, and CLI."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel as _PydanticBase, ConfigDict, Field, model_validator


class BaseModel(_PydanticBase):
    """Strict base: unknown keys are validation errors, so config typos surface early."""

    model_config = ConfigDict(extra="forbid")


class OscillatorSpec(BaseModel):
    c: float = Field(2.0, ge=0)
    k: float = 1.0
    m: float = Field(1.0, gt=0)
    dt: float = Field(0.1, gt=0)
    n_steps: int = Field(100, ge=2)
    x0: float = 1.0
    v0: float = 0.0


class DataSpec(BaseModel):
    """Where trajectories come from: the built-in benchmark, custom oscillators, or CSV."""

    source: Literal["benchmark", "oscillator", "csv"] = "benchmark"
    train_csv: Optional[str] = None
    val_csv: Optional[str] = None
    oscillators: list[OscillatorSpec] = Field(default_factory=list)
    noise_std: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_source(self):
        if self.source == "csv" and not self.train_csv:
            raise ValueError("source 'csv' requires train_csv")
        if self.source == "oscillator" and not self.oscillators:
            raise ValueError("source 'oscillator' requires at least one oscillator spec")
        return self


class ModelSpec(BaseModel):
    hidden_dim: int = Field(256, ge=1)
    n_hidden_layers: int = Field(2, ge=1)
    activation: Literal["tanh", "relu", "selu"] = "tanh"
    mode: Literal["ode", "sde"] = "ode"
    use_cond: bool = True
    sigma_per_dim: bool = False


class SamplerSpec(BaseModel):
    sigma: float = Field(0.1, ge=0)
    history_len: int = Field(3, ge=0)
    s_clip: float = Field(1e-3, gt=0, lt=0.5)


class TrainSpec(BaseModel):
    lr: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, ge=1)
    max_epochs: int = Field(1000, ge=0)
    patience: int = Field(3, ge=1)
    steps_per_epoch: int = Field(0, ge=0)
    w_target: float = Field(1.0, ge=0)
    w_sigma: float = Field(0.0, ge=0)
    w_time: float = Field(0.0, ge=0)
    val_samples: int = Field(512, ge=1)

    @model_validator(mode="after")
    def _check_weights(self):
        if self.w_target == 0 and self.w_sigma == 0 and self.w_time == 0:
            raise ValueError("at least one loss weight must be positive")
        return self


class RolloutSpec(BaseModel):
    mode: Literal["observation", "free"] = "observation"
    integrator: Literal["auto", "ode", "sde"] = "auto"
    substeps: int = Field(10, ge=1)
    sde_noise: Optional[float] = Field(None, ge=0, description="None = reuse the training sigma")
    teacher_forcing: bool = True
    start_index: int = Field(0, ge=0)
    ensemble: int = Field(1, ge=1)
    noise_from_sigma_head: bool = False


class RunConfig(BaseModel):
    """Full resolved configuration of one training run."""

    seed: int = 0
    out_dir: str = "run"
    data: DataSpec = Field(default_factory=DataSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    sampler: SamplerSpec = Field(default_factory=SamplerSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    rollout: RolloutSpec = Field(default_factory=RolloutSpec)


class GenerateRequest(BaseModel):
    benchmark: Optional[Literal["oscillator"]] = None
    oscillators: list[OscillatorSpec] = Field(default_factory=list)
    noise_std: float = Field(0.0, ge=0)
    seed: int = 0
    out: str = "dataset.csv"

    @model_validator(mode="after")
    def _check_one_source(self):
        if self.benchmark is None and not self.oscillators:
            raise ValueError("either benchmark or oscillators must be given")
        return self


class GenerateResponse(BaseModel):
    csv_path: str
    manifest_path: str
    n_trajectories: int
    n_rows: int


class TrainRequest(BaseModel):
    config: RunConfig


class TrainResponse(BaseModel):
    run_dir: str
    model_dir: str
    config_hash: str
    best_epoch: int
    best_val: float
    stop_reason: str
    n_epochs: int
    final_train_losses: dict[str, float]


class EvalRequest(BaseModel):
    model_dir: str
    data: DataSpec = Field(default_factory=DataSpec)
    rollout: RolloutSpec = Field(default_factory=RolloutSpec)
    seed: int = 0
    out_dir: str = "eval"


class EvalResponse(BaseModel):
    metrics: dict
    metrics_path: str
    predictions_path: str


class PredictRequest(BaseModel):
    model_dir: str
    data: DataSpec = Field(default_factory=DataSpec)
    rollout: RolloutSpec = Field(default_factory=RolloutSpec)
    seed: int = 0
    out: str = "predictions.csv"


class PredictResponse(BaseModel):
    predictions_path: str
    n_rows: int


class ReproduceRequest(BaseModel):
    out_dir: str = "reproduce"
    seed: int = 0
    max_epochs: int = Field(1000, ge=1)


class ReproduceResponse(BaseModel):
    out_dir: str
    summary: dict


class HealthResponse(BaseModel):
    status: str
    version: str
