"""Simulation-free training of neural ODE/SDE forecasters on irregular trajectories."""

__version__ = "0.1.0"

from .bridge import (
    BridgeBatch,
    BridgeSample,
    SamplerConfig,
    assemble_history,
    sample_bridge,
    sample_bridge_batch,
    sample_dataset_batch,
    velocity_from_target,
)
from .data import (
    CsvFormatError,
    Dataset,
    NormStats,
    OscillatorParams,
    Trajectory,
    add_observation_noise,
    generate_oscillator,
    make_oscillator_benchmark,
    normalize_dataset,
    read_csv,
    write_csv,
)
from .metrics import MetricReport, dataset_mean_mse, increments_mmd, mean_mse, rbf_mmd, uncertainty_mse
from .model import FlowModel, build_model, load_model, save_model
from .nn import AdamState, Mlp, MlpConfig, adam_init, adam_step, gradcheck, load_mlp, mlp_backward, mlp_forward, mlp_init, save_mlp
from .rollout import RolloutConfig, RolloutResult, rollout_ode, rollout_sde, step_velocity
from .training import TrainConfig, TrainReport, target_loss, time_loss, train, uncertainty_loss
