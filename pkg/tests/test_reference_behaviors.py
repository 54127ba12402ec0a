"""Training-dependent behavior checks with thresholds committed from seed-0 reference runs.

These exercise the trained heads end to end: how tightly one-step
predictions land, whether the uncertainty head tracks realized error,
whether the time head beats the optimal constant predictor, and how an
SDE ensemble envelope covers the truth.
"""

import copy

import numpy as np
import pytest

from flowcast.bridge import SamplerConfig, sample_bridge_batch, sample_dataset_batch
from flowcast.data import Dataset, Trajectory, normalize_dataset
from flowcast.metrics import uncertainty_mse
from flowcast.model import batch_features, build_model, predict_next, predict_sigma, predict_time
from flowcast.rollout import RolloutConfig, rollout_ode, rollout_sde
from flowcast.runner import _STREAM_MODEL, _STREAM_NOISE, _streams, load_raw_datasets
from flowcast.schemas import DataSpec
from flowcast.training import TrainConfig, train

# committed reference values (seed 0): observed ratio 0.98 against the
# optimal-constant baseline 0.25 * median spacing
TIME_HEAD_STEPS_PER_EPOCH = 500
# observed r = 0.20; the flat injected noise caps the attainable correlation
OSCILLATOR_UNCERTAINTY_R_MIN = 0.1
# observed r = 0.56 where the noise actually varies across the series
HETERO_UNCERTAINTY_R_MIN = 0.5
# observed envelope coverage 0.78 at the reference noise scale
ENVELOPE_COVERAGE_MIN = 0.70
# observed max one-step landing error 0.085 (normalized units, substeps=20)
ONE_STEP_TOLERANCE = 0.15


def _per_point_stats(model, ds, draws=64, seed=101):
    """Mean sigma-head output and mean realized squared error per observation point."""
    rng = np.random.default_rng(seed)
    sig, err = [], []
    for traj in ds.trajectories:
        for k in range(traj.n_obs - 1):
            b = sample_bridge_batch(traj, model.sampler_cfg, rng, draws, seg_index=k)
            feats = batch_features(model, b)
            x_hat = predict_next(model, feats)
            err.append(float(np.mean(np.sum((x_hat - b.x_next) ** 2, axis=1))))
            sig.append(float(np.mean(predict_sigma(model, feats))))
    return np.asarray(sig), np.asarray(err)


@pytest.fixture(scope="module")
def noisy_benchmark():
    """The oscillator benchmark with the reference 0.05 observation noise, normalized."""
    streams = _streams(0)
    raw, _ = load_raw_datasets(DataSpec(noise_std=0.05), streams[_STREAM_NOISE])
    return normalize_dataset(raw)


@pytest.fixture(scope="module")
def uncertainty_model(noisy_benchmark):
    """Joint predictor+sigma training against noiseless interpolants.

    Sampling the bridge at sigma=0 keeps the realized error a deterministic
    function of the input, which is the component the head can learn.
    """
    cfg = SamplerConfig(sigma=0.0, history_len=3)
    model = build_model(1, 1, noisy_benchmark.norm, cfg, hidden_dim=256, seed=_streams(0)[_STREAM_MODEL])
    train(model, noisy_benchmark, noisy_benchmark,
          TrainConfig(lr=1e-3, max_epochs=30, patience=30, steps_per_epoch=500,
                      seed=_streams(0)[1], val_samples=2048, loss_weights=(1.0, 1.0, 0.0)))
    return model


def test_uncertainty_head_positively_tracks_error_on_benchmark(noisy_benchmark, uncertainty_model):
    sig, err = _per_point_stats(uncertainty_model, noisy_benchmark)
    r = float(np.corrcoef(sig, err)[0, 1])
    assert r > OSCILLATOR_UNCERTAINTY_R_MIN


def test_uncertainty_mse_improves_with_training(noisy_benchmark, uncertainty_model):
    trained = uncertainty_mse(uncertainty_model, noisy_benchmark, seed=5)
    fresh = build_model(1, 1, noisy_benchmark.norm, uncertainty_model.sampler_cfg,
                        hidden_dim=256, seed=_streams(0)[_STREAM_MODEL])
    untrained = uncertainty_mse(fresh, noisy_benchmark, seed=5)
    assert trained * 2.0 <= untrained


def test_uncertainty_head_resolves_heteroscedastic_noise():
    """Where the observation noise actually varies, the correlation is strong."""
    rng = np.random.default_rng(42)
    times = np.linspace(0.0, 1.0, 201)
    noise = np.where(times < 0.5, 0.005, 0.3)
    trajs = []
    for i in range(3):
        clean = np.sin(2 * np.pi * times + i)
        states = clean + noise * rng.standard_normal(times.shape)
        trajs.append(Trajectory(f"h{i}", times, states[:, None], np.array([float(i)])))
    ds = normalize_dataset(Dataset(trajs))
    cfg = SamplerConfig(sigma=0.1, history_len=3)
    model = build_model(1, 1, ds.norm, cfg, hidden_dim=256, seed=0)
    train(model, ds, ds, TrainConfig(lr=1e-3, max_epochs=15, patience=15, steps_per_epoch=500,
                                     seed=0, val_samples=2048, loss_weights=(1.0, 1.0, 0.0)))
    sig, err = _per_point_stats(model, ds, draws=32)
    r = float(np.corrcoef(sig, err)[0, 1])
    assert r > HETERO_UNCERTAINTY_R_MIN
    # the head's level separates the two noise regimes
    half = len(sig) // 2
    per_traj = sig.reshape(3, -1)
    assert all(t[: half // 3].mean() < t[half // 3 :].mean() for t in per_traj)


def test_time_head_beats_constant_predictor(benchmark_norm):
    """MAE below 0.25 * median spacing, the optimal-constant baseline on a uniform grid."""
    cfg = SamplerConfig(sigma=0.1, history_len=3)
    model = build_model(1, 1, benchmark_norm.norm, cfg, hidden_dim=256, seed=_streams(0)[_STREAM_MODEL])
    train(model, benchmark_norm, benchmark_norm,
          TrainConfig(lr=1e-3, max_epochs=60, patience=60, steps_per_epoch=TIME_HEAD_STEPS_PER_EPOCH,
                      seed=_streams(0)[1], val_samples=2048, loss_weights=(0.0, 0.0, 1.0)))
    batch = sample_dataset_batch(benchmark_norm, cfg, np.random.default_rng(778), 8192)
    feats = batch_features(model, batch)
    mae = float(np.mean(np.abs(predict_time(model, feats) - batch.remaining)))
    median_dt = float(np.median(np.concatenate([np.diff(t.times) for t in benchmark_norm.trajectories])))
    assert mae < 0.25 * median_dt


def test_trained_one_step_prediction_tolerance(reference_runs, benchmark_norm):
    (arms, _) = reference_runs
    model = arms["history3"]
    worst = 0.0
    for traj in benchmark_norm.trajectories:
        res = rollout_ode(model, traj, RolloutConfig(teacher_forcing=True, substeps=20))
        worst = max(worst, float(np.max(np.abs(res.pred_states[1:] - traj.states[1:]))))
    assert worst < ONE_STEP_TOLERANCE


def test_sde_ensemble_envelope_coverage(reference_runs, benchmark_norm):
    (arms, _) = reference_runs
    model = copy.copy(arms["history3"])
    model.mode = "sde"
    cfg = RolloutConfig(teacher_forcing=True, sde_noise=0.1)
    hits = total = 0
    for ti, traj in enumerate(benchmark_norm.trajectories):
        draws = np.stack([
            rollout_sde(model, traj, cfg, np.random.default_rng(5000 + 97 * ti + j)).pred_states
            for j in range(64)
        ])
        lo = draws[:, 1:, 0].min(axis=0)
        hi = draws[:, 1:, 0].max(axis=0)
        truth = traj.states[1:, 0]
        inside = (truth >= lo) & (truth <= hi)
        hits += int(inside.sum())
        total += inside.size
    assert hits / total >= ENVELOPE_COVERAGE_MIN


def test_reproduce_summary_shows_memory_advantage(reference_runs, benchmark_norm):
    (arms, _) = reference_runs
    from flowcast.metrics import dataset_mean_mse

    mses = {}
    for name, model in arms.items():
        preds = [rollout_ode(model, t, RolloutConfig(teacher_forcing=True)) for t in benchmark_norm.trajectories]
        mses[name] = dataset_mean_mse(preds, benchmark_norm.trajectories)
    assert mses["history3"] < mses["history0"]
