import numpy as np
import pytest

from flowcast.bridge import SamplerConfig
from flowcast.data import Dataset, NormStats, Trajectory, normalize_dataset
from flowcast.model import build_model
from flowcast.rollout import (
    RolloutConfig,
    euler_integrate,
    rollout_ode,
    rollout_sde,
    step_velocity,
    write_predictions_csv,
)

from conftest import make_identity_predictor_model


def _zeros_traj(n=11, dt=0.1, d=1):
    return Trajectory("z", dt * np.arange(float(n)), np.zeros((n, d)))


def test_euler_first_order_on_linear_field():
    # dx/dt = t over [0, 1]: exact endpoint 0.5, Euler error exactly 1/(2n)
    def field(t, x):
        return np.array([t])

    errors = {}
    for n in (1, 2, 4, 100):
        end = euler_integrate(field, np.zeros(1), 0.0, 1.0, n)
        errors[n] = abs(end[0] - 0.5)
    assert errors[1] / errors[100] == pytest.approx(100.0, rel=1e-9)
    assert errors[1] / errors[2] == pytest.approx(2.0, rel=1e-9)
    assert errors[2] / errors[4] == pytest.approx(2.0, rel=1e-9)


def test_euler_noise_variance():
    def still(t, x):
        return np.zeros(1)

    rng = np.random.default_rng(17)
    draws = np.array([euler_integrate(still, np.zeros(1), 0.0, 0.01, 1, 0.1, rng)[0] for _ in range(10_000)])
    expected = 0.1**2 * 0.01
    assert abs(draws.var() - expected) < 0.05 * expected


def test_identity_predictor_gives_zero_velocity_rollout():
    model = make_identity_predictor_model(dim_state=1, history_len=2)
    traj = Trajectory("osc", 0.1 * np.arange(10.0), np.sin(np.arange(10.0))[:, None])
    res = rollout_ode(model, traj, RolloutConfig(teacher_forcing=True))
    # the prediction for each interval end is its (true) start point
    assert np.array_equal(res.pred_states[1:], traj.states[:-1])
    auto = rollout_ode(model, traj, RolloutConfig(teacher_forcing=False))
    assert np.all(auto.pred_states == traj.states[0])


def test_step_velocity_formula():
    model = make_identity_predictor_model(dim_state=1, bias=0.2)
    v = step_velocity(model, 0.0, np.array([1.0]), np.zeros((0, 1)), np.zeros(0), 0.1)
    assert v[0] == pytest.approx(2.0, rel=1e-12)
    v0 = step_velocity(model, 0.0, np.array([1.0]), np.zeros((0, 1)), np.zeros(0), 0.5)
    v_same = make_identity_predictor_model(dim_state=1, bias=0.0)
    assert step_velocity(v_same, 0.3, np.array([0.7]), np.zeros((0, 1)), np.zeros(0), 0.05)[0] == 0.0
    assert v0[0] == pytest.approx(0.4, rel=1e-12)


def test_sde_zero_noise_bitwise_equals_ode():
    rng_model = np.random.default_rng(123)
    for trial in range(3):
        d = int(rng_model.integers(1, 3))
        norm = NormStats(np.zeros(d), np.ones(d), 1.0)
        cfg = SamplerConfig(sigma=0.1, history_len=int(rng_model.integers(0, 3)))
        model = build_model(d, 0, norm, cfg, hidden_dim=8, n_hidden_layers=1,
                            seed=int(rng_model.integers(1 << 30)), mode="sde", use_cond=False)
        times = np.cumsum(rng_model.uniform(0.05, 0.2, size=8))
        states = rng_model.standard_normal((8, d))
        traj = Trajectory(f"r{trial}", times, states)
        rc = RolloutConfig(sde_noise=0.0, substeps=3)
        a = rollout_ode(model, traj, rc)
        b = rollout_sde(model, traj, rc, np.random.default_rng(trial))
        assert np.array_equal(a.pred_states, b.pred_states)
        assert np.array_equal(a.pred_uncertainty, b.pred_uncertainty)


def test_ode_mode_model_forces_zero_diffusion():
    model = make_identity_predictor_model(dim_state=1, mode="ode")
    traj = _zeros_traj()
    res = rollout_sde(model, traj, RolloutConfig(sde_noise=0.5), np.random.default_rng(0))
    assert np.all(res.pred_states == 0.0)


def test_em_increment_variance():
    model = make_identity_predictor_model(dim_state=1, mode="sde")
    n = 10_001
    traj = _zeros_traj(n=n, dt=0.01)
    res = rollout_sde(model, traj, RolloutConfig(sde_noise=0.1, substeps=1, teacher_forcing=True),
                      np.random.default_rng(99))
    increments = res.pred_states[1:, 0]  # every interval starts from the true zero state
    expected = 0.1**2 * 0.01
    assert abs(increments.var() - expected) < 0.05 * expected


def test_teacher_forced_intervals_independent(benchmark_norm):
    norm = benchmark_norm.norm
    cfg = SamplerConfig(sigma=0.1, history_len=3)
    model = build_model(1, 1, norm, cfg, hidden_dim=16, n_hidden_layers=1, seed=4)
    traj = benchmark_norm.trajectories[0]
    full = rollout_ode(model, traj, RolloutConfig(teacher_forcing=True))
    partial = rollout_ode(model, traj, RolloutConfig(teacher_forcing=True, start_index=5))
    assert np.array_equal(full.pred_states[6:], partial.pred_states[6:])


def test_free_running_reproduces_grid_with_exact_time_head():
    model = make_identity_predictor_model(dim_state=1, history_len=1, mode="ode")
    for arr in model.time_head.weights + model.time_head.biases:
        arr.fill(0.0)
    model.time_head.biases[-1][:] = 0.1
    traj = _zeros_traj(n=11, dt=0.1)
    res = rollout_ode(model, traj, RolloutConfig(mode="free"))
    assert res.mode == "free"
    assert res.times.shape == (11,)
    assert np.max(np.abs(res.times - traj.times)) < 1e-9


def test_free_running_clamps_tiny_time_predictions():
    model = make_identity_predictor_model(dim_state=1, mode="ode")
    for arr in model.time_head.weights + model.time_head.biases:
        arr.fill(0.0)
    model.time_head.biases[-1][:] = 1e-9
    traj = _zeros_traj(n=5, dt=0.1)
    res = rollout_ode(model, traj, RolloutConfig(mode="free", max_points=8))
    assert res.clamp_events > 0
    assert res.times.shape[0] == 8


def test_rollout_aborts_on_nonfinite():
    model = make_identity_predictor_model(dim_state=1)
    model.predictor.weights[1].fill(1e200)
    traj = Trajectory("ones", 0.1 * np.arange(6.0), np.ones((6, 1)))
    with np.errstate(over="ignore", invalid="ignore"):
        res = rollout_ode(model, traj, RolloutConfig())
    assert res.aborted
    assert np.all(np.isnan(res.pred_states[1:]))


def test_rollout_config_validation():
    with pytest.raises(ValueError):
        RolloutConfig(mode="nope")
    with pytest.raises(ValueError):
        RolloutConfig(substeps=0)
    with pytest.raises(ValueError):
        RolloutConfig(sde_noise=-1.0)


def test_write_predictions_csv_denormalizes(tmp_path):
    norm = NormStats(np.array([1.0]), np.array([2.0]), 10.0)
    model = make_identity_predictor_model(dim_state=1, norm=norm, mode="ode")
    raw = Trajectory("a", np.array([0.0, 1.0, 2.0]), np.array([[1.0], [3.0], [5.0]]))
    ds_norm = normalize_dataset(Dataset([raw]), stats=norm)
    res = rollout_ode(model, ds_norm.trajectories[0], RolloutConfig())
    out = tmp_path / "pred.csv"
    n = write_predictions_csv(out, [res], [raw], norm)
    lines = out.read_text().strip().splitlines()
    assert n == 3 and len(lines) == 4
    assert lines[0] == "traj_id,t,pred_x0,true_x0,uncertainty"
    first = lines[1].split(",")
    assert first[0] == "a" and float(first[1]) == 0.0
    assert float(first[2]) == 1.0 and float(first[3]) == 1.0
    # zero-velocity predictor carries the previous observation forward, in raw units
    second = lines[2].split(",")
    assert float(second[2]) == 1.0 and float(second[3]) == 3.0
