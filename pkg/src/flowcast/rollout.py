"""Euler / Euler-Maruyama reconstruction of trajectories from the trained heads."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import REMAINING_FLOOR, velocity_from_target
from .data import Trajectory
from .model import FlowModel, MODE_ODE, make_features, predict_next, predict_sigma, predict_time

MODE_OBSERVATION = "observation"
MODE_FREE = "free"


@dataclass(frozen=True)
class RolloutConfig:
    """How to integrate: clocked by true observation times or by the time head."""

    mode: str = MODE_OBSERVATION
    substeps: int = 10
    sde_noise: float = 0.1
    teacher_forcing: bool = True
    start_index: int = 0
    noise_from_sigma_head: bool = False
    max_points: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_OBSERVATION, MODE_FREE):
            raise ValueError(f"unknown rollout mode {self.mode!r}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.sde_noise < 0:
            raise ValueError("sde_noise must be >= 0")
        if self.start_index < 0 or self.max_points < 0:
            raise ValueError("start_index and max_points must be >= 0")


@dataclass(eq=False)
class RolloutResult:
    """Predicted states and uncertainties along integration times.

    ``pred_uncertainty[i]`` is the sigma head's output where the prediction
    for time ``times[i]`` was launched; index 0 (the given initial point) is
    zero.  ``aborted`` marks a rollout cut short by non-finite states, with
    NaNs from the failure point on.
    """

    times: np.ndarray
    pred_states: np.ndarray
    pred_uncertainty: np.ndarray
    teacher_forced: bool
    mode: str
    aborted: bool = False
    clamp_events: int = 0


def step_velocity(model: FlowModel, t_abs: float, x: np.ndarray, history: np.ndarray, cond: np.ndarray, remaining: float) -> np.ndarray:
    """Velocity implied by the predicted endpoint over the remaining time."""
    x = np.asarray(x, dtype=np.float64)
    feats = make_features(model, [t_abs], x[None, :], history[None, ...], np.asarray(cond)[None, ...])
    return velocity_from_target(predict_next(model, feats)[0], x, remaining)


def _history_rows(basis: np.ndarray, point_index: int, history_len: int, dim_state: int) -> np.ndarray:
    if history_len == 0:
        return np.zeros((0, dim_state))
    idx = np.clip(np.arange(point_index - history_len, point_index), 0, None)
    return basis[idx]


class _Counters:
    def __init__(self):
        self.clamps = 0


def euler_integrate(velocity_fn, x, t0, t1, substeps, noise_scale=0.0, rng=None):
    """Euler (or Euler-Maruyama when ``noise_scale`` != 0) over [t0, t1].

    ``velocity_fn(t, x)`` supplies the drift; the diffusion term adds
    ``noise_scale * sqrt(dt)`` Gaussian increments per substep.
    """
    dt = (t1 - t0) / substeps
    d = x.shape[0]
    for j in range(substeps):
        t = t0 + j * dt
        v = velocity_fn(t, x)
        if noise_scale != 0.0:
            x = x + v * dt + noise_scale * np.sqrt(dt) * rng.standard_normal(d)
        else:
            x = x + v * dt
        if not np.all(np.isfinite(x)):
            break
    return x


def _interval_velocity(model, t1, history, cond, counters):
    """Velocity field for one observation interval ending at ``t1``."""
    def velocity(t, x):
        remaining = t1 - t
        if remaining < REMAINING_FLOOR:
            counters.clamps += 1
        feats = make_features(model, [t], x[None, :], history[None, ...], cond[None, ...])
        return velocity_from_target(predict_next(model, feats)[0], x, remaining)

    return velocity


def _interval_noise(cfg: RolloutConfig, noise_scale: float, sigma_value: float) -> float:
    if noise_scale == 0.0:
        return 0.0
    if cfg.noise_from_sigma_head:
        return float(np.sqrt(max(sigma_value, 0.0)))
    return noise_scale


def _run_observation(model: FlowModel, traj: Trajectory, cfg: RolloutConfig, noise_scale: float, rng) -> RolloutResult:
    T, d = traj.n_obs, traj.dim_state
    h = model.sampler_cfg.history_len
    start = cfg.start_index
    if start > T - 2:
        raise ValueError(f"start_index {start} leaves no interval to integrate")
    preds = np.full((T, d), np.nan)
    preds[: start + 1] = traj.states[: start + 1]
    unc = np.zeros(T)
    basis = traj.states if cfg.teacher_forcing else preds
    counters = _Counters()
    aborted = False
    for k in range(start, T - 1):
        x = basis[k].copy()
        history = _history_rows(basis, k, h, d)
        feats = make_features(model, [traj.times[k]], x[None, :], history[None, ...], traj.cond[None, ...])
        sigma_value = float(predict_sigma(model, feats)[0])
        unc[k + 1] = sigma_value
        x = euler_integrate(
            _interval_velocity(model, traj.times[k + 1], history, traj.cond, counters),
            x, traj.times[k], traj.times[k + 1],
            cfg.substeps, _interval_noise(cfg, noise_scale, sigma_value), rng,
        )
        if not np.all(np.isfinite(x)):
            aborted = True
            break
        preds[k + 1] = x
    return RolloutResult(
        times=traj.times.copy(),
        pred_states=preds,
        pred_uncertainty=unc,
        teacher_forced=cfg.teacher_forcing,
        mode=MODE_OBSERVATION,
        aborted=aborted,
        clamp_events=counters.clamps,
    )


def _run_free(model: FlowModel, traj: Trajectory, cfg: RolloutConfig, noise_scale: float, rng) -> RolloutResult:
    d = traj.dim_state
    h = model.sampler_cfg.history_len
    start = cfg.start_index
    if start > traj.n_obs - 1:
        raise ValueError(f"start_index {start} out of range")
    cap = cfg.max_points or traj.n_obs
    times = list(traj.times[: start + 1])
    states = [traj.states[i].copy() for i in range(start + 1)]
    unc = [0.0] * (start + 1)
    t_end = float(traj.times[-1])
    counters = _Counters()
    aborted = False
    while len(times) < cap and times[-1] < t_end - 1e-12:
        i = len(times) - 1
        t = times[-1]
        x = states[-1]
        basis = np.asarray(states)
        history = _history_rows(basis, i, h, d)
        feats = make_features(model, [t], x[None, :], history[None, ...], traj.cond[None, ...])
        delta_raw = float(predict_time(model, feats)[0])
        if delta_raw < REMAINING_FLOOR:
            counters.clamps += 1
        delta = max(delta_raw, REMAINING_FLOOR)
        sigma_value = float(predict_sigma(model, feats)[0])
        x = euler_integrate(
            _interval_velocity(model, t + delta, history, traj.cond, counters),
            x.copy(), t, t + delta,
            cfg.substeps, _interval_noise(cfg, noise_scale, sigma_value), rng,
        )
        if not np.all(np.isfinite(x)):
            aborted = True
            break
        times.append(t + delta)
        states.append(x)
        unc.append(sigma_value)
    return RolloutResult(
        times=np.asarray(times),
        pred_states=np.asarray(states),
        pred_uncertainty=np.asarray(unc),
        teacher_forced=False,
        mode=MODE_FREE,
        aborted=aborted,
        clamp_events=counters.clamps,
    )


def rollout_ode(model: FlowModel, traj: Trajectory, cfg: RolloutConfig) -> RolloutResult:
    """Deterministic rollout: plain Euler on the reparameterized velocity."""
    if cfg.mode == MODE_FREE:
        return _run_free(model, traj, cfg, 0.0, None)
    return _run_observation(model, traj, cfg, 0.0, None)


def rollout_sde(model: FlowModel, traj: Trajectory, cfg: RolloutConfig, rng: np.random.Generator) -> RolloutResult:
    """Euler-Maruyama rollout; an "ode"-mode model forces the diffusion to zero."""
    noise = 0.0 if model.mode == MODE_ODE else cfg.sde_noise
    if cfg.mode == MODE_FREE:
        return _run_free(model, traj, cfg, noise, rng)
    return _run_observation(model, traj, cfg, noise, rng)


def write_predictions_csv(
    path: str | Path,
    results: list[RolloutResult],
    raw_truths: list[Trajectory],
    norm,
) -> int:
    """Export ``traj_id,t,pred_x*,true_x*,uncertainty`` rows in the original data scale.

    Predictions are denormalized through ``norm``; true columns are NaN at
    predicted times that have no aligned observation (free-running mode).
    Uncertainty stays in normalized units.  Returns the row count.
    """
    if len(results) != len(raw_truths):
        raise ValueError("one result per trajectory required")
    d = raw_truths[0].dim_state
    header = ["traj_id", "t"] + [f"pred_x{i}" for i in range(d)] + [f"true_x{i}" for i in range(d)] + ["uncertainty"]
    lines = [",".join(header)]
    for res, truth in zip(results, raw_truths):
        pred_raw = norm.denormalize_states(res.pred_states)
        aligned = res.mode == MODE_OBSERVATION and res.times.shape[0] == truth.n_obs
        for i in range(res.times.shape[0]):
            row = [truth.id, repr(float(res.times[i] * norm.time_scale))]
            row += [repr(float(v)) for v in pred_raw[i]]
            if aligned:
                row += [repr(float(v)) for v in truth.states[i]]
            else:
                row += ["nan"] * d
            row.append(repr(float(res.pred_uncertainty[i])))
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines) - 1
