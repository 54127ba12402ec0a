"""Evaluation metrics: per-trajectory MSE, RBF-kernel MMD on increments, uncertainty error."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import sample_dataset_batch
from .data import Dataset, Trajectory
from .model import FlowModel, batch_features, predict_next, predict_sigma
from .nn import mlp_forward
from .rollout import RolloutResult
from .training import sigma_error_targets

BANDWIDTH_LADDER = (0.25, 0.5, 1.0, 2.0, 4.0)


def mean_mse(pred: RolloutResult, truth: Trajectory) -> float:
    """Average squared Euclidean error over every predicted timepoint (index 1 on)."""
    if pred.times.shape[0] != truth.n_obs or not np.allclose(pred.times, truth.times):
        raise ValueError("prediction is not aligned to the trajectory's observation times")
    diff = pred.pred_states[1:] - truth.states[1:]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def dataset_mean_mse(preds: list[RolloutResult], truths: list[Trajectory]) -> float:
    """Unweighted mean of per-trajectory MSEs."""
    if len(preds) != len(truths) or not preds:
        raise ValueError("need one prediction per trajectory")
    return float(np.mean([mean_mse(p, t) for p, t in zip(preds, truths)]))


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xn = np.sum(x * x, axis=1)[:, None]
    yn = np.sum(y * y, axis=1)[None, :]
    return np.maximum(xn + yn - 2.0 * (x @ y.T), 0.0)


def rbf_mmd(x: np.ndarray, y: np.ndarray, bandwidths=(1.0,)) -> float:
    """Biased (V-statistic) squared MMD averaged over a bandwidth ladder.

    The biased estimator is nonnegative by construction and exactly zero on
    identical sample sets, which the sanity checks rely on; values are not
    directly comparable to unbiased estimates.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("both sample sets must be nonempty")
    dxx = _sq_dists(x, x)
    dyy = _sq_dists(y, y)
    dxy = _sq_dists(x, y)
    total = 0.0
    for bw in bandwidths:
        gamma = 1.0 / (2.0 * bw * bw)
        kxy = np.exp(-gamma * dxy)
        # average both (contiguous) orientations so the estimate is exactly symmetric in (x, y)
        cross = 0.5 * (kxy.mean() + np.ascontiguousarray(kxy.T).mean())
        total += float(np.exp(-gamma * dxx).mean() + np.exp(-gamma * dyy).mean() - 2.0 * cross)
    return total / len(bandwidths)


def median_heuristic_bandwidths(samples: np.ndarray, ladder=BANDWIDTH_LADDER, cap: int = 2000) -> tuple:
    """Bandwidth ladder scaled by the median pairwise distance of ``samples``."""
    z = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if z.shape[0] > cap:
        z = z[:: z.shape[0] // cap + 1]
    if z.shape[0] < 2:
        return tuple(ladder)
    dists = np.sqrt(_sq_dists(z, z))
    med = float(np.median(dists[np.triu_indices(z.shape[0], k=1)]))
    if med <= 0:
        med = 1.0
    return tuple(m * med for m in ladder)


def increments_mmd(ensembles: list[list[RolloutResult]], truths: list[Trajectory], bandwidths=None) -> float:
    """Per-timepoint MMD between predicted and true one-step increments, averaged.

    Increments are taken from the previous *true* state, so the statistic
    compares the distribution over next steps.  SDE ensembles contribute all
    their members as samples at each timepoint.
    """
    if len(ensembles) != len(truths) or not truths:
        raise ValueError("need one ensemble per trajectory")
    if bandwidths is None:
        pooled = np.concatenate([np.diff(t.states, axis=0) for t in truths], axis=0)
        bandwidths = median_heuristic_bandwidths(pooled)
    per_traj = []
    for members, truth in zip(ensembles, truths):
        vals = []
        for i in range(1, truth.n_obs):
            true_inc = (truth.states[i] - truth.states[i - 1])[None, :]
            pred_inc = np.stack([m.pred_states[i] - truth.states[i - 1] for m in members])
            vals.append(rbf_mmd(pred_inc, true_inc, bandwidths))
        per_traj.append(float(np.mean(vals)))
    return float(np.mean(per_traj))


def uncertainty_mse(model: FlowModel, ds: Dataset, n_samples: int = 2048, seed: int = 0) -> float:
    """Mean squared gap between the sigma head and the realized squared error.

    Measured on a fresh seeded set of bridge samples from ``ds``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])
    batch = sample_dataset_batch(ds, model.sampler_cfg, rng, n_samples)
    feats = batch_features(model, batch)
    realized = sigma_error_targets(model, batch, predict_next(model, feats))
    if model.sigma_per_dim:
        gap = mlp_forward(model.sigma_head, feats)[0] - realized
        return float(np.mean(np.sum(gap * gap, axis=1)))
    gap = predict_sigma(model, feats) - realized[:, 0]
    return float(np.mean(gap * gap))


@dataclass
class MetricReport:
    mean_mse: float
    rbf_mmd: float
    uncertainty_mse: float | None
    n_trajectories: int
    config_hash: str
    seed: int
    per_trajectory: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_mse": self.mean_mse,
            "rbf_mmd": self.rbf_mmd,
            "uncertainty_mse": self.uncertainty_mse,
            "n_trajectories": self.n_trajectories,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "per_trajectory": self.per_trajectory,
        }
