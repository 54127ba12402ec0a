"""Joint training of the three heads on bridge batches, with early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import BridgeBatch, sample_dataset_batch
from .data import Dataset
from .model import FlowModel, batch_features, predict_next
from .nn import adam_init, adam_step, mlp_forward, mlp_backward, scale_grad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 1000
    patience: int = 3
    steps_per_epoch: int = 0
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 0.0, 0.0)
    val_samples: int = 512

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.val_samples < 1:
            raise ValueError("bad training hyperparameters")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.steps_per_epoch < 0:
            raise ValueError("steps_per_epoch must be >= 0 (0 = auto)")
        if len(self.loss_weights) != 3 or min(self.loss_weights) < 0 or max(self.loss_weights) == 0:
            raise ValueError("loss_weights must be nonnegative with at least one positive")


@dataclass
class EpochRecord:
    epoch: int
    loss_target: float
    loss_sigma: float
    loss_time: float
    val_total: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_target": self.loss_target,
            "loss_sigma": self.loss_sigma,
            "loss_time": self.loss_time,
            "val_total": self.val_total,
        }


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stop_reason: str = "max_epochs"

    def to_dict(self) -> dict:
        return {
            "epochs": [e.to_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
            "stop_reason": self.stop_reason,
        }


def _check_finite_output(y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite head output")


def sigma_error_targets(model: FlowModel, batch: BridgeBatch, x_hat: np.ndarray) -> np.ndarray:
    """Regression targets for the sigma head: realized squared prediction error."""
    err = (x_hat - batch.x_next) ** 2
    if model.sigma_per_dim:
        return err
    return err.sum(axis=1, keepdims=True)


def target_loss(model: FlowModel, batch: BridgeBatch) -> float:
    """Mean squared endpoint error; gradients accumulate into the predictor only."""
    feats = batch_features(model, batch)
    y, cache = mlp_forward(model.predictor, feats)
    _check_finite_output(y)
    r = y - batch.x_next
    loss = float(np.mean(np.sum(r * r, axis=1)))
    mlp_backward(model.predictor, cache, (2.0 / len(batch)) * r)
    return loss


def uncertainty_loss(model: FlowModel, batch: BridgeBatch) -> float:
    """Regress the sigma head onto the predictor's realized squared error.

    The error target is computed from a plain forward pass, so no gradient
    reaches the predictor through this loss.
    """
    feats = batch_features(model, batch)
    target = sigma_error_targets(model, batch, predict_next(model, feats))
    y, cache = mlp_forward(model.sigma_head, feats)
    _check_finite_output(y)
    r = y - target
    loss = float(np.mean(np.sum(r * r, axis=1)))
    mlp_backward(model.sigma_head, cache, (2.0 / len(batch)) * r)
    return loss


def time_loss(model: FlowModel, batch: BridgeBatch) -> float:
    """Regress the time head onto the remaining time to the next observation."""
    feats = batch_features(model, batch)
    y, cache = mlp_forward(model.time_head, feats)
    _check_finite_output(y)
    r = y - batch.remaining[:, None]
    loss = float(np.mean(r * r))
    mlp_backward(model.time_head, cache, (2.0 / len(batch)) * r)
    return loss


def evaluate_losses(model: FlowModel, batch: BridgeBatch) -> tuple[float, float, float]:
    """Forward-only versions of the three losses (no gradient accumulation)."""
    feats = batch_features(model, batch)
    x_hat = predict_next(model, feats)
    rt = x_hat - batch.x_next
    lt = float(np.mean(np.sum(rt * rt, axis=1)))
    rs = mlp_forward(model.sigma_head, feats)[0] - sigma_error_targets(model, batch, x_hat)
    ls = float(np.mean(np.sum(rs * rs, axis=1)))
    rw = mlp_forward(model.time_head, feats)[0] - batch.remaining[:, None]
    lw = float(np.mean(rw * rw))
    return lt, ls, lw


def _snapshot(model: FlowModel) -> dict:
    return {name: head.copy() for name, head in model.heads().items()}


def _restore(model: FlowModel, snap: dict) -> None:
    for name, head in model.heads().items():
        saved = snap[name]
        for l in range(head.n_layers):
            head.weights[l][...] = saved.weights[l]
            head.biases[l][...] = saved.biases[l]


def train(model: FlowModel, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig) -> TrainReport:
    """Fit the weighted heads by stochastic bridge regression.

    Every step draws a fresh cross-trajectory bridge batch and applies one
    optimizer step per active head (weight zero skips the head entirely).
    Validation uses a bridge batch drawn once up front with its own seed, so
    epochs are compared on identical samples; training stops when the
    weighted validation total fails to improve for ``patience`` epochs, when
    ``max_epochs`` is reached, or when a loss turns non-finite.  Best-epoch
    parameters are restored before returning.
    """
    report = TrainReport()
    if cfg.max_epochs == 0:
        return report
    for ds in (train_ds, val_ds):
        if ds.norm is None:
            raise ValueError("datasets must be normalized before training")

    w_target, w_sigma, w_time = cfg.loss_weights
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2, np.uint64)
    rng = np.random.default_rng(int(seeds[0]))
    val_batch = sample_dataset_batch(val_ds, model.sampler_cfg, np.random.default_rng(int(seeds[1])), cfg.val_samples)

    steps = cfg.steps_per_epoch or max(1, math.ceil(train_ds.n_transitions / cfg.batch_size))
    active = [
        (w_target, model.predictor, target_loss),
        (w_sigma, model.sigma_head, uncertainty_loss),
        (w_time, model.time_head, time_loss),
    ]
    opts = {id(head): adam_init(head, lr=cfg.lr) for w, head, _ in active if w > 0}

    best_snap = None
    since_improve = 0
    for epoch in range(1, cfg.max_epochs + 1):
        sums = [0.0, 0.0, 0.0]
        diverged = False
        for _ in range(steps):
            batch = sample_dataset_batch(train_ds, model.sampler_cfg, rng, cfg.batch_size)
            try:
                for i, (w, head, loss_fn) in enumerate(active):
                    if w == 0.0:
                        continue
                    value = loss_fn(model, batch)
                    sums[i] += value
                    if w != 1.0:
                        scale_grad(head, w)
                    adam_step(head, opts[id(head)])
            except FloatingPointError:
                diverged = True
                break
        if diverged:
            report.stop_reason = "diverged"
            break
        means = [s / steps for s in sums]
        vt, vs, vw = evaluate_losses(model, val_batch)
        val_total = w_target * vt + w_sigma * vs + w_time * vw
        report.epochs.append(EpochRecord(epoch, means[0], means[1], means[2], val_total))
        if not math.isfinite(val_total):
            report.stop_reason = "diverged"
            break
        if val_total < report.best_val:
            report.best_val = val_total
            report.best_epoch = epoch
            best_snap = _snapshot(model)
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.patience:
                report.stop_reason = "early_stop"
                break
    if best_snap is not None:
        _restore(model, best_snap)
    return report
