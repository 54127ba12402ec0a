"""Bundle of the three heads (next state, squared error, time to next) plus data config."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import BridgeBatch, SamplerConfig
from .data import NormStats
from .nn import Mlp, MlpConfig, mlp_forward, mlp_init, load_mlp, save_mlp

MODE_ODE = "ode"
MODE_SDE = "sde"

_BUNDLE_FORMAT = "flowcast-model"
_BUNDLE_VERSION = 1

_HEAD_FILES = {"predictor": "predictor.mlp", "sigma_head": "sigma_head.mlp", "time_head": "time_head.mlp"}


def feature_dim(dim_state: int, dim_cond: int, history_len: int, use_cond: bool) -> int:
    return 1 + dim_state + history_len * dim_state + (dim_cond if use_cond else 0)


@dataclass(eq=False)
class FlowModel:
    """Three separately parameterized heads sharing one feature layout.

    Features are ``[t, x_t, history (oldest first, flattened), cond?]``; the
    condition block is dropped when ``use_cond`` is off.  ``mode`` only
    matters at inference: an "ode" model forces the rollout diffusion to
    zero.
    """

    predictor: Mlp
    sigma_head: Mlp
    time_head: Mlp
    norm: NormStats
    sampler_cfg: SamplerConfig
    dim_state: int
    dim_cond: int
    mode: str = MODE_ODE
    use_cond: bool = True
    sigma_per_dim: bool = False

    def __post_init__(self):
        if self.mode not in (MODE_ODE, MODE_SDE):
            raise ValueError(f"unknown mode {self.mode!r}")
        want = self.feature_dim
        for name, head in self.heads().items():
            if head.config.in_dim != want:
                raise ValueError(f"{name}: input width {head.config.in_dim} != feature width {want}")

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.dim_state, self.dim_cond, self.sampler_cfg.history_len, self.use_cond)

    def heads(self) -> dict[str, Mlp]:
        return {"predictor": self.predictor, "sigma_head": self.sigma_head, "time_head": self.time_head}


def build_model(
    dim_state: int,
    dim_cond: int,
    norm: NormStats,
    sampler_cfg: SamplerConfig,
    hidden_dim: int = 256,
    n_hidden_layers: int = 2,
    activation: str = "tanh",
    seed: int = 0,
    mode: str = MODE_ODE,
    use_cond: bool = True,
    sigma_per_dim: bool = False,
) -> FlowModel:
    """Initialize the three heads with per-head seeds derived from ``seed``."""
    in_dim = feature_dim(dim_state, dim_cond, sampler_cfg.history_len, use_cond)
    head_seeds = np.random.SeedSequence(seed).generate_state(3, np.uint64)
    sigma_out = dim_state if sigma_per_dim else 1

    def make(out_dim: int, head_seed: np.uint64) -> Mlp:
        return mlp_init(MlpConfig(in_dim, out_dim, hidden_dim, n_hidden_layers, activation, int(head_seed)))

    return FlowModel(
        predictor=make(dim_state, head_seeds[0]),
        sigma_head=make(sigma_out, head_seeds[1]),
        time_head=make(1, head_seeds[2]),
        norm=norm,
        sampler_cfg=sampler_cfg,
        dim_state=dim_state,
        dim_cond=dim_cond,
        mode=mode,
        use_cond=use_cond,
        sigma_per_dim=sigma_per_dim,
    )


def make_features(model: FlowModel, t_abs, x_t, history, cond) -> np.ndarray:
    """Assemble the shared head input, batched along the leading axis."""
    t_abs = np.asarray(t_abs, dtype=np.float64).reshape(-1, 1)
    x_t = np.asarray(x_t, dtype=np.float64)
    n = t_abs.shape[0]
    parts = [t_abs, x_t.reshape(n, model.dim_state)]
    h = model.sampler_cfg.history_len
    if h > 0:
        parts.append(np.asarray(history, dtype=np.float64).reshape(n, h * model.dim_state))
    if model.use_cond and model.dim_cond > 0:
        parts.append(np.asarray(cond, dtype=np.float64).reshape(n, model.dim_cond))
    return np.concatenate(parts, axis=1)


def batch_features(model: FlowModel, batch: BridgeBatch) -> np.ndarray:
    return make_features(model, batch.t_abs, batch.x_t, batch.history, batch.cond)


def predict_next(model: FlowModel, feats: np.ndarray) -> np.ndarray:
    return mlp_forward(model.predictor, feats)[0]


def predict_sigma(model: FlowModel, feats: np.ndarray) -> np.ndarray:
    """Predicted squared prediction error, reduced to one scalar per sample."""
    out = mlp_forward(model.sigma_head, feats)[0]
    if out.shape[1] == 1:
        return out[:, 0]
    return out.sum(axis=1)


def predict_time(model: FlowModel, feats: np.ndarray) -> np.ndarray:
    """Predicted time remaining until the next observation."""
    return mlp_forward(model.time_head, feats)[0][:, 0]


def save_model(model: FlowModel, dirpath: str | Path, extra: dict | None = None) -> None:
    """Write one checkpoint file per head plus a JSON manifest into ``dirpath``.

    ``extra`` entries (e.g. provenance hashes) are merged into the manifest
    and ignored on load.
    """
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for name, head in model.heads().items():
        save_mlp(head, dirpath / _HEAD_FILES[name])
    manifest = {
        "format": _BUNDLE_FORMAT,
        "version": _BUNDLE_VERSION,
        "dim_state": model.dim_state,
        "dim_cond": model.dim_cond,
        "mode": model.mode,
        "use_cond": model.use_cond,
        "sigma_per_dim": model.sigma_per_dim,
        "norm": model.norm.to_dict(),
        "sampler": {
            "sigma": model.sampler_cfg.sigma,
            "history_len": model.sampler_cfg.history_len,
            "s_clip": model.sampler_cfg.s_clip,
        },
    }
    if extra:
        manifest.update(extra)
    (dirpath / "model.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_model(dirpath: str | Path) -> FlowModel:
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "model.json").read_text(encoding="utf-8"))
    if manifest.get("format") != _BUNDLE_FORMAT or manifest.get("version") != _BUNDLE_VERSION:
        raise ValueError(f"{dirpath}: not a recognized model bundle")
    heads = {name: load_mlp(dirpath / fname) for name, fname in _HEAD_FILES.items()}
    return FlowModel(
        predictor=heads["predictor"],
        sigma_head=heads["sigma_head"],
        time_head=heads["time_head"],
        norm=NormStats.from_dict(manifest["norm"]),
        sampler_cfg=SamplerConfig(**manifest["sampler"]),
        dim_state=manifest["dim_state"],
        dim_cond=manifest["dim_cond"],
        mode=manifest["mode"],
        use_cond=manifest["use_cond"],
        sigma_per_dim=manifest["sigma_per_dim"],
    )
