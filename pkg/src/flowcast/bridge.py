"""Brownian-bridge sampling over observation segments and the target/velocity map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Trajectory

REMAINING_FLOOR = 1e-4


@dataclass(frozen=True)
class SamplerConfig:
    """Bridge noise scale, history window length, and the interior-fraction clip."""

    sigma: float = 0.1
    history_len: int = 3
    s_clip: float = 1e-3

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.history_len < 0:
            raise ValueError("history_len must be >= 0")
        if not 0.0 < self.s_clip < 0.5:
            raise ValueError("s_clip must lie in (0, 0.5)")


@dataclass(frozen=True, eq=False)
class BridgeSample:
    """One training example: a noised point between two observations plus its targets.

    ``history`` holds the ``history_len`` observations strictly before the
    segment start, oldest row first.  ``u_target`` is the velocity that
    carries ``x_t`` to ``x_next`` over the remaining ``(1 - s) * dt_seg``.
    """

    t_abs: float
    s: float
    x_t: np.ndarray
    x_next: np.ndarray
    dt_seg: float
    history: np.ndarray
    cond: np.ndarray
    u_target: np.ndarray
    seg_index: int


@dataclass(eq=False)
class BridgeBatch:
    """Struct-of-arrays form of many bridge samples (leading axis = sample)."""

    t_abs: np.ndarray
    s: np.ndarray
    x_t: np.ndarray
    x_next: np.ndarray
    dt_seg: np.ndarray
    history: np.ndarray
    cond: np.ndarray
    u_target: np.ndarray
    seg_index: np.ndarray

    def __len__(self) -> int:
        return self.t_abs.shape[0]

    @property
    def remaining(self) -> np.ndarray:
        return (1.0 - self.s) * self.dt_seg


def assemble_history(traj: Trajectory, seg_index: int, history_len: int) -> np.ndarray:
    """States strictly before the segment start, oldest first.

    Indices that would fall before the first observation are backfilled with
    the first observation itself.
    """
    if not 0 <= seg_index < traj.n_obs - 1:
        raise ValueError(f"segment index {seg_index} out of range")
    if history_len == 0:
        return np.zeros((0, traj.dim_state))
    idx = np.clip(np.arange(seg_index - history_len, seg_index), 0, None)
    return traj.states[idx]


def sample_bridge_batch(
    traj: Trajectory,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    n: int,
    seg_index: np.ndarray | int | None = None,
    s: np.ndarray | float | None = None,
) -> BridgeBatch:
    """Draw ``n`` bridge points from one trajectory.

    Per sample: a segment uniform over the trajectory, an interior fraction
    ``s`` uniform on ``(s_clip, 1 - s_clip)``, and a Gaussian perturbation of
    the chord point with std ``sigma * sqrt(s (1 - s))``.  ``seg_index`` and
    ``s`` can be pinned for diagnostics.
    """
    T = traj.n_obs
    d = traj.dim_state
    if seg_index is None:
        seg = rng.integers(0, T - 1, size=n)
    else:
        seg = np.broadcast_to(np.asarray(seg_index, dtype=np.int64), (n,)).copy()
        if seg.size and (seg.min() < 0 or seg.max() >= T - 1):
            raise ValueError("segment index out of range")
    if s is None:
        s = rng.uniform(cfg.s_clip, 1.0 - cfg.s_clip, size=n)
    else:
        s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,)).copy()
        if s.size and (s.min() <= 0.0 or s.max() >= 1.0):
            raise ValueError("s must lie strictly inside (0, 1)")
    x0 = traj.states[seg]
    x1 = traj.states[seg + 1]
    dt_seg = traj.times[seg + 1] - traj.times[seg]
    mu = (1.0 - s)[:, None] * x0 + s[:, None] * x1
    if cfg.sigma > 0.0:
        x_t = mu + cfg.sigma * np.sqrt(s * (1.0 - s))[:, None] * rng.standard_normal((n, d))
    else:
        x_t = mu
    u_target = (x1 - x_t) / ((1.0 - s) * dt_seg)[:, None]
    t_abs = traj.times[seg] + s * dt_seg
    h = cfg.history_len
    if h > 0:
        idx = np.clip(seg[:, None] + np.arange(-h, 0)[None, :], 0, None)
        history = traj.states[idx]
    else:
        history = np.zeros((n, 0, d))
    cond = np.broadcast_to(traj.cond, (n, traj.dim_cond)).copy()
    return BridgeBatch(t_abs, s, x_t, x1.copy(), dt_seg, history, cond, u_target, seg)


def sample_bridge(
    traj: Trajectory,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    seg_index: int | None = None,
    s: float | None = None,
) -> BridgeSample:
    """Single-sample convenience wrapper around :func:`sample_bridge_batch`."""
    b = sample_bridge_batch(traj, cfg, rng, 1, seg_index=seg_index, s=s)
    return BridgeSample(
        t_abs=float(b.t_abs[0]),
        s=float(b.s[0]),
        x_t=b.x_t[0],
        x_next=b.x_next[0],
        dt_seg=float(b.dt_seg[0]),
        history=b.history[0],
        cond=b.cond[0],
        u_target=b.u_target[0],
        seg_index=int(b.seg_index[0]),
    )


def sample_dataset_batch(ds: Dataset, cfg: SamplerConfig, rng: np.random.Generator, n: int) -> BridgeBatch:
    """Draw ``n`` bridge points, each from a uniformly chosen trajectory."""
    ds._require_nonempty()
    ti = rng.integers(0, len(ds.trajectories), size=n)
    parts = []
    for j in range(len(ds.trajectories)):
        nj = int((ti == j).sum())
        if nj:
            parts.append(sample_bridge_batch(ds.trajectories[j], cfg, rng, nj))
    return concat_batches(parts)


def concat_batches(parts: list[BridgeBatch]) -> BridgeBatch:
    if not parts:
        raise ValueError("no batches to concatenate")
    if len(parts) == 1:
        return parts[0]
    cat = np.concatenate
    return BridgeBatch(*(cat([getattr(p, f) for p in parts]) for f in (
        "t_abs", "s", "x_t", "x_next", "dt_seg", "history", "cond", "u_target", "seg_index")))


def velocity_from_target(x_hat: np.ndarray, x_t: np.ndarray, remaining, floor: float = REMAINING_FLOOR) -> np.ndarray:
    """Convert an endpoint prediction into a velocity over the remaining time.

    The denominator never drops below ``floor`` so a tiny (or mispredicted)
    remaining time cannot blow up the step.
    """
    rem = np.maximum(np.asarray(remaining, dtype=np.float64), floor)
    diff = np.asarray(x_hat, dtype=np.float64) - np.asarray(x_t, dtype=np.float64)
    if diff.ndim == 2 and rem.ndim == 1:
        rem = rem[:, None]
    return diff / rem
