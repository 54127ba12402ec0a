"""Trajectory containers, the damped-oscillator generator, normalization, and CSV io."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BENCHMARK_DAMPINGS = (0.25, 2.0, 3.75)

_STD_CLAMP = 1e-12


class CsvFormatError(ValueError):
    """Raised when a trajectory CSV file does not match the expected format."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One irregularly sampled multivariate series with a static condition vector.

    ``times`` is strictly increasing with one row of ``states`` per entry;
    ``cond`` is attached to the trajectory as a whole.
    """

    id: str
    times: np.ndarray
    states: np.ndarray
    cond: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        cond = np.asarray(self.cond, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or states.ndim != 2 or cond.ndim != 1:
            raise ValueError(f"trajectory {self.id!r}: bad array ranks")
        if times.shape[0] != states.shape[0]:
            raise ValueError(f"trajectory {self.id!r}: {times.shape[0]} times vs {states.shape[0]} states")
        if times.shape[0] < 2:
            raise ValueError(f"trajectory {self.id!r}: needs at least 2 observations")
        if states.shape[1] < 1:
            raise ValueError(f"trajectory {self.id!r}: needs at least 1 state dimension")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states)) and np.all(np.isfinite(cond))):
            raise ValueError(f"trajectory {self.id!r}: non-finite entries")
        if not np.all(np.diff(times) > 0):
            raise ValueError(f"trajectory {self.id!r}: times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "cond", cond)

    @property
    def n_obs(self) -> int:
        return self.times.shape[0]

    @property
    def dim_state(self) -> int:
        return self.states.shape[1]

    @property
    def dim_cond(self) -> int:
        return self.cond.shape[0]

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-dimension z-score constants plus the time rescaling factor."""

    state_mean: np.ndarray
    state_std: np.ndarray
    time_scale: float

    def __post_init__(self):
        mean = np.asarray(self.state_mean, dtype=np.float64)
        std = np.asarray(self.state_std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise ValueError("norm stats must be matching 1-d vectors")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise ValueError("state_std must be finite and strictly positive")
        if not (np.isfinite(self.time_scale) and self.time_scale > 0):
            raise ValueError("time_scale must be finite and positive")
        object.__setattr__(self, "state_mean", mean)
        object.__setattr__(self, "state_std", std)
        object.__setattr__(self, "time_scale", float(self.time_scale))

    def normalize_states(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.state_mean) / self.state_std

    def denormalize_states(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.state_std + self.state_mean

    def to_dict(self) -> dict:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "time_scale": self.time_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["state_mean"]), np.array(d["state_std"]), d["time_scale"])


@dataclass(eq=False)
class Dataset:
    """A list of trajectories sharing state/condition dimensionality."""

    trajectories: list[Trajectory]
    norm: NormStats | None = None

    def __post_init__(self):
        if self.trajectories:
            d = self.trajectories[0].dim_state
            e = self.trajectories[0].dim_cond
            for t in self.trajectories:
                if t.dim_state != d or t.dim_cond != e:
                    raise ValueError(f"trajectory {t.id!r}: inconsistent dimensions within dataset")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def dim_state(self) -> int:
        self._require_nonempty()
        return self.trajectories[0].dim_state

    @property
    def dim_cond(self) -> int:
        self._require_nonempty()
        return self.trajectories[0].dim_cond

    @property
    def n_transitions(self) -> int:
        return sum(t.n_obs - 1 for t in self.trajectories)

    def _require_nonempty(self):
        if not self.trajectories:
            raise ValueError("dataset has no trajectories")


@dataclass(frozen=True)
class OscillatorParams:
    """Damped spring constants and the explicit integration grid."""

    c: float = 2.0
    k: float = 1.0
    m: float = 1.0
    dt: float = 0.1
    n_steps: int = 100
    x0: float = 1.0
    v0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.m <= 0:
            raise ValueError("m must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.c < 0:
            raise ValueError("c must be >= 0")


def generate_oscillator(params: OscillatorParams, traj_id: str | None = None) -> Trajectory:
    """Simulate a damped spring on a uniform grid.

    Position advances on the previous velocity, velocity on the previous
    acceleration ``-(c/m) v - (k/m) x``; both updates are explicit so the
    output is a pure function of the parameters.  The damping coefficient
    becomes the trajectory's condition vector.
    """
    n = params.n_steps
    x = np.empty(n)
    v = np.empty(n)
    x[0] = params.x0
    v[0] = params.v0
    for i in range(1, n):
        x[i] = x[i - 1] + v[i - 1] * params.dt
        v[i] = v[i - 1] + (-(params.c / params.m) * v[i - 1] - (params.k / params.m) * x[i - 1]) * params.dt
    times = params.dt * np.arange(n)
    if traj_id is None:
        traj_id = f"osc_c{params.c:g}"
    return Trajectory(traj_id, times, x[:, None], np.array([params.c]))


def make_oscillator_benchmark() -> Dataset:
    """Three length-100 series sharing x0=1 whose different dampings make them cross.

    The raw dynamics run on a 0.1-spaced grid; the time axis is then
    compressed by 10x so it spans [0, 0.99].
    """
    trajs = []
    for c in BENCHMARK_DAMPINGS:
        t = generate_oscillator(OscillatorParams(c=c))
        trajs.append(Trajectory(t.id, t.times / 10.0, t.states, t.cond))
    return Dataset(trajs)


def add_observation_noise(ds: Dataset, std: float, rng: np.random.Generator) -> Dataset:
    """Corrupt every state entry with iid Gaussian noise (times untouched)."""
    if std == 0.0:
        return Dataset(list(ds.trajectories), norm=ds.norm)
    out = []
    for t in ds.trajectories:
        noisy = t.states + std * rng.standard_normal(t.states.shape)
        out.append(Trajectory(t.id, t.times, noisy, t.cond))
    return Dataset(out, norm=ds.norm)


def normalize_dataset(ds: Dataset, stats: NormStats | None = None) -> Dataset:
    """Z-score states and divide times by the maximum observed time.

    With ``stats=None`` the constants are computed from ``ds`` itself (the
    training split); pass the training stats to transform validation/test
    splits consistently.  State dimensions with (near) zero variance keep a
    unit std so they map to zeros instead of blowing up.
    """
    ds._require_nonempty()
    if stats is None:
        pooled = np.concatenate([t.states for t in ds.trajectories], axis=0)
        mean = pooled.mean(axis=0)
        std = pooled.std(axis=0)
        std = np.where(std < _STD_CLAMP, 1.0, std)
        tmax = max(float(t.times[-1]) for t in ds.trajectories)
        if tmax <= 0:
            raise ValueError("cannot scale times: maximum observed time is not positive")
        stats = NormStats(mean, std, tmax)
    out = [
        Trajectory(t.id, t.times / stats.time_scale, stats.normalize_states(t.states), t.cond)
        for t in ds.trajectories
    ]
    return Dataset(out, norm=stats)


def denormalize_dataset(ds: Dataset) -> Dataset:
    """Undo :func:`normalize_dataset` using the stats carried by the dataset."""
    if ds.norm is None:
        raise ValueError("dataset carries no normalization stats")
    out = [
        Trajectory(t.id, t.times * ds.norm.time_scale, ds.norm.denormalize_states(t.states), t.cond)
        for t in ds.trajectories
    ]
    return Dataset(out, norm=None)


def _format_float(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``traj_id,t,x0..[,c0..]`` rows, one block per trajectory, times ascending."""
    ds._require_nonempty()
    d = ds.dim_state
    e = ds.dim_cond
    header = ["traj_id", "t"] + [f"x{i}" for i in range(d)] + [f"c{j}" for j in range(e)]
    lines = [",".join(header)]
    for t in ds.trajectories:
        if "," in t.id or "\n" in t.id:
            raise ValueError(f"trajectory id {t.id!r} cannot be written to CSV")
        cond_part = [_format_float(v) for v in t.cond]
        for i in range(t.n_obs):
            row = [t.id, _format_float(t.times[i])]
            row += [_format_float(v) for v in t.states[i]]
            row += cond_part
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(header: str) -> tuple[int, int]:
    cols = header.strip().split(",")
    if len(cols) < 3 or cols[0] != "traj_id" or cols[1] != "t":
        raise CsvFormatError("line 1: header must start with 'traj_id,t,x0'")
    d = 0
    while 2 + d < len(cols) and cols[2 + d] == f"x{d}":
        d += 1
    if d == 0:
        raise CsvFormatError("line 1: header must declare at least one state column 'x0'")
    e = 0
    while 2 + d + e < len(cols) and cols[2 + d + e] == f"c{e}":
        e += 1
    if 2 + d + e != len(cols):
        raise CsvFormatError(f"line 1: unexpected header column {cols[2 + d + e]!r}")
    return d, e


def read_csv(path: str | Path) -> Dataset:
    """Parse a trajectory CSV into a Dataset.

    Rows belonging to one ``traj_id`` must appear with strictly increasing
    times and identical condition values; violations raise
    :class:`CsvFormatError` with the offending line number.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise CsvFormatError("no trajectories")
    d, e = _parse_header(lines[0])
    width = 2 + d + e
    order: list[str] = []
    times: dict[str, list[float]] = {}
    states: dict[str, list[list[float]]] = {}
    conds: dict[str, list[float]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split(",")
        if len(cols) != width:
            raise CsvFormatError(f"line {lineno}: expected {width} columns, got {len(cols)}")
        tid = cols[0]
        try:
            values = [float(v) for v in cols[1:]]
        except ValueError:
            raise CsvFormatError(f"line {lineno}: non-numeric field") from None
        t = values[0]
        row = values[1 : 1 + d]
        cond = values[1 + d :]
        if tid not in times:
            order.append(tid)
            times[tid] = []
            states[tid] = []
            conds[tid] = cond
        else:
            if conds[tid] != cond:
                raise CsvFormatError(f"line {lineno}: condition values change within trajectory {tid!r}")
            if t <= times[tid][-1]:
                raise CsvFormatError(f"line {lineno}: times not strictly increasing for trajectory {tid!r}")
        times[tid].append(t)
        states[tid].append(row)
    if not order:
        raise CsvFormatError("no trajectories")
    trajs = []
    for tid in order:
        try:
            trajs.append(Trajectory(tid, np.array(times[tid]), np.array(states[tid]), np.array(conds[tid])))
        except ValueError as exc:
            raise CsvFormatError(str(exc)) from None
    return Dataset(trajs)
