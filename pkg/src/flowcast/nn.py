"""Plain-numpy MLPs in float64: explicit forward/backward, Adam, finite-difference checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "selu")

_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805

_CHECKPOINT_FORMAT = "flowcast-mlp"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    out_dim: int
    hidden_dim: int = 256
    n_hidden_layers: int = 2
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.hidden_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.n_hidden_layers < 1:
            raise ValueError("n_hidden_layers must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.in_dim] + [self.hidden_dim] * self.n_hidden_layers + [self.out_dim]


class Mlp:
    """Fully connected net holding parameters plus same-shaped gradient buffers.

    Gradients accumulate across backward calls until an optimizer step (or
    :func:`zero_grad`) clears them.
    """

    def __init__(self, config: MlpConfig, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.config = config
        self.weights = weights
        self.biases = biases
        self.grad_w = [np.zeros_like(w) for w in weights]
        self.grad_b = [np.zeros_like(b) for b in biases]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Mlp":
        return Mlp(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params_equal(self, other: "Mlp") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases)
        )


def mlp_init(config: MlpConfig) -> Mlp:
    """Seeded uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases and gradients."""
    rng = np.random.default_rng(config.seed)
    dims = config.layer_dims
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(config, weights, biases)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return _SELU_SCALE * np.where(z > 0, z, _SELU_ALPHA * np.expm1(z))


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return np.where(z > 0, 1.0, 0.0)
    return _SELU_SCALE * np.where(z > 0, 1.0, _SELU_ALPHA * np.exp(z))


def mlp_forward(m: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Batched forward pass; returns the output and the cache backward needs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.config.in_dim:
        raise ValueError(f"expected input of width {m.config.in_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    act = m.config.activation
    cache = [x]
    a = x
    for l in range(m.n_layers - 1):
        z = a @ m.weights[l] + m.biases[l]
        a = _activate(act, z)
        cache.append((z, a))
    y = a @ m.weights[-1] + m.biases[-1]
    return y, cache


def mlp_backward(m: Mlp, cache: list, dy: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients for the forward pass behind ``cache``.

    ``dy`` is the loss gradient at the network output; the matching gradient
    at the input is returned.
    """
    dy = np.asarray(dy, dtype=np.float64)
    x = cache[0]
    last_a = cache[-1][1] if m.n_layers > 1 else x
    if dy.shape != (x.shape[0], m.config.out_dim):
        raise ValueError(f"expected output gradient of shape {(x.shape[0], m.config.out_dim)}, got {dy.shape}")
    act = m.config.activation
    m.grad_w[-1] += last_a.T @ dy
    m.grad_b[-1] += dy.sum(axis=0)
    da = dy @ m.weights[-1].T
    for l in range(m.n_layers - 2, -1, -1):
        z, a = cache[l + 1]
        dz = da * _activate_grad(act, z, a)
        prev_a = cache[l][1] if l > 0 else x
        m.grad_w[l] += prev_a.T @ dz
        m.grad_b[l] += dz.sum(axis=0)
        da = dz @ m.weights[l].T
    return da


def zero_grad(m: Mlp) -> None:
    for g in m.grad_w:
        g.fill(0.0)
    for g in m.grad_b:
        g.fill(0.0)


def scale_grad(m: Mlp, factor: float) -> None:
    for g in m.grad_w:
        g *= factor
    for g in m.grad_b:
        g *= factor


@dataclass
class AdamState:
    """First/second moment buffers and hyperparameters for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


def adam_init(m: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m_w=[np.zeros_like(w) for w in m.weights],
        v_w=[np.zeros_like(w) for w in m.weights],
        m_b=[np.zeros_like(b) for b in m.biases],
        v_b=[np.zeros_like(b) for b in m.biases],
    )


def adam_step(m: Mlp, st: AdamState) -> None:
    """Bias-corrected moment update; increments the step counter and zeroes gradients."""
    for l in range(m.n_layers):
        if not (np.all(np.isfinite(m.grad_w[l])) and np.all(np.isfinite(m.grad_b[l]))):
            raise FloatingPointError(f"non-finite gradient in layer {l}")
    st.step += 1
    c1 = 1.0 - st.beta1**st.step
    c2 = 1.0 - st.beta2**st.step
    for params, grads, ms, vs in (
        (m.weights, m.grad_w, st.m_w, st.v_w),
        (m.biases, m.grad_b, st.m_b, st.v_b),
    ):
        for l in range(m.n_layers):
            g = grads[l]
            ms[l] *= st.beta1
            ms[l] += (1.0 - st.beta1) * g
            vs[l] *= st.beta2
            vs[l] += (1.0 - st.beta2) * g * g
            params[l] -= st.lr * (ms[l] / c1) / (np.sqrt(vs[l] / c2) + st.eps)
    zero_grad(m)


def gradcheck(m: Mlp, x: np.ndarray, loss, step: float = 1e-5) -> float:
    """Max relative mismatch between analytic and central-difference gradients.

    ``loss`` maps the network output to ``(scalar, d scalar / d output)``.
    Works on a copy, so the caller's gradient buffers are untouched.  Meant
    for small nets; cost is two forward passes per parameter.
    """
    work = m.copy()
    y, cache = mlp_forward(work, x)
    _, dy = loss(y)
    mlp_backward(work, cache, dy)

    def loss_value() -> float:
        out, _ = mlp_forward(work, x)
        return float(loss(out)[0])

    worst = 0.0
    for grads, params in ((work.grad_w, work.weights), (work.grad_b, work.biases)):
        for g, p in zip(grads, params):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + step
                up = loss_value()
                flat_p[i] = orig - step
                down = loss_value()
                flat_p[i] = orig
                numeric = (up - down) / (2.0 * step)
                analytic = flat_g[i]
                scale = max(abs(analytic), abs(numeric), 1e-5)
                worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def save_mlp(m: Mlp, path: str | Path) -> None:
    """Checkpoint as a JSON header line followed by raw little-endian float64 parameters."""
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "config": asdict(m.config),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for w, b in zip(m.weights, m.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_mlp(path: str | Path) -> Mlp:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != _CHECKPOINT_FORMAT or header.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a recognized checkpoint")
    config = MlpConfig(**header["config"])
    flat = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    dims = config.layer_dims
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    weights = []
    biases = []
    ofs = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[ofs : ofs + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        ofs += fan_in * fan_out
        biases.append(flat[ofs : ofs + fan_out].copy())
        ofs += fan_out
    return Mlp(config, weights, biases)
