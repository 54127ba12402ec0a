import time

import numpy as np
import pytest

from flowcast.bridge import SamplerConfig
from flowcast.data import NormStats, make_oscillator_benchmark, normalize_dataset
from flowcast.model import build_model, load_model
from flowcast.runner import do_train, reproduce_arm_config


@pytest.fixture(scope="session")
def benchmark_raw():
    return make_oscillator_benchmark()


@pytest.fixture(scope="session")
def benchmark_norm(benchmark_raw):
    return normalize_dataset(benchmark_raw)


@pytest.fixture(scope="session")
def reference_runs(tmp_path_factory):
    """The paired seed-0 oscillator training runs behind the committed thresholds."""
    root = tmp_path_factory.mktemp("reference")
    started = time.monotonic()
    arms = {}
    for name, history_len in (("history3", 3), ("history0", 0)):
        cfg = reproduce_arm_config(name, history_len, True, str(root / name), seed=0, max_epochs=1000)
        response = do_train(cfg)
        arms[name] = load_model(response.model_dir)
    return arms, time.monotonic() - started


def make_identity_predictor_model(dim_state=1, history_len=0, dim_cond=0, mode="sde",
                                  sigma=0.1, bias=0.0, norm=None):
    """Model whose predictor returns exactly x (+ bias): relu(x) - relu(-x) per dimension.

    A zero predicted displacement makes the rollout velocity exactly zero,
    which isolates the integrator's noise term.
    """
    if norm is None:
        norm = NormStats(np.zeros(dim_state), np.ones(dim_state), 1.0)
    cfg = SamplerConfig(sigma=sigma, history_len=history_len)
    model = build_model(dim_state, dim_cond, norm, cfg, hidden_dim=2 * dim_state,
                        n_hidden_layers=1, activation="relu", seed=0, mode=mode,
                        use_cond=dim_cond > 0)
    p = model.predictor
    for arr in p.weights + p.biases:
        arr.fill(0.0)
    for j in range(dim_state):
        p.weights[0][1 + j, 2 * j] = 1.0
        p.weights[0][1 + j, 2 * j + 1] = -1.0
        p.weights[1][2 * j, j] = 1.0
        p.weights[1][2 * j + 1, j] = -1.0
    p.biases[1][:] = bias
    return model


def datasets_close(a, b, tol=1e-12):
    if len(a.trajectories) != len(b.trajectories):
        return False
    for ta, tb in zip(a.trajectories, b.trajectories):
        if ta.id != tb.id:
            return False
        for fa, fb in ((ta.times, tb.times), (ta.states, tb.states), (ta.cond, tb.cond)):
            if fa.shape != fb.shape:
                return False
            if tol == 0.0:
                if not np.array_equal(fa, fb):
                    return False
            elif not np.allclose(fa, fb, rtol=tol, atol=tol):
                return False
    return True
