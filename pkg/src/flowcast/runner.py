"""Command pipeline behind the service endpoints: resolve, seed, run, persist.

Every run is a pure function of (config, seed): randomness fans out from one
root seed into fixed named streams, artifacts are written with sorted keys
and no timestamps, and the config hash recorded in outputs covers the run
parameters (filesystem paths excluded, so relocated reruns hash identically).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .bridge import SamplerConfig
from .data import (
    Dataset,
    OscillatorParams,
    add_observation_noise,
    generate_oscillator,
    make_oscillator_benchmark,
    normalize_dataset,
    read_csv,
    write_csv,
)
from .metrics import MetricReport, dataset_mean_mse, increments_mmd, mean_mse, uncertainty_mse
from .model import FlowModel, build_model, load_model, save_model
from .rollout import RolloutConfig, RolloutResult, rollout_ode, rollout_sde, write_predictions_csv
from .schemas import (
    DataSpec,
    EvalRequest,
    EvalResponse,
    GenerateRequest,
    GenerateResponse,
    PredictRequest,
    PredictResponse,
    ReproduceRequest,
    ReproduceResponse,
    RolloutSpec,
    RunConfig,
    TrainRequest,
    TrainResponse,
)
from .training import TrainConfig, train

OUT_ROOT_ENV = "FLOWCAST_OUT_ROOT"

# Named children of the root seed; order is part of the artifact contract.
_STREAM_MODEL = 0
_STREAM_TRAIN = 1
_STREAM_NOISE = 2
_STREAM_ROLLOUT = 3
_STREAM_METRICS = 4


def _streams(seed: int, n: int = 8) -> list[int]:
    return [int(v) for v in np.random.SeedSequence(seed).generate_state(n, np.uint64)]


def resolve_out(path: str | Path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get(OUT_ROOT_ENV, ".")) / p


def config_hash(cfg: RunConfig) -> str:
    payload = cfg.model_dump()
    payload.pop("out_dir", None)
    payload["data"].pop("train_csv", None)
    payload["data"].pop("val_csv", None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _dataset_from_spec(spec: DataSpec) -> tuple[Dataset, Dataset, bool]:
    """Raw (pre-normalization) train and validation datasets; flag marks sharing."""
    if spec.source == "benchmark":
        ds = make_oscillator_benchmark()
        return ds, ds, True
    if spec.source == "oscillator":
        trajs = [
            generate_oscillator(OscillatorParams(**osc.model_dump()), traj_id=f"osc{i}_c{osc.c:g}")
            for i, osc in enumerate(spec.oscillators)
        ]
        ds = Dataset(trajs)
        return ds, ds, True
    train_path = resolve_out(spec.train_csv)
    if not train_path.exists():
        raise FileNotFoundError(f"train_csv not found: {train_path}")
    train_ds = read_csv(train_path)
    if spec.val_csv:
        val_path = resolve_out(spec.val_csv)
        if not val_path.exists():
            raise FileNotFoundError(f"val_csv not found: {val_path}")
        return train_ds, read_csv(val_path), False
    return train_ds, train_ds, True


def load_raw_datasets(spec: DataSpec, noise_seed: int) -> tuple[Dataset, Dataset]:
    train_ds, val_ds, shared = _dataset_from_spec(spec)
    if spec.noise_std > 0:
        sub = _streams(noise_seed, 2)
        train_ds = add_observation_noise(train_ds, spec.noise_std, np.random.default_rng(sub[0]))
        if shared:
            val_ds = train_ds
        else:
            val_ds = add_observation_noise(val_ds, spec.noise_std, np.random.default_rng(sub[1]))
    return train_ds, val_ds


def do_generate(req: GenerateRequest) -> GenerateResponse:
    if req.benchmark == "oscillator":
        ds = make_oscillator_benchmark()
        source = {"benchmark": "oscillator"}
    else:
        trajs = [
            generate_oscillator(OscillatorParams(**osc.model_dump()), traj_id=f"osc{i}_c{osc.c:g}")
            for i, osc in enumerate(req.oscillators)
        ]
        ds = Dataset(trajs)
        source = {"oscillators": [osc.model_dump() for osc in req.oscillators]}
    if req.noise_std > 0:
        ds = add_observation_noise(ds, req.noise_std, np.random.default_rng(_streams(req.seed)[_STREAM_NOISE]))
    out = resolve_out(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    n_rows = ds.n_transitions + len(ds)
    manifest = {
        "csv": out.name,
        "n_trajectories": len(ds),
        "n_rows": n_rows,
        "noise_std": req.noise_std,
        "seed": req.seed,
        "source": source,
    }
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    _write_json(manifest_path, manifest)
    return GenerateResponse(
        csv_path=str(out), manifest_path=str(manifest_path), n_trajectories=len(ds), n_rows=n_rows
    )


def do_train(cfg: RunConfig) -> TrainResponse:
    streams = _streams(cfg.seed)
    train_raw, val_raw = load_raw_datasets(cfg.data, streams[_STREAM_NOISE])
    train_norm = normalize_dataset(train_raw)
    val_norm = train_norm if val_raw is train_raw else normalize_dataset(val_raw, stats=train_norm.norm)

    sampler_cfg = SamplerConfig(cfg.sampler.sigma, cfg.sampler.history_len, cfg.sampler.s_clip)
    model = build_model(
        dim_state=train_norm.dim_state,
        dim_cond=train_norm.dim_cond,
        norm=train_norm.norm,
        sampler_cfg=sampler_cfg,
        hidden_dim=cfg.model.hidden_dim,
        n_hidden_layers=cfg.model.n_hidden_layers,
        activation=cfg.model.activation,
        seed=streams[_STREAM_MODEL],
        mode=cfg.model.mode,
        use_cond=cfg.model.use_cond,
        sigma_per_dim=cfg.model.sigma_per_dim,
    )
    train_cfg = TrainConfig(
        lr=cfg.train.lr,
        batch_size=cfg.train.batch_size,
        max_epochs=cfg.train.max_epochs,
        patience=cfg.train.patience,
        steps_per_epoch=cfg.train.steps_per_epoch,
        seed=streams[_STREAM_TRAIN],
        loss_weights=(cfg.train.w_target, cfg.train.w_sigma, cfg.train.w_time),
        val_samples=cfg.train.val_samples,
    )
    report = train(model, train_norm, val_norm, train_cfg)

    run_dir = resolve_out(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    _write_json(run_dir / "config.json", {"config": cfg.model_dump(), "config_hash": h})
    log_lines = [json.dumps(e.to_dict(), sort_keys=True) for e in report.epochs]
    (run_dir / "log.jsonl").write_text("\n".join(log_lines) + ("\n" if log_lines else ""), encoding="utf-8")
    _write_json(run_dir / "report.json", report.to_dict())
    model_dir = run_dir / "model"
    save_model(model, model_dir, extra={"config_hash": h})

    last = report.epochs[-1] if report.epochs else None
    final = {
        "loss_target": last.loss_target if last else float("nan"),
        "loss_sigma": last.loss_sigma if last else float("nan"),
        "loss_time": last.loss_time if last else float("nan"),
    }
    return TrainResponse(
        run_dir=str(run_dir),
        model_dir=str(model_dir),
        config_hash=h,
        best_epoch=report.best_epoch,
        best_val=report.best_val,
        stop_reason=report.stop_reason,
        n_epochs=len(report.epochs),
        final_train_losses=final,
    )


def _load_model_with_hash(model_dir: str | Path) -> tuple[FlowModel, str]:
    model_dir = resolve_out(model_dir)
    if not (model_dir / "model.json").exists():
        raise FileNotFoundError(f"no model bundle at {model_dir}")
    model = load_model(model_dir)
    manifest = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    return model, manifest.get("config_hash", "")


def _eval_dataset_for_model(model: FlowModel, spec: DataSpec, noise_seed: int) -> tuple[Dataset, Dataset]:
    """Raw and model-normalized versions of the evaluation dataset."""
    raw, _ = load_raw_datasets(spec, noise_seed)
    if raw.dim_state != model.dim_state or raw.dim_cond != model.dim_cond:
        raise ValueError(
            f"dataset dimensions (d={raw.dim_state}, e={raw.dim_cond}) do not match "
            f"the checkpoint (d={model.dim_state}, e={model.dim_cond})"
        )
    return raw, normalize_dataset(raw, stats=model.norm)


def _resolve_rollout(model: FlowModel, spec: RolloutSpec) -> tuple[RolloutConfig, str]:
    integrator = spec.integrator
    if integrator == "auto":
        integrator = model.mode
    sde_noise = spec.sde_noise if spec.sde_noise is not None else model.sampler_cfg.sigma
    cfg = RolloutConfig(
        mode=spec.mode,
        substeps=spec.substeps,
        sde_noise=sde_noise,
        teacher_forcing=spec.teacher_forcing,
        start_index=spec.start_index,
        noise_from_sigma_head=spec.noise_from_sigma_head,
    )
    return cfg, integrator


def _run_ensembles(
    model: FlowModel, norm_ds: Dataset, cfg: RolloutConfig, integrator: str, ensemble: int, seed: int
) -> list[list[RolloutResult]]:
    ensembles = []
    member_seeds = _streams(seed, max(ensemble * len(norm_ds), 1))
    i = 0
    for traj in norm_ds.trajectories:
        members = []
        for _ in range(ensemble if integrator == "sde" else 1):
            if integrator == "sde":
                members.append(rollout_sde(model, traj, cfg, np.random.default_rng(member_seeds[i])))
            else:
                members.append(rollout_ode(model, traj, cfg))
            i += 1
        ensembles.append(members)
    return ensembles


def _mean_results(ensembles: list[list[RolloutResult]]) -> list[RolloutResult]:
    out = []
    for members in ensembles:
        first = members[0]
        if len(members) == 1:
            out.append(first)
            continue
        out.append(
            RolloutResult(
                times=first.times,
                pred_states=np.mean([m.pred_states for m in members], axis=0),
                pred_uncertainty=np.mean([m.pred_uncertainty for m in members], axis=0),
                teacher_forced=first.teacher_forced,
                mode=first.mode,
                aborted=any(m.aborted for m in members),
                clamp_events=sum(m.clamp_events for m in members),
            )
        )
    return out


def do_eval(req: EvalRequest) -> EvalResponse:
    model, train_hash = _load_model_with_hash(req.model_dir)
    if req.rollout.mode != "observation":
        raise ValueError("eval requires observation-clocked rollouts; use predict for free-running output")
    streams = _streams(req.seed)
    raw, norm_ds = _eval_dataset_for_model(model, req.data, streams[_STREAM_NOISE])
    cfg, integrator = _resolve_rollout(model, req.rollout)
    ensembles = _run_ensembles(model, norm_ds, cfg, integrator, req.rollout.ensemble, streams[_STREAM_ROLLOUT])
    means = _mean_results(ensembles)

    per_traj = {t.id: mean_mse(p, t) for p, t in zip(means, norm_ds.trajectories)}
    report = MetricReport(
        mean_mse=dataset_mean_mse(means, norm_ds.trajectories),
        rbf_mmd=increments_mmd(ensembles, norm_ds.trajectories),
        uncertainty_mse=uncertainty_mse(model, norm_ds, seed=streams[_STREAM_METRICS]),
        n_trajectories=len(norm_ds),
        config_hash=train_hash,
        seed=req.seed,
        per_trajectory=per_traj,
    )

    out_dir = resolve_out(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.json"
    _write_json(metrics_path, report.to_dict())
    predictions_path = out_dir / "predictions.csv"
    write_predictions_csv(predictions_path, means, raw.trajectories, model.norm)
    return EvalResponse(
        metrics=report.to_dict(), metrics_path=str(metrics_path), predictions_path=str(predictions_path)
    )


def do_predict(req: PredictRequest) -> PredictResponse:
    model, _ = _load_model_with_hash(req.model_dir)
    streams = _streams(req.seed)
    raw, norm_ds = _eval_dataset_for_model(model, req.data, streams[_STREAM_NOISE])
    cfg, integrator = _resolve_rollout(model, req.rollout)
    ensembles = _run_ensembles(model, norm_ds, cfg, integrator, req.rollout.ensemble, streams[_STREAM_ROLLOUT])
    means = _mean_results(ensembles)
    out = resolve_out(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_rows = write_predictions_csv(out, means, raw.trajectories, model.norm)
    return PredictResponse(predictions_path=str(out), n_rows=n_rows)


# Arms of the built-in crossing-oscillator comparison: the full model with a
# three-observation window, the same model without memory, and the no-memory
# model additionally stripped of the damping-coefficient condition.
REPRODUCE_ARMS = (
    ("history3", 3, True),
    ("history0", 0, True),
    ("history0_nocond", 0, False),
)

# Reference training settings for the comparison (one epoch = 100 batches; the
# large frozen validation batch keeps the early-stopping signal smooth).
_REPRODUCE_TRAIN = {"lr": 1e-3, "patience": 3, "steps_per_epoch": 100, "val_samples": 2048}


def reproduce_arm_config(name: str, history_len: int, use_cond: bool, out_dir: str, seed: int, max_epochs: int) -> RunConfig:
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        model={"hidden_dim": 256, "use_cond": use_cond},
        sampler={"sigma": 0.1, "history_len": history_len},
        train=dict(_REPRODUCE_TRAIN, max_epochs=max_epochs),
    )


def do_reproduce(req: ReproduceRequest) -> ReproduceResponse:
    out_dir = resolve_out(req.out_dir)
    arms = {}
    for name, history_len, use_cond in REPRODUCE_ARMS:
        cfg = reproduce_arm_config(name, history_len, use_cond, str(out_dir / name), req.seed, req.max_epochs)
        tr = do_train(cfg)
        ev = do_eval(
            EvalRequest(
                model_dir=tr.model_dir,
                rollout=RolloutSpec(teacher_forcing=True),
                seed=req.seed,
                out_dir=str(out_dir / name / "eval"),
            )
        )
        arms[name] = {
            "mean_mse": ev.metrics["mean_mse"],
            "run_dir": tr.run_dir,
            "predictions": ev.predictions_path,
            "best_epoch": tr.best_epoch,
            "stop_reason": tr.stop_reason,
        }
    mse = {name: arms[name]["mean_mse"] for name, _, _ in REPRODUCE_ARMS}
    summary = {
        "arms": arms,
        "memory_advantage_factor": mse["history0"] / mse["history3"],
        "history3_beats_history0": mse["history3"] < mse["history0"],
        "history3_beats_history0_nocond": mse["history3"] < mse["history0_nocond"],
        "seed": req.seed,
        "max_epochs": req.max_epochs,
    }
    _write_json(out_dir / "summary.json", summary)
    return ReproduceResponse(out_dir=str(out_dir), summary=summary)
