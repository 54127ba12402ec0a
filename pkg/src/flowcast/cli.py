"""Thin command-line client for the service.

Commands assemble a request, post it to the service (an in-process app by
default, or a remote server via --server / FLOWCAST_SERVER), and print the
JSON response.  Exit codes: 0 success, 1 runtime failure, 2 usage or
validation error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

SERVER_ENV = "FLOWCAST_SERVER"


def _post(path: str, payload: dict, server: str | None):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def _inprocess():
        from .service import app

        # surface handler crashes as 500s, exactly like a remote server would
        transport = httpx.ASGITransport(app=app, raise_app_exceptions=False)
        async with httpx.AsyncClient(transport=transport, base_url="http://flowcast", timeout=None) as client:
            return await client.post(path, json=payload)

    return asyncio.run(_inprocess())


def _parse_assignments(tokens: list[str], flag: str) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise SystemExit(f"{flag}: expected key=value, got {tok!r}")
        key, _, value = tok.partition("=")
        out[key] = value
    return out


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        print(f"config file not found: {p}", file=sys.stderr)
        raise SystemExit(2)
    with open(p, "rb") as f:
        return tomllib.load(f)


def _set_if(d: dict, section: str | None, key: str, value):
    if value is None:
        return
    if section is None:
        d[key] = value
    else:
        d.setdefault(section, {})[key] = value


def _build_generate(args) -> dict:
    payload = {"noise_std": args.noise_std, "seed": args.seed, "out": args.out}
    if args.benchmark:
        payload["benchmark"] = args.benchmark
    if args.oscillator:
        oscillators = []
        for group in args.oscillator:
            spec = {}
            for key, value in _parse_assignments(group, "--oscillator").items():
                try:
                    spec[key] = int(value) if key == "n_steps" else float(value)
                except ValueError:
                    print(f"--oscillator: bad value for {key}: {value!r}", file=sys.stderr)
                    raise SystemExit(2) from None
            oscillators.append(spec)
        payload["oscillators"] = oscillators
    return payload


def _build_train(args) -> dict:
    cfg = _load_config_file(args.config)
    _set_if(cfg, None, "seed", args.seed)
    _set_if(cfg, None, "out_dir", args.out_dir)
    _set_if(cfg, "data", "source", args.data_source)
    _set_if(cfg, "data", "train_csv", args.train_csv)
    _set_if(cfg, "data", "val_csv", args.val_csv)
    _set_if(cfg, "data", "noise_std", args.noise_std)
    _set_if(cfg, "model", "hidden_dim", args.hidden)
    _set_if(cfg, "model", "n_hidden_layers", args.layers)
    _set_if(cfg, "model", "mode", args.mode)
    if args.no_cond:
        _set_if(cfg, "model", "use_cond", False)
    _set_if(cfg, "sampler", "sigma", args.sigma)
    _set_if(cfg, "sampler", "history_len", args.history)
    _set_if(cfg, "train", "lr", args.lr)
    _set_if(cfg, "train", "batch_size", args.batch_size)
    _set_if(cfg, "train", "max_epochs", args.max_epochs)
    _set_if(cfg, "train", "patience", args.patience)
    _set_if(cfg, "train", "w_target", args.w_target)
    _set_if(cfg, "train", "w_sigma", args.w_sigma)
    _set_if(cfg, "train", "w_time", args.w_time)
    return {"config": cfg}


def _rollout_payload(args) -> dict:
    rollout = {}
    _set_if(rollout, None, "mode", getattr(args, "rollout_mode", None))
    _set_if(rollout, None, "integrator", args.mode)
    _set_if(rollout, None, "substeps", args.substeps)
    _set_if(rollout, None, "sde_noise", args.sde_noise)
    _set_if(rollout, None, "ensemble", args.ensemble)
    _set_if(rollout, None, "start_index", args.start_index)
    if args.autoregressive:
        rollout["teacher_forcing"] = False
    return rollout


def _data_payload(args) -> dict:
    data = {}
    if args.data_csv:
        data = {"source": "csv", "train_csv": args.data_csv}
    _set_if(data, None, "noise_std", args.noise_std)
    return data


def _build_eval(args) -> dict:
    payload = {"model_dir": args.model_dir, "seed": args.seed, "out_dir": args.out_dir}
    data = _data_payload(args)
    if data:
        payload["data"] = data
    rollout = _rollout_payload(args)
    if rollout:
        payload["rollout"] = rollout
    return payload


def _build_predict(args) -> dict:
    payload = {"model_dir": args.model_dir, "seed": args.seed, "out": args.out}
    data = _data_payload(args)
    if data:
        payload["data"] = data
    rollout = _rollout_payload(args)
    if rollout:
        payload["rollout"] = rollout
    return payload


def _build_reproduce(args) -> dict:
    return {"out_dir": args.out_dir, "seed": args.seed, "max_epochs": args.epochs}


def _add_eval_like_flags(p: argparse.ArgumentParser):
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data-csv", help="evaluate on this CSV instead of the built-in benchmark")
    p.add_argument("--noise-std", type=float)
    p.add_argument("--mode", choices=["auto", "ode", "sde"], help="integrator choice")
    p.add_argument("--substeps", type=int)
    p.add_argument("--sde-noise", type=float)
    p.add_argument("--ensemble", type=int)
    p.add_argument("--start-index", type=int)
    p.add_argument("--autoregressive", action="store_true", help="feed predictions forward instead of teacher forcing")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast", description=__doc__)
    parser.add_argument("--server", default=os.environ.get(SERVER_ENV), help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset CSV plus manifest")
    g.add_argument("--benchmark", choices=["oscillator"])
    g.add_argument("--oscillator", action="append", nargs="+", metavar="KEY=VALUE",
                   help="one custom oscillator per flag, e.g. --oscillator c=0 k=0")
    g.add_argument("--noise-std", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="dataset.csv")

    t = sub.add_parser("train", help="train a model from a TOML config (flags override)")
    t.add_argument("--config", help="TOML run configuration")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir")
    t.add_argument("--data-source", choices=["benchmark", "csv"])
    t.add_argument("--train-csv")
    t.add_argument("--val-csv")
    t.add_argument("--noise-std", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--mode", choices=["ode", "sde"])
    t.add_argument("--no-cond", action="store_true", help="drop the static condition input")
    t.add_argument("--sigma", type=float)
    t.add_argument("--history", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--w-target", type=float)
    t.add_argument("--w-sigma", type=float)
    t.add_argument("--w-time", type=float)

    e = sub.add_parser("eval", help="score a checkpoint: metrics JSON + prediction CSV")
    _add_eval_like_flags(e)
    e.add_argument("--out-dir", default="eval")

    p = sub.add_parser("predict", help="export a prediction CSV")
    _add_eval_like_flags(p)
    p.add_argument("--rollout-mode", choices=["observation", "free"])
    p.add_argument("--out", default="predictions.csv")

    r = sub.add_parser("reproduce-oscillator", help="run the built-in crossing-oscillator comparison")
    r.add_argument("--out-dir", default="reproduce")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--epochs", type=int, default=1000)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return parser


_ROUTES = {
    "generate": ("/generate", _build_generate),
    "train": ("/train", _build_train),
    "eval": ("/eval", _build_eval),
    "predict": ("/predict", _build_predict),
    "reproduce-oscillator": ("/reproduce-oscillator", _build_reproduce),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    path, build = _ROUTES[args.command]
    payload = build(args)
    try:
        response = _post(path, payload, args.server)
    except httpx.HTTPError as exc:
        print(f"service unreachable: {exc}", file=sys.stderr)
        return 1
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error ({response.status_code}): {detail}", file=sys.stderr)
        return 2 if response.status_code in (400, 422) else 1
    print(json.dumps(response.json(), sort_keys=True, indent=2))
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
