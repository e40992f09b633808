"""Command-line entry point: ``optoferm <command> --config cfg.json --seed N --out DIR``.

Relative paths inside a config file are resolved against the config file's
directory. Every JSON written embeds the config that produced it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .errors import ConfigError, DataError, InfeasibleError, OptofermError
from .estimate import FitSpec, fit_parameters
from .hybrid import compute_residuals, hybrid_rhs, train_residual_models
from .model import NOMINAL_PARAMS, KineticParams, State, nominal_rhs
from .ocp import OCPSpec, solve
from .sim import DEFAULT_STEP, ControlSchedule, Trajectory, batch_metrics, integrate

log = logging.getLogger("optoferm")

COMMANDS = ("simulate", "fit", "residuals", "train-gp", "optimize", "metrics")


class _Ctx:
    def __init__(self, config: dict, base: Path, seed: int | None, out: Path):
        self.config = config
        self.base = base
        self.seed = seed
        self.out = out

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def provenance(self) -> dict:
        return {"config": self.config, "seed": self.seed}

    def write(self, name, payload):
        path = io.write_json(self.out / name, payload, **self.provenance())
        log.info("wrote %s", path)
        return path


def _params(ctx: _Ctx) -> KineticParams:
    cfg = ctx.config
    if "params" in cfg:
        return KineticParams.from_dict(cfg["params"]).validate()
    if "params_file" in cfg:
        doc = io.read_json(ctx.path(cfg["params_file"]))
        d = doc.get("params", doc)
        if isinstance(d, dict) and "params" in d:
            d = d["params"]
        return KineticParams.from_dict(d).validate()
    return NOMINAL_PARAMS


def _models(ctx: _Ctx):
    if "models_file" not in ctx.config:
        return None
    return io.load_residual_models(ctx.path(ctx.config["models_file"]))


def _datasets(ctx: _Ctx):
    specs = ctx.config.get("datasets")
    if not specs:
        raise ConfigError("config needs a non-empty 'datasets' list")
    out = []
    for d in specs:
        if "csv" not in d:
            raise ConfigError("each dataset entry needs a 'csv' path")
        sched = ctx.path(d["schedule_csv"]) if d.get("schedule_csv") else None
        out.append(io.load_batch_csv(ctx.path(d["csv"]), sched, id=d.get("id")))
    return out


def _schedule(ctx: _Ctx) -> ControlSchedule:
    cfg = ctx.config
    if "schedule" in cfg:
        s = cfg["schedule"]
        return ControlSchedule(
            s.get("t0", 0.0), s["tf"], s.get("interval_width", 1.0), s["levels"]
        )
    if "schedule_csv" in cfg:
        return io.load_schedule_csv(ctx.path(cfg["schedule_csv"]), tf=cfg.get("tf"))
    return ControlSchedule.constant(
        cfg.get("constant_u", 0.0),
        tf=cfg.get("tf", 8.0),
        t0=cfg.get("t0", 0.0),
        interval_width=cfg.get("interval_width", 1.0),
    )


def cmd_simulate(ctx: _Ctx) -> int:
    cfg = ctx.config
    params = _params(ctx)
    x0 = cfg.get("initial_state", {"B_c": 0.0713, "E": 0.0, "s_G": 4.0, "p_L": 0.0})
    x0 = State(x0["B_c"], x0.get("E", 0.0), x0["s_G"], x0["p_L"])
    model = cfg.get("model", "nominal")
    if model == "hybrid":
        models = _models(ctx)
        if models is None:
            raise ConfigError("hybrid simulation needs 'models_file'")
        rhs = hybrid_rhs(params, models)
    elif model == "nominal":
        rhs = nominal_rhs(params)
    else:
        raise ConfigError(f"unknown model {model!r}")
    traj = integrate(x0, _schedule(ctx), rhs, cfg.get("step", DEFAULT_STEP))
    io.write_trajectory_csv(ctx.out / "trajectory.csv", traj, every=cfg.get("every", 1))
    ctx.write(
        "simulate.json",
        {
            "metrics": batch_metrics(traj).as_dict(),
            "final_state": traj.final.__dict__,
            "params": params.as_dict(),
        },
    )
    return 0


def cmd_metrics(ctx: _Ctx) -> int:
    cfg = ctx.config
    if "trajectory_csv" in cfg:
        traj = io.load_trajectory_csv(ctx.path(cfg["trajectory_csv"]))
    elif "batch_csv" in cfg:
        sched = ctx.path(cfg["schedule_csv"]) if cfg.get("schedule_csv") else None
        data = io.load_batch_csv(ctx.path(cfg["batch_csv"]), sched)
        if not np.all(np.isfinite(data.values[-1][[0, 2, 3]])):
            raise DataError("the last row must be fully observed to compute batch metrics")
        traj = Trajectory(data.times, data.values, data.schedule)
    else:
        raise ConfigError("metrics needs 'trajectory_csv' or 'batch_csv'")
    ctx.write("metrics.json", {"metrics": batch_metrics(traj).as_dict()})
    return 0


def cmd_fit(ctx: _Ctx) -> int:
    datasets = _datasets(ctx)
    fit_cfg = dict(ctx.config.get("fit", {}))
    if ctx.seed is not None:
        fit_cfg["seed"] = ctx.seed
    spec = FitSpec.from_dict(fit_cfg)
    result = fit_parameters(datasets, spec)
    ctx.write("fit.json", dict(result.as_dict(), spec=spec.as_dict()))
    return 0


def cmd_residuals(ctx: _Ctx) -> int:
    params = _params(ctx)
    step = ctx.config.get("step", DEFAULT_STEP)
    samples = []
    for data in _datasets(ctx):
        samples.extend(compute_residuals(data, params, step))
    io.write_residuals_csv(ctx.out / "residuals.csv", samples)
    ctx.write("residuals.json", {"n_samples": len(samples)})
    return 0


def cmd_train_gp(ctx: _Ctx) -> int:
    cfg = ctx.config
    paths = cfg.get("residuals_csv")
    if not paths:
        raise ConfigError("train-gp needs 'residuals_csv'")
    if isinstance(paths, str):
        paths = [paths]
    samples = []
    for p in paths:
        samples.extend(io.load_residuals_csv(ctx.path(p)))
    models = train_residual_models(
        samples,
        budget=cfg.get("budget", 300),
        n_starts=cfg.get("n_starts", 8),
        seed=ctx.seed if ctx.seed is not None else cfg.get("seed", 0),
    )
    io.save_residual_models(ctx.out / "models.json", models, **ctx.provenance())
    return 0


def cmd_optimize(ctx: _Ctx) -> int:
    cfg = ctx.config
    if "ocp" not in cfg:
        raise ConfigError("optimize needs an 'ocp' section")
    spec = OCPSpec.from_dict(cfg["ocp"])
    seed = ctx.seed if ctx.seed is not None else cfg.get("seed", 0)
    try:
        sol = solve(spec, _params(ctx), _models(ctx), seed=seed)
    except InfeasibleError as e:
        ctx.write("infeasible.json", {"error": str(e), "report": e.report})
        raise
    io.write_trajectory_csv(ctx.out / "trajectory.csv", sol.trajectory, every=cfg.get("every", 1))
    ctx.write("solution.json", {"solution": sol.as_dict(), "spec": spec.as_dict()})
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "residuals": cmd_residuals,
    "train-gp": cmd_train_gp,
    "optimize": cmd_optimize,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optoferm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"optoferm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config for the command")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized steps")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if args.config is not None:
            config = io.read_json(args.config)
            base = args.config.resolve().parent
        else:
            config, base = {}, Path.cwd()
        args.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](_Ctx(config, base, args.seed, args.out))
    except OptofermError as e:
        print(f"optoferm {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except (KeyError, TypeError) as e:
        print(f"optoferm {args.command}: bad config ({e})", file=sys.stderr)
        return ConfigError.exit_code
