"""Command-line interface: generate, couple, train, evaluate, predict, experiment.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.  Every
flag can also be supplied through a JSON config file (``--config``); explicit
flags win over the file, the file wins over built-in defaults, and the fully
resolved configuration is echoed as ``<command>_config.json`` into the
command's output directory so runs can be reproduced from their artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments, ot, trainer
from .datagen import GenConfig, generate
from .features import polynomial_map
from .functionals import KINDS, EnergySpec, GroundTruthFunction
from .measures import (
    load_trajectory,
    save_coupling,
    save_trajectory,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

logger = logging.getLogger("jkoflow")

_VERBOSITY = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems instead of exiting."""

    def error(self, message):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _default_jobs() -> int:
    env = os.environ.get("JKO_FLOW_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise _UsageError(f"JKO_FLOW_JOBS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


# defaults live here, not in argparse, so config files can override them
_DEFAULTS: dict[str, dict] = {
    "generate": {
        "potential": None,
        "interaction": None,
        "beta": 0.0,
        "dim": 2,
        "particles": 2000,
        "steps": 5,
        "tau": 0.01,
        "init_low": -4.0,
        "init_high": 4.0,
        "scheme": "explicit",
        "seed": None,
        "out": None,
    },
    "couple": {
        "data": None,
        "ot_method": "exact",
        "epsilon": 1.0,
        "max_iters": 2000,
        "tolerance": 1e-6,
        "batch_size": 1000,
        "seed": 0,
        "jobs": None,
    },
    "train": {
        "data": None,
        "variant": "star_potential",
        "epochs": 1000,
        "batch_pairs": 250,
        "learning_rate": 1e-3,
        "gmm_k": 10,
        "ridge_lambda": 0.01,
        "hidden": "64,64",
        "interaction_subsample": 0,
        "pin_internal": False,
        "poly_degree": None,
        "seed": None,
        "ot_method": "exact",
        "epsilon": 1.0,
        "batch_size": 1000,
        "jobs": None,
        "out": None,
    },
    "evaluate": {
        "data": None,
        "model": None,
        "report": None,
        "scheme": "explicit",
        "beta_noise": False,
        "seed": None,
    },
    "predict": {
        "data": None,
        "model": None,
        "steps": None,
        "from_index": 0,
        "scheme": "explicit",
        "beta_noise": False,
        "seed": None,
        "out": None,
    },
    "experiment": {
        "name": None,
        "seed": None,
        "full": False,
        "epochs": None,
        "potential": None,
        "interaction": None,
        "jobs": None,
        "out": None,
    },
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="jko-flow", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="JSON file mirroring this command's flags")
        p.add_argument(
            "--verbosity",
            choices=sorted(_VERBOSITY),
            default="info",
            help="log level for stderr output",
        )

    p = sub.add_parser("generate", help="sample a synthetic snapshot dataset")
    common(p)
    p.add_argument("--potential", choices=KINDS, help="ground-truth potential energy")
    p.add_argument("--interaction", choices=KINDS, help="ground-truth interaction energy")
    p.add_argument("--beta", type=float, help="diffusion strength (default 0)")
    p.add_argument("--dim", type=int, help="state dimension")
    p.add_argument("--particles", type=int, help="total particle count (half train, half test)")
    p.add_argument("--steps", type=int, help="number of transitions T")
    p.add_argument("--tau", type=float, help="step size")
    p.add_argument("--init-low", type=float, dest="init_low")
    p.add_argument("--init-high", type=float, dest="init_high")
    p.add_argument("--scheme", choices=["explicit", "implicit"])
    p.add_argument("--seed", type=int, help="required: generation is randomized")
    p.add_argument("--out", help="output directory (train/ and test/ subdirs)")

    p = sub.add_parser("couple", help="precompute optimal couplings for a dataset")
    common(p)
    p.add_argument("--data", help="trajectory directory (train/ subdir preferred)")
    p.add_argument("--ot-method", choices=["exact", "sinkhorn"], dest="ot_method")
    p.add_argument("--epsilon", type=float, help="entropic regularization strength")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int, help="seed for batched coupling shuffles")
    p.add_argument("--jobs", type=int, help="parallel workers (env JKO_FLOW_JOBS)")

    p = sub.add_parser("train", help="fit an energy model to a dataset")
    common(p)
    p.add_argument("--data", help="trajectory directory (train/ subdir preferred)")
    p.add_argument("--variant", choices=trainer.VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-pairs", type=int, dest="batch_pairs")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--gmm-k", type=int, dest="gmm_k")
    p.add_argument("--ridge-lambda", type=float, dest="ridge_lambda")
    p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 64,64")
    p.add_argument("--interaction-subsample", type=int, dest="interaction_subsample")
    p.add_argument(
        "--pin-internal",
        action=argparse.BooleanOptionalAction,
        dest="pin_internal",
        help="drop the diffusion term even for star/star_linear",
    )
    p.add_argument(
        "--poly-degree",
        type=int,
        dest="poly_degree",
        help="linear variants: replace the default basis with pure per-coordinate polynomials",
    )
    p.add_argument("--seed", type=int, help="required: shuffling and init are randomized")
    p.add_argument("--ot-method", choices=["exact", "sinkhorn"], dest="ot_method")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="model checkpoint path (JSON)")

    p = sub.add_parser("evaluate", help="one-step-ahead transport error on a test set")
    common(p)
    p.add_argument("--data", help="trajectory directory (test/ subdir preferred)")
    p.add_argument("--model", help="model checkpoint path")
    p.add_argument("--report", help="output report path (JSON)")
    p.add_argument("--scheme", choices=["explicit", "implicit"])
    p.add_argument("--beta-noise", action=argparse.BooleanOptionalAction, dest="beta_noise")
    p.add_argument("--seed", type=int, help="required with --beta-noise")

    p = sub.add_parser("predict", help="roll a fitted model forward and save the result")
    common(p)
    p.add_argument("--data", help="trajectory directory providing the starting snapshot")
    p.add_argument("--model", help="model checkpoint path")
    p.add_argument("--steps", type=int, help="rollout length (default: rest of the trajectory)")
    p.add_argument("--from-index", type=int, dest="from_index", help="starting snapshot index")
    p.add_argument("--scheme", choices=["explicit", "implicit"])
    p.add_argument("--beta-noise", action=argparse.BooleanOptionalAction, dest="beta_noise")
    p.add_argument("--seed", type=int, help="required with --beta-noise")
    p.add_argument("--out", help="output trajectory directory")

    p = sub.add_parser("experiment", help="run one of the scripted studies")
    common(p)
    p.add_argument(
        "name",
        nargs="?",
        choices=sorted(experiments.RUNNERS),
        help="which study to run",
    )
    p.add_argument("--seed", type=int, help="required: experiments are randomized")
    p.add_argument("--full", action=argparse.BooleanOptionalAction, help="large-scale grids")
    p.add_argument("--epochs", type=int, help="override the study's default epoch budget")
    p.add_argument("--potential", choices=KINDS, help="scaling/general: potential override")
    p.add_argument("--interaction", choices=KINDS, help="general: interaction override")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory for tables and reports")

    return parser


def _resolve(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(_DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise _UsageError(f"config file not found: {path}")
        with open(path) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise _UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(resolved)
        if unknown:
            raise _UsageError(f"config keys not recognized for {command}: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in resolved:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise _UsageError(f"missing required argument(s): {flags}")


def _echo_config(cfg: dict, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in sorted(cfg.items())}
    with open(out_dir / f"{command}_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _trajectory_dir(data: str, prefer: str) -> Path:
    """Pick data/<prefer> when the dataset has train/test subdirectories."""
    base = Path(data)
    sub = base / prefer
    if (sub / "metadata.json").is_file():
        return sub
    if (base / "metadata.json").is_file():
        return base
    raise ValueError(f"no trajectory found under {base} (looked for {prefer}/ and .)")


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_generate(cfg: dict) -> int:
    _require(cfg, "seed", "out")
    if cfg["potential"] is None and cfg["interaction"] is None and cfg["beta"] == 0.0:
        raise _UsageError("need at least one of --potential/--interaction/--beta")
    dim = int(cfg["dim"])
    spec = EnergySpec(
        potential=GroundTruthFunction(cfg["potential"], dim) if cfg["potential"] else None,
        interaction=GroundTruthFunction(cfg["interaction"], dim) if cfg["interaction"] else None,
        beta=float(cfg["beta"]),
    )
    gen_cfg = GenConfig(
        spec=spec,
        n_particles=int(cfg["particles"]),
        dim=dim,
        timesteps=int(cfg["steps"]),
        tau=float(cfg["tau"]),
        init_low=float(cfg["init_low"]),
        init_high=float(cfg["init_high"]),
        seed=int(cfg["seed"]),
        scheme=cfg["scheme"],
    )
    train, test = generate(gen_cfg)
    out = Path(cfg["out"])
    label = "+".join(
        filter(None, [cfg["potential"], cfg["interaction"], f"beta={cfg['beta']}"])
    )
    save_trajectory(train, out / "train", generator=label, seed=gen_cfg.seed)
    save_trajectory(test, out / "test", generator=label, seed=gen_cfg.seed)
    _echo_config(cfg, "generate", out)
    logger.info(
        "wrote %d train + %d test particles x %d snapshots to %s",
        train.snapshots[0].n_particles,
        test.snapshots[0].n_particles,
        train.n_snapshots,
        out,
    )
    return EXIT_OK


def _ot_config(cfg: dict) -> ot.OtConfig:
    return ot.OtConfig(
        method=cfg.get("ot_method", "exact"),
        epsilon=float(cfg.get("epsilon", 1.0)),
        max_iters=int(cfg.get("max_iters", 2000)),
        tolerance=float(cfg.get("tolerance", 1e-6)),
        batch_size=int(cfg.get("batch_size", 1000)),
        seed=int(cfg.get("seed") or 0),
        jobs=int(cfg.get("jobs") or _default_jobs()),
    )


def _cmd_couple(cfg: dict) -> int:
    _require(cfg, "data")
    traj_dir = _trajectory_dir(cfg["data"], "train")
    traj = load_trajectory(traj_dir)
    couplings = ot.couple_trajectory(traj, _ot_config(cfg))
    for coupling in couplings:
        save_coupling(coupling, traj_dir)
    _echo_config(cfg, "couple", traj_dir)
    logger.info("wrote %d coupling files to %s", len(couplings), traj_dir)
    return EXIT_OK


def _train_config(cfg: dict, dim: int) -> trainer.TrainConfig:
    hidden = tuple(int(w) for w in str(cfg["hidden"]).split(",") if w.strip())
    features = None
    if cfg.get("poly_degree"):
        features = polynomial_map(dim, int(cfg["poly_degree"]))
    return trainer.TrainConfig(
        variant=cfg["variant"],
        epochs=int(cfg["epochs"]),
        batch_pairs=int(cfg["batch_pairs"]),
        learning_rate=float(cfg["learning_rate"]),
        gmm_k=int(cfg["gmm_k"]),
        ridge_lambda=float(cfg["ridge_lambda"]),
        hidden=hidden,
        interaction_subsample=int(cfg["interaction_subsample"]),
        pin_internal=bool(cfg["pin_internal"]),
        seed=int(cfg["seed"]),
        ot=_ot_config(cfg),
        potential_features=features,
        interaction_features=features,
    )


def _cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "seed", "out")
    traj_dir = _trajectory_dir(cfg["data"], "train")
    train = load_trajectory(traj_dir)
    result = trainer.fit(train, _train_config(cfg, train.dim))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = result.model.to_json()
    payload["loss_history"] = [float(v) for v in result.loss_history]
    payload["couple_seconds"] = result.couple_seconds
    payload["train_seconds"] = result.train_seconds
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _echo_config(cfg, "train", out.parent)
    logger.info(
        "fitted %s in %.2fs (coupling %.2fs), final loss %.4g, model at %s",
        cfg["variant"], result.train_seconds, result.couple_seconds,
        result.loss_history[-1], out,
    )
    return EXIT_OK


def _cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "data", "model", "report")
    if cfg["beta_noise"] and cfg.get("seed") is None:
        raise _UsageError("--beta-noise requires --seed")
    traj_dir = _trajectory_dir(cfg["data"], "test")
    test = load_trajectory(traj_dir)
    with open(cfg["model"]) as fh:
        model_payload = json.load(fh)
    model = trainer.load_model(cfg["model"])
    report = trainer.evaluate(
        model,
        test,
        scheme=cfg["scheme"],
        beta_noise=bool(cfg["beta_noise"]),
        seed=int(cfg.get("seed") or 0),
    )
    report["model"] = str(cfg["model"])
    report["data"] = str(traj_dir)
    for key in ("loss_history", "couple_seconds", "train_seconds"):
        if key in model_payload:
            report[key] = model_payload[key]
    report_path = Path(cfg["report"])
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _echo_config(cfg, "evaluate", report_path.parent)
    logger.info("mean EMD %.6g +- %.3g (%s)", report["mean_emd"], report["std_emd"], cfg["scheme"])
    return EXIT_OK


def _cmd_predict(cfg: dict) -> int:
    _require(cfg, "data", "model", "out")
    if cfg["beta_noise"] and cfg.get("seed") is None:
        raise _UsageError("--beta-noise requires --seed")
    traj_dir = _trajectory_dir(cfg["data"], "test")
    traj = load_trajectory(traj_dir)
    start_index = int(cfg["from_index"])
    if not 0 <= start_index < traj.n_snapshots:
        raise ValueError(f"from_index {start_index} out of range for {traj.n_snapshots} snapshots")
    steps = cfg["steps"]
    steps = int(steps) if steps is not None else max(1, traj.n_steps - start_index)
    model = trainer.load_model(cfg["model"])
    if cfg["scheme"] == "implicit":
        rollout = trainer.predict_implicit(
            model, traj.snapshots[start_index], steps, traj.tau,
            time_offset=start_index, time_scale=traj.n_steps,
        )
    else:
        rollout = trainer.predict_explicit(
            model, traj.snapshots[start_index], steps, traj.tau,
            beta_noise=bool(cfg["beta_noise"]), seed=int(cfg.get("seed") or 0),
            time_offset=start_index, time_scale=traj.n_steps,
        )
    out = Path(cfg["out"])
    save_trajectory(rollout, out, generator=f"predict:{cfg['scheme']}", seed=cfg.get("seed"))
    _echo_config(cfg, "predict", out)
    logger.info("wrote %d predicted snapshots to %s", rollout.n_snapshots, out)
    return EXIT_OK


def _cmd_experiment(cfg: dict) -> int:
    _require(cfg, "name", "seed", "out")
    runner = experiments.RUNNERS[cfg["name"]]
    kwargs = {
        "seed": int(cfg["seed"]),
        "out_dir": cfg["out"],
        "full": bool(cfg["full"]),
        "jobs": int(cfg.get("jobs") or _default_jobs()),
    }
    if cfg.get("epochs") is not None and cfg["name"] != "observability":
        kwargs["epochs"] = int(cfg["epochs"])
    if cfg.get("potential") and cfg["name"] in ("scaling", "general"):
        kwargs["potential"] = cfg["potential"]
    if cfg.get("interaction") and cfg["name"] == "general":
        kwargs["interaction"] = cfg["interaction"]
    runner(**kwargs)
    _echo_config(cfg, "experiment", Path(cfg["out"]))
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "couple": _cmd_couple,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("jko-flow: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(
            stream=sys.stderr,
            level=_VERBOSITY[args.verbosity],
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = _resolve(args.command, args)
        return _COMMANDS[args.command](cfg)
    except _UsageError as exc:
        print(f"jko-flow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
