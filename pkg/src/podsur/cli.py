"""Command line interface: ``podsur <command> --config FILE``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .fem import export_field
from .pipeline import ARTIFACTS, STEPS, StepError, build_mesh, run_pipeline, run_step
from .pod import load_basis
from .snapshots import export_parameters_csv, load_snapshots
from .surrogate import load_model, predict_field


def _common(p):
    p.add_argument("--config", help="TOML config file (defaults are used for missing keys)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override the seed used by this command")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podsur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "pod", "train", "evaluate", "benchmark", "run"):
        _common(sub.add_parser(name))
    p = sub.add_parser("predict", help="surrogate field for one parameter triple as CSV")
    _common(p)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--qin", type=float, required=True)
    p.add_argument("--field", help="CSV path (default: <out>/prediction.csv)")
    p = sub.add_parser("snapshots", help="inspect a snapshot container")
    _common(p)
    p.add_argument("action", choices=["export"])
    p.add_argument("--csv", required=True, help="write the parameter table here")
    return parser


_SEED_FIELD = {
    "generate": "sampling_seed",
    "train": "init_seed",
    "evaluate": "test_seed",
    "benchmark": "bench_seed",
    "run": "sampling_seed",
}


def _config(args):
    overrides = {"output_dir": args.out}
    field = _SEED_FIELD.get(args.command)
    if field and args.seed is not None:
        overrides[field] = args.seed
    return load_config(args.config, **overrides)


def _error_line(kind, message, **extra):
    print("error: " + json.dumps({"type": kind, "message": str(message), **extra}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(cfg.output_dir)
        if args.command == "run":
            for step, status in run_pipeline(cfg).items():
                print(f"{step}: {status}")
        elif args.command in STEPS:
            print(f"{args.command}: {run_step(args.command, cfg)}")
        elif args.command == "predict":
            mesh = build_mesh(cfg)
            basis = load_basis(out / ARTIFACTS["basis"], mesh.n_nodes)
            model = load_model(out / ARTIFACTS["model"])
            mu = (args.kappa, args.beta, args.qin)
            if model.extrapolates(mu):
                print("warning: parameters lie outside the training range", file=sys.stderr)
            path = args.field or out / "prediction.csv"
            export_field(mesh, predict_field(model, basis, mu), path)
            print(path)
        elif args.command == "snapshots":
            export_parameters_csv(load_snapshots(out / ARTIFACTS["snapshots"]), args.csv)
            print(args.csv)
    except StepError as exc:
        _error_line(type(exc.cause).__name__, exc.cause, step=exc.step)
        return 1
    except Exception as exc:
        _error_line(type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
