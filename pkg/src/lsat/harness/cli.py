"""Command line entry point: ``lsat tune | mnist | gradcheck``."""

import argparse
import json
import logging
import sys

import numpy as np

from ..errors import ConfigError, DataError
from .experiment import MODELS, ExperimentConfig, run_experiment, load_datasets, write_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lsat")


def _summary(report):
    f = report["final"]
    return (f"{report['config']['model']:<22} hyper={f['hyperparam_count']:<6} "
            f"val_loss={f['validation_loss']:.4f} test_error={100 * f['test_error']:.2f}% "
            f"iters={len(report['trace'])} ({report['termination']}) {f['wall_seconds']:.1f}s")


def cmd_tune(args):
    cfg = ExperimentConfig.from_file(args.config).to_dict()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.output is not None:
        cfg["output_path"] = args.output
    if args.early_stopping:
        cfg["early_stopping"] = True
    report = run_experiment(ExperimentConfig.from_dict(cfg))
    print(_summary(report))
    return EXIT_OK


def cmd_mnist(args):
    models = MODELS if args.model == "all" else (args.model,)
    base = dict(data_path=args.data, dataset_scale=args.scale, seed=args.seed,
                early_stopping=args.early_stopping)
    if args.max_iter is not None:
        base["max_iter"] = args.max_iter
    configs = [ExperimentConfig(model=m, **base) for m in models]
    datasets = load_datasets(configs[0])
    reports = []
    for cfg in configs:
        report = run_experiment(cfg, datasets=datasets)
        print(_summary(report), flush=True)
        reports.append(report)
    if args.output:
        write_report(reports[0] if len(reports) == 1 else {"runs": reports}, args.output)
    return EXIT_OK


def cmd_gradcheck(args):
    from ..gradcheck import run_all

    seed = 0 if args.seed is None else args.seed
    results = run_all(seed)
    for name, err in results.items():
        print(f"{name:<22} max relative error {err:.3e}")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump({"seed": seed, "max_relative_error": results}, fh, indent=2)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lsat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tune", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("mnist", help="run the MNIST model ladder")
    p.add_argument("--data", default="data/mnist", help="directory with the IDX files")
    p.add_argument("--scale", choices=("small", "full"), default="small")
    p.add_argument("--model", choices=("all",) + MODELS, default="all")
    p.add_argument("--max-iter", type=int, default=None)
    p.set_defaults(func=cmd_mnist)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.set_defaults(func=cmd_gradcheck)

    for name, p in sub.choices.items():
        p.add_argument("--seed", type=int, default=None if name != "mnist" else 0)
        p.add_argument("--output", default=None)
        if name != "gradcheck":
            p.add_argument("--early-stopping", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
