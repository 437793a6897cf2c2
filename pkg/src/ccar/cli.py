"""``ccar`` command line.

Exit status: 0 success, 1 property failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import data, experiment, properties
from .experiment import ConfigError, ExperimentConfig

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--omega", type=float, help="confidence pivot in (0, 1]")
    p.add_argument("--if", dest="imbalance", type=float, help="imbalance factor N_max / N_min")
    p.add_argument("--base", choices=["ce", "focal", "cb", "la", "bs"])
    p.add_argument("--ccar", choices=["on", "off"])
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("train", help="run one experiment config over its seeds"))
    p = sub.add_parser("sweep-omega", help="pivot ablation with paired seeds")
    _common(p)
    p.add_argument("--omegas", type=float, nargs="+", default=list(experiment.DEFAULT_OMEGAS))
    p = sub.add_parser("surface", help="weight surface over (p_t, f_c)")
    _common(p)
    p.add_argument("--p-points", type=int, default=101)
    p.add_argument("--f-points", type=int, default=99)
    p = sub.add_parser("gradcurves", help="gradient modulation curves")
    _common(p)
    p.add_argument("--f-list", type=float, nargs="+", default=list(experiment.DEFAULT_F_LIST))
    p.add_argument("--points", type=int, default=200)
    sub.add_parser("check", help="run the invariant suite").add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("gen-data", help="export train/test CSVs for one seed")
    _common(p)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = experiment.load_config(args.config) if args.config else ExperimentConfig()
    try:
        if args.imbalance is not None:
            cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, imbalance_factor=args.imbalance))
        loss = {}
        if args.base is not None:
            loss["base"] = args.base
        if args.ccar is not None:
            loss["ccar"] = args.ccar == "on"
        if args.omega is not None:
            loss["omega"] = args.omega
        if loss:
            cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, **loss))
        top = {}
        if args.seed is not None:
            top["seed"] = args.seed
        if args.repeats is not None:
            top["repeats"] = args.repeats
        if args.out is not None:
            top["output_dir"] = args.out
        if top:
            cfg = dataclasses.replace(cfg, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "check":
        results = properties.check_properties()
        print(properties.format_report(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY

    try:
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = _out_dir(cfg)
        if args.command == "train":
            reports = experiment.run_experiment(cfg, jobs=args.jobs, out_dir=out)
            mean, std = experiment.aggregate(reports)
            print(f"overall {mean['overall']} +- {std['overall']}  few {mean['few']}  -> {out / 'metrics.csv'}")
        elif args.command == "sweep-omega":
            res = experiment.sweep_omega(cfg, args.omegas, jobs=args.jobs, out_dir=out)
            for row in res.rows:
                print(f"omega={row.omega:g} overall={row.overall_mean} few={row.few_mean}")
        elif args.command == "surface":
            experiment.emit_surface_grid(cfg.loss.omega, args.p_points, args.f_points, path=out / "surface.csv")
            experiment.write_resolved_config(cfg, out)
        elif args.command == "gradcurves":
            experiment.emit_gradient_curves(cfg.loss.omega, args.f_list, args.points, path=out / "gradcurves.csv")
            experiment.write_resolved_config(cfg, out)
        elif args.command == "gen-data":
            spec = dataclasses.replace(cfg.dataset, seed=cfg.seed)
            train_set, test_set, _ = data.generate(spec)
            data.write_csv(train_set, out / "train.csv")
            data.write_csv(test_set, out / "test.csv")
            experiment.write_resolved_config(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
