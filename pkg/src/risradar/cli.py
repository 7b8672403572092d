"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import argparse

from .harness import DEFAULT_DELTAS, EXPERIMENT_KINDS, ExperimentConfig, run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="risradar",
        description="RIS-assisted high-resolution radar sensing experiments",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", default=None, help="scenario JSON config file")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--trials", type=int, default=200, help="Monte Carlo trials")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument(
            "--delta-list",
            default=",".join(str(d) for d in DEFAULT_DELTAS),
            help="comma-separated target spacings in rad",
        )
        p.add_argument("--no-noise", action="store_true", help="noiseless synthesis")
        p.add_argument("--draws", type=int, default=500, help="gain draws (fisher-cdf)")
        p.add_argument(
            "--schedule-mode", default="auto", choices=("auto", "focused", "uniform")
        )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    deltas = tuple(float(v) for v in args.delta_list.split(",") if v)
    config = ExperimentConfig(
        kind=args.kind,
        scenario_path=args.config,
        deltas=deltas,
        trials=args.trials,
        seed=args.seed,
        out_dir=args.out,
        no_noise=args.no_noise,
        n_draws=args.draws,
        schedule_mode=args.schedule_mode,
    )
    paths = run(config)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
