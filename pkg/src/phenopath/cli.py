"""Command-line entry point: ``phenopath {generate-field,run,sweep-noise,sweep-slack}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .errors import InvalidInputError, ParseError, PlanningError
from .field import dataset_csv
from .planner import Strategy

STRATEGIES = [s.value for s in Strategy]


def _strategies(text: str) -> tuple[str, ...]:
    if text == "all":
        return tuple(STRATEGIES)
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    for name in names:
        if name not in STRATEGIES:
            raise argparse.ArgumentTypeError(f"unknown strategy {name!r} (choose from {', '.join(STRATEGIES)})")
    return names


def _number_list(cast):
    def parse(text):
        try:
            return tuple(cast(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
    return parse


def _cap(text: str):
    return None if text.lower() == "none" else int(text)


def _add_experiment_flags(sp, strategy_default="maxent"):
    sp.add_argument("--field", default="synthetic",
                    help="'synthetic' (one field per seed), 'synthetic:SEED', or a dataset CSV path")
    sp.add_argument("--strategy", type=_strategies, default=(strategy_default,),
                    help=f"comma-separated list or 'all'; one of {', '.join(STRATEGIES)}")
    sp.add_argument("--seeds", type=int, default=20, help="run seeds 0..N-1")
    sp.add_argument("--iterations", type=int, default=8)
    sp.add_argument("--p", type=int, default=4, help="static sites per iteration")
    sp.add_argument("--sigma-s", type=float, default=0.5)
    noise = sp.add_mutually_exclusive_group()
    noise.add_argument("--sigma-m", type=float, default=None)
    noise.add_argument("--k", type=float, default=None, help="noise ratio sigma_m / sigma_s")
    sp.add_argument("--xi", type=int, default=0, help="slack over the shortest cover cost, in cells")
    sp.add_argument("--n-test", type=int, default=40)
    sp.add_argument("--distance-cap", type=_cap, default=250, help="cells, or 'none'")
    sp.add_argument("--mobile-avg-variance", choices=("fixed", "scaled"), default="fixed")
    sp.add_argument("--fit-once", action="store_true",
                    help="fit hyperparameters on the first iteration only instead of after every iteration")
    sp.add_argument("--out", default=None, help="CSV output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phenopath", description="Informative sampling for field phenotyping.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-field", help="write a synthetic per-plot dataset CSV")
    gen.add_argument("--field", default="synthetic:0", help="synthetic:SEED")
    gen.add_argument("--out", default=None)

    run = sub.add_parser("run", help="run a batch of missions and write the MAE series")
    _add_experiment_flags(run)

    sn = sub.add_parser("sweep-noise", help="final MAE for several noise ratios")
    _add_experiment_flags(sn)
    sn.add_argument("--ks", type=_number_list(float), default=(1.0, 2.0, 5.0, 10.0))

    ss = sub.add_parser("sweep-slack", help="final MAE for several slack values")
    _add_experiment_flags(ss)
    ss.add_argument("--xis", type=_number_list(int), default=(0, 5, 10, 15))
    return parser


def config_from_args(args) -> harness.ExperimentConfig:
    sigma_m = args.sigma_m
    if sigma_m is None and args.k is None:
        sigma_m = 2.5
    return harness.ExperimentConfig(
        field=args.field, strategies=args.strategy, seeds=tuple(range(args.seeds)), iterations=args.iterations,
        p=args.p, sigma_s=args.sigma_s, sigma_m=sigma_m, k=args.k, xi=args.xi, n_test=args.n_test,
        distance_cap=args.distance_cap, mobile_avg_variance=args.mobile_avg_variance, refit=not args.fit_once,
        out=args.out,
    )


def _generate(args) -> int:
    if not args.field.startswith("synthetic:"):
        raise InvalidInputError("generate-field expects --field synthetic:SEED")
    grid, truth = harness.resolve_field(args.field, 0)
    text = dataset_csv(grid, truth)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
    return 0


def _report_errors(series_list) -> None:
    for series in series_list:
        for (strategy, seed), msg in sorted(series.errors.items()):
            print(f"warning: {strategy} seed {seed}: {msg}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate-field":
            return _generate(args)
        config = config_from_args(args)
        if args.command == "run":
            series = harness.run_batch(config)
            _report_errors([series])
            print(harness.format_aggregate(harness.aggregate(series)))
            result = series
        else:
            if args.command == "sweep-noise":
                result = harness.sweep_noise_ratio(config, args.ks)
            else:
                result = harness.sweep_slack(config, args.xis)
            _report_errors(result.batches.values())
            print(result.format())
        if config.out:
            harness.emit_csv(result, config.out)
        return 0
    except (InvalidInputError, ParseError, PlanningError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
