"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import features as feat
from .dispatch import ConstantSource, Mode, SurfaceOracle, perfect_foresight, simulate
from .errors import ConfigError, DataError, NumericError
from .market_data import (DAYAHEAD, REALTIME, align_series, format_stats_table, load_bundle,
                          load_price_csv, price_stats, save_bundle, synthesize_dayahead)
from .pipeline import run_pipeline
from .predictor import (ModelSource, load_model, save_model, train_multistart, transfer)
from .report import ProfitReport, profit_ratio
from .valuation import (DEFAULT_SEGMENTS, StorageSpec, backward_induction, load_surface,
                        save_surface, save_surface_csv)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("storagebid")


def _spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--power", type=float, default=1.0, help="power rating, MW")
    p.add_argument("--energy", type=float, required=True, help="energy capacity, MWh")
    p.add_argument("--eta", type=float, default=0.9, help="one-way efficiency")
    p.add_argument("--cost", type=float, default=10.0, help="discharge cost, $/MWh")


def _spec(args, resolution: int) -> StorageSpec:
    try:
        return StorageSpec(args.power, args.energy, args.eta, args.cost, resolution)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _range_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--start", default=None, help="first step (index or timestamp)")
    p.add_argument("--stop", default=None, help="end step, exclusive (index or timestamp)")


def _span(series, start, stop) -> tuple[int, int]:
    def idx(v, default):
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            return series.index_of(v)
    return idx(start, 0), idx(stop, len(series))


def cmd_ingest(args) -> int:
    rt = load_price_csv(args.rt, REALTIME, args.zone, args.resolution)
    da = load_price_csv(args.da, DAYAHEAD, args.zone) if args.da else synthesize_dayahead(rt)
    series = align_series(rt, da)
    save_bundle(args.out, series)
    print(format_stats_table({args.zone: price_stats(series)}))
    print(f"rt steps {len(series)}, gaps filled {rt.gaps_filled}, duplicates dropped "
          f"{rt.duplicates_dropped}; bundle written to {args.out}")
    return EXIT_OK


def cmd_value(args) -> int:
    series = load_bundle(args.bundle)
    spec = _spec(args, series.resolution_minutes)
    a, b = _span(series, args.start, args.stop)
    surface = backward_induction(series.rt_prices[a:b], spec, args.terminal,
                                 segments=args.segments, keep_segments=args.keep)
    save_surface(args.out, surface)
    if args.csv:
        save_surface_csv(args.csv, surface)
    print(f"{b - a} steps x {args.segments} segments in "
          f"{surface.meta['runtime_seconds']:.2f}s -> {args.out}")
    return EXIT_OK


def cmd_features(args) -> int:
    series = load_bundle(args.bundle)
    surface = load_surface(args.surface)
    a, b = _span(series, args.start, args.stop)
    shift = series.steps_per_hour if args.hour_ahead else 0
    ts = feat.build_training_set(series, surface, (a, min(b, args.surface_offset + surface.horizon - shift)),
                                 m=args.m, n=args.n, segments=args.segments, hour_shift=shift,
                                 stride=args.stride, surface_offset=args.surface_offset)
    feat.save_training_set(args.out, ts)
    print(f"{len(ts)} windows of shape {ts.x.shape[1:]} -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ts = feat.load_training_set(args.set)
    tr, va = ts.split(args.val_fraction)
    hidden = tuple(int(h) for h in args.hidden.split(","))
    model, reports = train_multistart(range(args.seeds), ts.segments, tr, va, hidden=hidden,
                                      epochs=args.epochs, lr=args.lr,
                                      batch_size=args.batch_size, optimizer=args.optimizer)
    save_model(args.out, model)
    for r in reports:
        print(f"seed {r.seed}: best validation mse {r.best_validation_mse:.4f} "
              f"at epoch {r.best_epoch}")
    print(f"model -> {args.out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    model = load_model(args.model)
    ts = feat.load_training_set(args.set)
    out, rep = transfer(model, ts, args.epochs, args.lr, val_fraction=args.val_fraction,
                        optimizer=args.optimizer)
    save_model(args.out, out)
    print(f"transfer: best validation mse {rep.best_validation_mse:.4f} at epoch "
          f"{rep.best_epoch} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    series = load_bundle(args.bundle)
    spec = _spec(args, series.resolution_minutes)
    mode = Mode.parse(args.mode)
    a, b = _span(series, args.start, args.stop)
    shift = spec.steps_per_hour if mode.bidding else 0
    pf = perfect_foresight(series, spec, start=a, stop=b, segments=args.segments,
                           initial_soc_fraction=args.initial_soc)
    if args.model:
        source = ModelSource(load_model(args.model))
    elif args.oracle:
        surface = pf.meta.get("surface") or backward_induction(
            series.rt_prices[a:b], spec, segments=args.segments, keep_segments=mode.segments)
        source = SurfaceOracle(surface, mode.segments, shift, offset=a)
    else:
        source = ConstantSource(0.0, mode.segments, shift)
    result = simulate(series, spec, mode, source, start=a, stop=b,
                      initial_soc_fraction=args.initial_soc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / f"{mode.name}.csv")
    result.write_monthly_csv(out / f"{mode.name}_monthly.csv")
    pf.write_monthly_csv(out / "PF_monthly.csv")
    ratio = profit_ratio(result.total_profit, pf.total_profit)
    shown = "undefined" if ratio is None else f"{ratio:.2f}%"
    print(f"{mode.name}: profit ${result.total_profit:.2f}, perfect foresight "
          f"${pf.total_profit:.2f}, ratio {shown}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = ProfitReport.from_json(Path(args.report).read_text())
    print(report.table())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    report = run_pipeline(args.config)
    print(report.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storagebid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate price CSVs into a bundle")
    p.add_argument("--rt", required=True)
    p.add_argument("--da", default=None, help="hourly DA file; synthesized from RT if omitted")
    p.add_argument("--zone", required=True)
    p.add_argument("--resolution", type=int, default=5, help="RT resolution, minutes")
    p.add_argument("--out", default="bundle.npz")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("value", help="backward induction over a bundle")
    p.add_argument("--bundle", required=True)
    _spec_args(p)
    _range_args(p)
    p.add_argument("--segments", type=int, default=DEFAULT_SEGMENTS)
    p.add_argument("--keep", type=int, default=None, help="store segment averages only")
    p.add_argument("--terminal", type=float, default=None, help="constant terminal value")
    p.add_argument("--out", default="surface.npz")
    p.add_argument("--csv", default=None, help="also write t,segment_index,q_value rows")
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("features", help="build a training-set file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--surface", required=True)
    _range_args(p)
    p.add_argument("--surface-offset", type=int, default=0,
                   help="series step of the surface's first price")
    p.add_argument("--segments", type=int, default=10)
    p.add_argument("--hour-ahead", action="store_true", help="targets one hour later")
    p.add_argument("--m", type=int, default=24)
    p.add_argument("--n", type=int, default=36)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", default="set.bin")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the value-curve regressor")
    p.add_argument("--set", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--hidden", default="256,128")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--optimizer", choices=("adam", "momentum"), default="adam")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--out", default="model.bin")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="retrain the output layer on a new zone")
    p.add_argument("--model", required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "momentum"), default="adam")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--out", default="model_transfer.bin")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("simulate", help="run one mode and compare with perfect foresight")
    p.add_argument("--mode", required=True, help="pr1, pr10, ha1 or ha10")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", default=None)
    src.add_argument("--oracle", action="store_true", help="use exact curves")
    p.add_argument("--bundle", required=True)
    _spec_args(p)
    _range_args(p)
    p.add_argument("--segments", type=int, default=DEFAULT_SEGMENTS)
    p.add_argument("--initial-soc", type=float, default=0.5)
    p.add_argument("--out-dir", default="simulation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print the ratio table of a report.json")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run a full experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining ValueErrors come from invalid parameters
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
