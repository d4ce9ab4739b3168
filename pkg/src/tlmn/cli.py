"""Command-line entry point: ``tlmn <subcommand> ...``.

Failures print a single ``error: <Kind>: <message>`` line on stderr and exit
with status 1; argument errors print usage and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from datetime import date

import numpy as np

from .audit import run_audit
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, TLMNError
from .evaluation import write_report
from .features import (
    FEATURE_NAMES,
    SplitSpec,
    apply_normalization,
    build_features,
    build_features_segmented,
    latest_window,
)
from .ingest import (
    SyntheticConfig,
    default_cache_dir,
    fetch_power_years,
    merge_series,
    parse_power_csv,
    synth_generate,
    write_meteo_csv,
)
from .network import forward, init_state, parameter_count
from .pipeline import run_evaluation, run_training
from .solar_geometry import ClearSkyParams, GeoLocation, hourly_clear_sky, hourly_solar_position
from .timeutil import HOUR, isoformat
from .training import TrainConfig, write_epoch_log

log = logging.getLogger("tlmn")


# -- config resolution -------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, training: bool = False) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--data", help="meteorological CSV (POWER or native layout)")
    p.add_argument("--train-years", nargs=2, type=int, metavar=("FIRST", "LAST"))
    p.add_argument("--test-years", nargs=2, type=int, metavar=("FIRST", "LAST"))
    p.add_argument("--seed", type=int)
    if training:
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--epoch-log", help="CSV epoch log path (default: <checkpoint>.log.csv)")


def _location_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--lat", type=float, required=required, help="latitude, degrees north")
    p.add_argument("--lon", type=float, required=required, help="longitude, degrees east")
    p.add_argument("--alt", type=float, help="altitude, metres")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    paths = dict(cfg.paths)
    for key, flag in (("data", "data"), ("checkpoint", "checkpoint"), ("report_dir", "report_dir"),
                      ("epoch_log", "epoch_log"), ("cache_dir", "cache_dir")):  # fmt: skip
        val = getattr(args, flag, None)
        if val is not None:
            paths[key] = val
    split = cfg.split
    if getattr(args, "train_years", None) or getattr(args, "test_years", None):
        split = SplitSpec(
            tuple(args.train_years) if args.train_years else split.train_range,
            tuple(args.test_years) if args.test_years else split.test_range,
        )
    loc = cfg.location
    if getattr(args, "lat", None) is not None or getattr(args, "lon", None) is not None or getattr(args, "alt", None) is not None:
        loc = GeoLocation(
            args.lat if args.lat is not None else loc.latitude,
            args.lon if args.lon is not None else loc.longitude,
            args.alt if args.alt is not None else loc.altitude,
        )
    train = cfg.train.to_dict()
    for key in ("max_epochs", "batch_size", "learning_rate"):
        val = getattr(args, key, None)
        if val is not None:
            train[key] = val
    seed = args.seed if getattr(args, "seed", None) is not None else cfg.seed
    train["seed"] = seed
    return replace(cfg, location=loc, split=split, train=TrainConfig.from_dict(train), paths=paths, seed=seed)


def _require(cfg: RunConfig, key: str, flag: str) -> str:
    val = cfg.paths.get(key)
    if not val:
        raise ConfigError(f"no {key} path: pass {flag} or set paths.{key} in the config")
    return str(val)


def _load_series(path: str):
    series, gaps = parse_power_csv(path)
    if gaps:
        log.warning("%s: %d missing hours in %d gaps", path, gaps.missing_hours, len(gaps.runs))
    return series


# -- subcommands -------------------------------------------------------------


def cmd_fetch(args) -> int:
    loc = GeoLocation(args.lat, args.lon, args.alt or 0.0)
    cache = args.cache_dir or default_cache_dir()
    paths = fetch_power_years(loc, args.start_year, args.end_year, cache)
    for p in paths:
        print(p)
    if args.out:
        parts = []
        for p in paths:
            series, gaps = parse_power_csv(p)
            for run in gaps.runs:
                print(f"gap: {run}")
            parts.append(series)
        merged = merge_series(parts)
        write_meteo_csv(merged, args.out)
        print(f"wrote {len(merged)} hourly records to {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        start_year=args.start_year,
        n_years=args.years,
        seed=args.seed,
        step_transients_per_year=args.steps,
        linke_turbidity=args.linke_turbidity,
    )
    data = synth_generate(cfg)
    write_meteo_csv(data.series, args.out)
    print(f"wrote {len(data.series)} hourly records to {args.out}")
    if args.config_out:
        last = args.start_year + args.years - 1
        if args.years < 2:
            raise ConfigError("a run config needs at least 2 synthetic years (train and test)")
        run = RunConfig(
            location=cfg.location,
            clearsky=ClearSkyParams(cfg.linke_turbidity),
            split=SplitSpec((args.start_year, last - 1), (last, last)),
            paths={"data": str(args.out)},
            seed=args.seed,
        )
        run.dump(args.config_out)
        print(f"wrote run config to {args.config_out}")
    return 0


def cmd_features(args) -> int:
    cfg = resolve_config(args)
    series = _load_series(_require(cfg, "data", "--data"))
    feats = build_features_segmented(series, cfg.location, cfg.clearsky, cfg.utc_offset_hours)
    if args.checkpoint:
        stats = load_checkpoint(args.checkpoint).norm_stats
        if stats is None:
            raise ConfigError("checkpoint carries no normalization statistics")
        feats = apply_normalization(feats, stats)
    print(f"{len(feats)} rows x {len(FEATURE_NAMES)} features ({'normalized' if feats.normalized else 'raw'})")
    print(f"{'feature':<14} {'mean':>12} {'std':>12} {'min':>12} {'max':>12}")
    for j, name in enumerate(FEATURE_NAMES):
        col = feats.values[:, j]
        print(f"{name:<14} {col.mean():>12.4f} {col.std():>12.4f} {col.min():>12.4f} {col.max():>12.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("timestamp",) + FEATURE_NAMES + ("ghi_clear",))
            for i in range(len(feats)):
                w.writerow([isoformat(feats.timestamps[i])] + [repr(float(v)) for v in feats.values[i]]
                           + [repr(float(feats.ghi_clear[i]))])  # fmt: skip
        print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data_path = _require(cfg, "data", "--data")
    ckpt = _require(cfg, "checkpoint", "--checkpoint")
    series = _load_series(data_path)
    result, data = run_training(series, cfg)
    save_checkpoint(result.state, ckpt)
    epoch_log = cfg.paths.get("epoch_log") or ckpt + ".log.csv"
    write_epoch_log(result.log, epoch_log)
    best = result.log[result.best_epoch - 1]
    print(f"trained {len(result.log)} epochs on {len(data.train)} windows; best epoch {result.best_epoch} "
          f"(validation loss {best.val_loss:.4f})")  # fmt: skip
    print(f"checkpoint: {ckpt}")
    print(f"epoch log: {epoch_log}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    state = load_checkpoint(_require(cfg, "checkpoint", "--checkpoint"))
    series = _load_series(_require(cfg, "data", "--data"))
    out_dir = cfg.paths.get("report_dir") or "report"
    report, fc = run_evaluation(state, series, cfg)
    paths = write_report(report, out_dir, fc)
    m = report.metrics
    for label in ("all_hours", "daylight"):
        b = m[label]
        r = "n/a" if b["pearson_r"] is None else f"{b['pearson_r']:.4f}"
        print(f"{label:<10} n={b['n']:<6} rmse={b['rmse']:.3f} mae={b['mae']:.3f} pearson={r}")
    for name, blk in report.baselines.items():
        print(f"{name:<18} daylight rmse={blk['daylight']['rmse']:.3f}")
    print(f"night noise: {report.night_noise['violating_hours']} violating hours")
    lag = report.phase_lag
    print(f"phase lag: median {lag['median_lag_hours']} h over {lag['n_events']} ramp events")
    print(f"report: {paths['report']}")
    return 0


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    state = load_checkpoint(args.checkpoint)
    if state.norm_stats is None:
        raise ConfigError("checkpoint carries no normalization statistics")
    series = _load_series(args.window)
    seg = series.segments()[-1]
    feats = apply_normalization(build_features(seg, cfg.location, cfg.clearsky, cfg.utc_offset_hours), state.norm_stats)
    target = feats.timestamps[-1] + HOUR
    clear = float(np.asarray(hourly_clear_sky(cfg.location, np.array([target]), cfg.clearsky)).reshape(-1)[0])
    window = latest_window(feats, clear, state.config.window_len)
    pred, alpha, _ = forward(state, window)
    out = {
        "target_time": isoformat(target),
        "ghi_pred": pred,
        "alpha": alpha,
        "ghi_clear": clear,
        "upper_bound": state.config.alpha_max * clear,
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_clearsky(args) -> int:
    loc = GeoLocation(args.lat, args.lon, args.alt or 0.0)
    params = ClearSkyParams(args.linke_turbidity)
    day = np.datetime64(date.fromisoformat(args.date).isoformat(), "s")
    offset = np.timedelta64(int(round(args.utc_offset * 3600)), "s")
    starts = day - offset + np.arange(24) * HOUR
    ghi = np.asarray(hourly_clear_sky(loc, starts, params)).reshape(-1)
    zen = np.asarray(hourly_solar_position(loc, starts).zenith).reshape(-1)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("local_hour", "utc_start", "zenith_deg", "ghi_clear"))
    for h in range(24):
        w.writerow((h, isoformat(starts[h]), f"{zen[h]:.4f}", repr(float(ghi[h]))))
    return 0


def cmd_audit(args) -> int:
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
    else:
        state = init_state(seed=args.seed)
    print(parameter_count(state.config).format_table())
    results = run_audit(state, seed=args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlmn", description="Physics-bounded hourly solar irradiance forecaster.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("fetch", help="download hourly NASA POWER data into the cache")
    _location_flags(p, required=True)
    p.add_argument("--start-year", type=int, required=True)
    p.add_argument("--end-year", type=int, required=True)
    p.add_argument("--cache-dir", help="cache directory (default: $TLMN_CACHE_DIR or ~/.cache/tlmn)")
    p.add_argument("--out", help="also write the merged records as one native CSV")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("synth", help="generate a synthetic hourly dataset")
    p.add_argument("--years", type=int, default=3)
    p.add_argument("--start-year", type=int, default=2021)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20, help="injected step transients per year")
    p.add_argument("--linke-turbidity", type=float, default=3.5)
    p.add_argument("--out", default="synthetic.csv")
    p.add_argument("--config-out", help="write a run config whose split matches the synthetic years")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="build and summarize the feature matrix")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="normalize with this checkpoint's statistics")
    p.add_argument("--out", help="write the feature matrix as CSV")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model and write a checkpoint and epoch log")
    _add_config_flags(p, training=True)
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test years and write the report")
    _add_config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--report-dir", help="output directory (default: report)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="forecast the hour after the last record in a window file")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", required=True, help="CSV with at least 24 contiguous recent hours")
    _location_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("clearsky", help="hourly clear-sky GHI table for one local day")
    _location_flags(p, required=True)
    p.add_argument("--date", required=True, help="local date, YYYY-MM-DD")
    p.add_argument("--linke-turbidity", type=float, default=3.5)
    p.add_argument("--utc-offset", type=float, default=2.0, help="local time minus UTC, hours")
    p.set_defaults(func=cmd_clearsky)

    p = sub.add_parser("audit", help="parameter breakdown and structural invariant checks")
    p.add_argument("--checkpoint", help="audit this checkpoint (default: a fresh initialization)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TLMNError, ValueError, OSError) as exc:
        kind = type(exc).__name__
        msg = " ".join(str(exc).split())
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
