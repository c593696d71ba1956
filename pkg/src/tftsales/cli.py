"""Command-line entry point: ``tftsales {stats,train,cv,forecast,explain,compare,synth}``.

Every command writes ``run.json`` (resolved configuration) into ``--out``.
A ``--config`` file holds flat ``key = value`` lines using the same names as
the long flags (``max_epochs``, ``learning_rate``, ``hidden_size`` ...);
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .baselines import (KINDS, BaselineConfig, ProtocolMismatch, compare_models, read_external_forecast,
                        train_baseline)
from .evalx import attention_by_lag, variable_importance, write_rows
from .ingest import (IngestError, InsufficientHistory, PanelTable, WindowSet, chronological_split,
                     descriptive_stats, format_stats, holdout_windows, parse_csv, scaled_features)
from .tft import (TftConfig, UnknownStore, load_checkpoint, predict, predict_intervals, save_checkpoint)
from .train import TrainConfig, TrainError, holdout_split, run_cv, run_holdout, tft_config_for, train_model

log = logging.getLogger("tftsales")

TFT_KEYS = {"hidden_size": int, "attention_heads": int, "dropout": float, "encoder_len": int, "horizon": int}
TRAIN_KEYS = {f.name: (float if f.type in ("float", "float | None") else int) for f in fields(TrainConfig)}
OTHER_KEYS = {"train_fraction": float, "folds": int}


class CliError(Exception):
    pass


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args) -> dict:
    """Merge defaults < config file < command-line flags."""
    known = {**TFT_KEYS, **TRAIN_KEYS, **OTHER_KEYS}
    values: dict = {}
    if args.config:
        for k, v in read_config_file(args.config).items():
            if k not in known:
                raise CliError(f"unknown config key {k!r}")
            values[k] = None if v.lower() == "none" else known[k](v)
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    values["seed"] = args.seed
    return values


def build_configs(values: dict) -> tuple[TftConfig, TrainConfig]:
    tft = TftConfig(**{k: values[k] for k in TFT_KEYS if k in values})
    train = TrainConfig(**{k: values[k] for k in TRAIN_KEYS if k in values})
    return tft, train


def write_run_json(out: Path, command: str, args, values: dict, tft: TftConfig | None = None,
                   train: TrainConfig | None = None, **extra) -> None:
    payload = {
        "command": command,
        "version": __version__,
        "data": str(args.data) if getattr(args, "data", None) else None,
        "seed": args.seed,
        "threads": args.threads,
        "options": {k: v for k, v in values.items()},
    }
    if tft is not None:
        payload["tft_config"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(tft).items()}
    if train is not None:
        payload["train_config"] = asdict(train)
    payload.update(extra)
    (out / "run.json").write_text(json.dumps(payload, indent=2, default=str) + "\n")


def write_point_files(out: Path, prefix: str, windows: WindowSet, q50: np.ndarray,
                      lower: np.ndarray | None = None, upper: np.ndarray | None = None) -> None:
    """Scatter (actual vs predicted) and residual plot-data for every forecast point."""
    H = windows.horizon
    scatter, resid = [], []
    for i in range(len(windows)):
        for h in range(H):
            a, p = float(windows.actual[i, h]), float(q50[i, h])
            row = [int(windows.store[i]), int(windows.origin_t[i]), h + 1, repr(a), repr(p)]
            if lower is not None:
                row += [repr(float(lower[i, h])), repr(float(upper[i, h]))]
            scatter.append(row)
            resid.append([int(windows.store[i]), int(windows.origin_t[i]) + h + 1, h + 1, repr(p), repr(a - p)])
    head = ["store", "origin_t", "horizon", "actual", "predicted_q50"]
    if lower is not None:
        head += ["q10", "q90"]
    write_rows(out / f"{prefix}scatter.csv", head, scatter)
    write_rows(out / f"{prefix}residuals.csv", ["store", "t_idx", "horizon", "predicted_q50", "residual"], resid)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_stats(args) -> int:
    panel = parse_csv(args.data)
    stats = descriptive_stats(panel)
    pretty = format_stats(stats)
    pretty.index.name = "stat"
    pretty.to_csv(args.out / "stats.csv")
    raw = stats.copy()
    raw.index.name = "stat"
    raw.to_csv(args.out / "stats_raw.csv", float_format="%.10g")
    print(pretty.to_string())
    write_run_json(args.out, "stats", args, resolve(args))
    return 0


def cmd_train(args) -> int:
    values = resolve(args)
    tft, train = build_configs(values)
    panel = parse_csv(args.data)
    fraction = values.get("train_fraction", 0.8)
    result = run_holdout(panel, tft, train, fraction)
    out = args.out
    save_checkpoint(result.model, out / "model", result.scalers, {"train_fraction": repr(fraction)})
    result.history.to_csv(out / "history.csv")
    metrics = result.metrics.to_dict()
    metrics["coverage_90"] = result.calibration.coverage
    metrics["best_epoch"] = result.history.best_epoch + 1
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    result.calibration.to_csv(out / "calibration.csv")
    fc = result.forecast
    write_point_files(out, "", result.test_windows, fc.median(), fc.lower(), fc.upper())
    print(json.dumps(metrics, indent=2))
    write_run_json(out, "train", args, values, result.model.config, train)
    return 0


def cmd_cv(args) -> int:
    values = resolve(args)
    tft, train = build_configs(values)
    panel = parse_csv(args.data)
    report = run_cv(panel, values.get("folds", 5), tft, train, workers=max(1, args.threads))
    report.to_csv(args.out / "cv_report.csv")
    report.to_json(args.out / "cv_report.json")
    for row in report.table():
        print("\t".join(row))
    write_run_json(args.out, "cv", args, values, tft, train)
    return 0


def _future_rows(panel: PanelTable, store: int, origin: int, horizon: int) -> pd.DataFrame:
    """Store rows up to origin + horizon; weeks past the file get carried-forward covariates."""
    df = panel.store_frame(store)
    df = df[df["t_idx"] <= origin + horizon].copy()
    last = df.iloc[-1]
    extra = []
    for t in range(int(last["t_idx"]) + 1, origin + horizon + 1):
        row = last.copy()
        row["t_idx"] = t
        row["date"] = last["date"] + pd.Timedelta(weeks=t - int(last["t_idx"]))
        prior = df[df["t_idx"] == t - 52]
        row["holiday_flag"] = float(prior["holiday_flag"].iloc[0]) if len(prior) else 0.0
        row["weekly_sales"] = np.nan
        row["log_sales"] = np.nan
        extra.append(row)
    if extra:
        df = pd.concat([df, pd.DataFrame(extra)], ignore_index=True)
    return df.reset_index(drop=True)


def cmd_forecast(args) -> int:
    values = resolve(args)
    model, scalers, extra = load_checkpoint(args.checkpoint)
    if scalers is None:
        raise CliError("checkpoint carries no scalers")
    panel = parse_csv(args.data)
    cfg = model.config
    if args.store not in panel.stores:
        raise UnknownStore(f"store {args.store} is not in {args.data}")
    model.store_index([args.store])
    sf = panel.store_frame(args.store)
    origin = int(sf["t_idx"].max()) if args.origin is None else args.origin
    if origin not in set(sf["t_idx"].tolist()) or origin - cfg.encoder_len + 1 < int(sf["t_idx"].min()):
        raise InsufficientHistory(f"origin {origin} does not leave {cfg.encoder_len} weeks of history")
    df = _future_rows(panel, args.store, origin, cfg.horizon)
    df = df[df["t_idx"] > origin - cfg.encoder_len].reset_index(drop=True)
    feats = scaled_features(PanelTable(df), scalers).to_numpy(dtype=np.float64)
    L = cfg.encoder_len
    enc = feats[:L][None]
    dec = feats[L:, 1:][None]
    actual = df["weekly_sales"].to_numpy()[L:][None]
    win = WindowSet(np.array([args.store]), np.array([origin]), enc, dec,
                    np.nan_to_num(feats[L:, 0])[None], actual)
    fc = predict_intervals(predict(model, win), scalers, win, cfg.quantiles)
    rows = [[args.store, origin, h + 1] + [repr(float(v)) for v in fc.values[0, h]] for h in range(cfg.horizon)]
    write_rows(args.out / "forecast.csv", ["store", "origin_t", "horizon", "q10", "q50", "q90"], rows)
    hist = df.iloc[:L]
    write_rows(args.out / "history.csv", ["store", "t_idx", "date", "weekly_sales"],
               [[args.store, int(r.t_idx), r.date.strftime("%Y-%m-%d"), repr(float(r.weekly_sales))]
                for r in hist.itertuples()])
    for r in rows:
        print(",".join(map(str, r)))
    write_run_json(args.out, "forecast", args, values, cfg, checkpoint=str(args.checkpoint),
                   store=args.store, origin=origin)
    return 0


def cmd_explain(args) -> int:
    values = resolve(args)
    model, scalers, extra = load_checkpoint(args.checkpoint)
    if scalers is None:
        raise CliError("checkpoint carries no scalers")
    cfg = model.config
    panel = parse_csv(args.data)
    fraction = float(extra.get("train_fraction", values.get("train_fraction", 0.8)))
    train_panel, _ = chronological_split(panel, fraction)
    windows = holdout_windows(panel, train_panel, scalers, cfg.encoder_len, cfg.horizon)
    out = predict(model, windows)
    lags, weights = attention_by_lag(out.attention, cfg.encoder_len)
    write_rows(args.out / "attention.csv", ["lag", "mean_weight"],
               [[int(l), repr(float(w))] for l, w in zip(lags, weights)])
    enc = variable_importance(out.encoder_weights, cfg.encoder_vars)
    dec = variable_importance(out.decoder_weights, cfg.decoder_vars)
    write_rows(args.out / "importance.csv", ["side", "variable", "weight"],
               [["encoder", k, repr(v)] for k, v in enc.items()] + [["decoder", k, repr(v)] for k, v in dec.items()])
    fc = predict_intervals(out, scalers, windows, cfg.quantiles)
    frame = pd.DataFrame({"store": windows.store, "pred": fc.median().mean(axis=1),
                          "actual": windows.actual.mean(axis=1)})
    ranking = frame.groupby("store").mean().sort_values("pred", ascending=False)
    write_rows(args.out / "store_ranking.csv", ["rank", "store", "mean_predicted", "mean_actual"],
               [[i + 1, int(s), repr(float(r.pred)), repr(float(r.actual))]
                for i, (s, r) in enumerate(ranking.iterrows())])
    print("encoder importance:", {k: round(v, 4) for k, v in enc.items()})
    print("decoder importance:", {k: round(v, 4) for k, v in dec.items()})
    write_run_json(args.out, "explain", args, values, cfg, checkpoint=str(args.checkpoint))
    return 0


def _parse_external(specs) -> dict[str, Path]:
    out = {}
    for spec in specs or []:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        if name in out:
            raise argparse.ArgumentTypeError(f"duplicate model name {name!r}")
        out[name] = Path(path)
    return out


def cmd_compare(args) -> int:
    values = resolve(args)
    tft, train = build_configs(values)
    kinds = args.kinds or []
    if kinds == ["all"]:
        kinds = ["cnn", "lstm", "cnn_lstm", "seasonal_naive", "tft"]
    if len(set(kinds)) != len(kinds):
        raise CliError("duplicate model names in --kinds")
    external = _parse_external(args.external)
    if set(external) & set(kinds):
        raise CliError("external model names clash with --kinds")
    if not kinds and not external:
        raise CliError("nothing to compare: give --kinds and/or --external")
    panel = parse_csv(args.data)
    fraction = values.get("train_fraction", 0.8)
    scalers, train_w, test_w = holdout_split(panel, fraction, tft.encoder_len, tft.horizon)
    preds: dict[str, np.ndarray] = {}
    for kind in kinds:
        if kind == "tft":
            model, _ = train_model(train_w, tft_config_for(train_w, tft, panel.stores), train)
            preds["TFT"] = predict_intervals(predict(model, test_w), scalers, test_w, tft.quantiles).median()
        else:
            model, _ = train_baseline(BaselineConfig(kind, horizon=tft.horizon), train_w, train)
            preds[kind.upper().replace("_", "-")] = model.predict_dollars(test_w, scalers)
    for name, path in external.items():
        preds[name] = read_external_forecast(path, test_w)
    table = compare_models(preds, test_w)
    table.to_csv(args.out / "comparison.csv")
    table.to_json(args.out / "comparison.json")
    for name, p in preds.items():
        write_point_files(args.out, f"{name.lower()}_", test_w, p)
    for row in table.table():
        print("\t".join(row))
    write_run_json(args.out, "compare", args, values, tft, train, kinds=kinds,
                   external={k: str(v) for k, v in external.items()})
    return 0


def cmd_synth(args) -> int:
    from .synthetic import walmart_like
    df = walmart_like(args.stores, args.weeks, args.seed)
    path = args.out / "synthetic_sales.csv"
    df.to_csv(path, index=False)
    print(path)
    write_run_json(args.out, "synth", args, {"stores": args.stores, "weeks": args.weeks})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _folds(value: str) -> int:
    k = int(value)
    if k < 2:
        raise argparse.ArgumentTypeError("--folds must be >= 2")
    return k


def _kinds(value: str) -> list[str]:
    kinds = [k.strip() for k in value.split(",") if k.strip()]
    allowed = set(KINDS) | {"tft", "all"}
    bad = [k for k in kinds if k not in allowed]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown kind(s) {', '.join(bad)}")
    if len(set(kinds)) != len(kinds):
        raise argparse.ArgumentTypeError("duplicate model names in --kinds")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, help="weekly sales CSV")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (created if absent)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="BLAS threads / parallel folds; 1 is deterministic")
    common.add_argument("--config", type=Path, help="flat key = value file; flags override")
    common.add_argument("-v", "--verbose", action="store_true")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--max-epochs", dest="max_epochs", type=int)
    hyper.add_argument("--batch-size", dest="batch_size", type=int)
    hyper.add_argument("--learning-rate", dest="learning_rate", type=float)
    hyper.add_argument("--hidden-size", dest="hidden_size", type=int)
    hyper.add_argument("--attention-heads", dest="attention_heads", type=int)
    hyper.add_argument("--dropout", type=float)
    hyper.add_argument("--train-fraction", dest="train_fraction", type=float)

    parser = argparse.ArgumentParser(prog="tftsales", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common], help="descriptive statistics table")
    p.set_defaults(func=cmd_stats)
    p = sub.add_parser("train", parents=[common, hyper], help="80:20 hold-out training and evaluation")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("cv", parents=[common, hyper], help="k-fold chronological cross-validation")
    p.add_argument("--folds", type=_folds)
    p.set_defaults(func=cmd_cv)
    p = sub.add_parser("forecast", parents=[common], help="quantile forecast for one store and origin")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint path (without suffix)")
    p.add_argument("--store", type=int, required=True)
    p.add_argument("--origin", type=int, help="t_idx of the last observed week (default: last in file)")
    p.set_defaults(func=cmd_forecast)
    p = sub.add_parser("explain", parents=[common], help="attention-by-lag and variable importance")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_explain)
    p = sub.add_parser("compare", parents=[common, hyper], help="TFT vs baselines on the hold-out windows")
    p.add_argument("--kinds", type=_kinds, help="comma list of cnn,lstm,cnn_lstm,seasonal_naive,tft or 'all'")
    p.add_argument("--external", action="append", metavar="[NAME=]CSV",
                   help="external forecast file store,origin_t,horizon,prediction (repeatable)")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic panel with the reference schema")
    p.add_argument("--stores", type=int, default=45)
    p.add_argument("--weeks", type=int, default=143)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command not in ("synth",) and args.data is None:
        parser.error("--data is required")
    if args.command == "compare":
        try:
            _parse_external(args.external)
        except argparse.ArgumentTypeError as exc:
            parser.error(str(exc))
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=max(1, args.threads))
    except ImportError:  # pragma: no cover
        limiter = None
    try:
        return args.func(args)
    except (IngestError, TrainError, ProtocolMismatch, UnknownStore, CliError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
