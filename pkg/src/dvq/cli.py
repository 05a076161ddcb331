"""Command-line entry point: ``dvq <command> --input series.csv --seed N ...``.

Parameters come from built-in defaults, then an optional ``key = value``
config file, then command-line flags (flags win).

Exit codes:

    0  success
    2  usage or configuration error
    3  invalid input data
    4  computational failure
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .dvq import DEFAULT_QUANTILES, DvqModel, fit, forecast
from .embedding import detect_saturation, estimate_dimension
from .errors import DvqError, InvalidInputError
from .gapfill import fill_all
from .selection import Config, config_grid, cross_validate
from .series import PREPROCESSINGS, format_float, preprocess, read_csv
from .som import Phase, TrainSchedule

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _int_list(text):
    """``5,10,20`` or ``start:stop:step`` (stop inclusive)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b, *c = (int(x) for x in part.split(":"))
            step = c[0] if c else 1
            if step < 1:
                raise ValueError("range step must be positive")
            out.extend(range(a, b + 1, step))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return out


def _str_list(text):
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _float_list(text):
    return [float(s) for s in _str_list(text)]


# name: (type, default, help); None default means "required"
COMMON = {
    "seed": (int, None, "master random seed (required)"),
    "workers": (int, os.cpu_count() or 1, "worker count; results do not depend on it"),
    "order_passes": (int, 10, "SOM ordering-phase passes"),
    "convergence_passes": (int, 40, "SOM convergence-phase passes"),
}
MODEL = {
    "p": (int, 3, "base regressor size"),
    "d": (int, 1, "block size (values predicted per step)"),
    "n1": (int, 50, "regressor prototypes"),
    "n2": (int, 5, "deformation prototypes"),
    "preprocessing": (str, "none", "none | difference | returns"),
}
COMMANDS = {
    "analyze": {
        "p_max": (int, 8, "largest embedding size"),
        "max_points": (int, 5000, "subsample regressors above this count"),
        "n_radii": (int, 50, "radius grid size"),
        "window_low": (float, math.nan, "ln r lower fit bound (default: automatic)"),
        "window_high": (float, math.nan, "ln r upper fit bound (default: automatic)"),
        "variants": (_str_list, ["none", "difference", "returns"], "series variants"),
    },
    "crossval": {
        "p": MODEL["p"],
        "n1": (_int_list, list(range(5, 101, 5)), "n1 values: list or start:stop:step"),
        "n2": (_int_list, list(range(5, 101, 5)), "n2 values: list or start:stop:step"),
        "d": (_int_list, [1, 2, 5, 10, 20], "block sizes"),
        "preprocessing": (_str_list, list(PREPROCESSINGS), "series variants"),
        "repetitions": (int, 20, "validation repetitions"),
        "n_gaps": (int, 15, "artificial gaps per repetition"),
        "gap_len": (int, 20, "artificial gap length"),
        "n_sims": (int, 20, "simulations per gap"),
    },
    "forecast": {**MODEL, "horizon": (int, 20, "forecast horizon"),
                 "n_sims": (int, 100, "simulations"),
                 "quantiles": (_float_list, list(DEFAULT_QUANTILES), "reported quantiles")},
    "fill-gaps": {**MODEL, "n_sims": (int, 100, "simulations per direction"),
                  "restarts": (int, 10, "training restarts for the final models"),
                  "validation_sets": (int, 5, "gap sets used to pick among restarts"),
                  "backward": (str, "separate", "separate | reuse")},
    "train": {**MODEL, "model_out": (str, "model.json", "model file name inside --out-dir")},
    "predict": {"model": (str, None, "model JSON written by `train`"),
                "horizon": (int, 20, "forecast horizon"),
                "n_sims": (int, 100, "simulations"),
                "quantiles": (_float_list, list(DEFAULT_QUANTILES), "reported quantiles")},
}
# never part of the provenance hash
NON_SEMANTIC = {"workers", "out_dir", "config", "input", "no_plots", "command"}


def build_parser():
    parser = argparse.ArgumentParser(prog="dvq", description="Double vector quantization forecasting")
    parser.add_argument("--version", action="version", version=f"dvq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, params in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--input", required=True, help="series CSV (one value per line)")
        sp.add_argument("--config", help="key = value parameter file")
        sp.add_argument("--out-dir", default="out", help="output directory")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        for key, (typ, default, help_) in {**COMMON, **params}.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=str, default=None,
                            help=f"{help_} [default: {default}]" if default is not None else help_)
    return parser


def read_config(path) -> dict:
    out = {}
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args) -> dict:
    """Merge defaults, config file and flags, and convert types."""
    params = {**COMMON, **COMMANDS[args.command]}
    file_values = read_config(args.config) if args.config else {}
    unknown = set(file_values) - set(params)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    cfg = {}
    for key, (typ, default, _) in params.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"--{key.replace('_', '-')} is required")
            cfg[key] = default
            continue
        try:
            cfg[key] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})")
    _validate(args.command, cfg)
    return cfg


def _validate(command, cfg):
    def positive(*keys):
        for k in keys:
            vals = cfg[k] if isinstance(cfg[k], list) else [cfg[k]]
            if any(v < 1 for v in vals):
                raise ConfigError(f"{k} must be >= 1")

    positive("workers")
    if cfg["order_passes"] < 0 or cfg["convergence_passes"] < 0:
        raise ConfigError("pass counts must be >= 0")
    if cfg["order_passes"] + cfg["convergence_passes"] < 1:
        raise ConfigError("at least one SOM training pass is needed")
    for k in ("p", "d", "n1", "n2", "horizon", "n_sims", "restarts", "validation_sets",
              "repetitions", "n_gaps", "gap_len", "p_max", "max_points"):
        if k in cfg:
            positive(k)
    if cfg.get("n_radii", 2) < 2:
        raise ConfigError("n_radii must be >= 2")
    preps = cfg.get("preprocessing", [])
    for prep in preps if isinstance(preps, list) else [preps]:
        if prep not in PREPROCESSINGS:
            raise ConfigError(f"preprocessing must be one of {PREPROCESSINGS}")
    for prep in cfg.get("variants", []):
        if prep not in PREPROCESSINGS:
            raise ConfigError(f"variants must be among {PREPROCESSINGS}")
    if cfg.get("backward", "separate") not in ("separate", "reuse"):
        raise ConfigError("backward must be separate or reuse")
    if any(not 0 <= q <= 1 for q in cfg.get("quantiles", [])):
        raise ConfigError("quantiles must lie in [0, 1]")


def schedule_from(cfg):
    phases = []
    if cfg["order_passes"]:
        phases.append(Phase(cfg["order_passes"], None, 1.0, 0.5, 0.05))
    if cfg["convergence_passes"]:
        phases.append(Phase(cfg["convergence_passes"], 1.0, 0.0, 0.05, 0.01))
    return TrainSchedule(tuple(phases))


class Run:
    """Output bookkeeping for one command invocation."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.plots = not args.no_plots
        data = Path(args.input).read_bytes()
        semantic = {k: v for k, v in cfg.items() if k not in NON_SEMANTIC}
        if "model" in semantic:
            # the model's contents matter, not where it is stored
            try:
                semantic["model"] = hashlib.sha256(Path(cfg["model"]).read_bytes()).hexdigest()
            except OSError as exc:
                raise InvalidInputError(f"cannot read model {cfg['model']}: {exc}")
        blob = json.dumps({"command": args.command, "params": semantic,
                           "input_sha256": hashlib.sha256(data).hexdigest()}, sort_keys=True)
        self.config_hash = hashlib.sha256(blob.encode()).hexdigest()[:16]
        self.written = []

    @property
    def provenance(self):
        return f"dvq {__version__} command={self.args.command} config={self.config_hash}"

    def table(self, name, header, rows):
        buf = io.StringIO()
        buf.write("# " + self.provenance + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
        self.text(name, buf.getvalue())

    def text(self, name, content):
        path = self.out / name
        path.write_text(content)
        self.written.append(path)

    def json(self, name, obj):
        self.text(name, json.dumps({"provenance": self.provenance, **obj}, indent=1, sort_keys=True) + "\n")

    def figure(self, name, draw, *a, **kw):
        if self.plots:
            path = self.out / name
            draw(*a, path=path, **kw)
            self.written.append(path)


def _plotting():
    from . import plotting

    return plotting


# ---------------------------------------------------------------- commands

def cmd_analyze(run, series):
    cfg = run.cfg
    window = None
    if not (math.isnan(cfg["window_low"]) and math.isnan(cfg["window_high"])):
        if math.isnan(cfg["window_low"]) or math.isnan(cfg["window_high"]):
            raise ConfigError("give both window-low and window-high")
        window = (cfg["window_low"], cfg["window_high"])
    p_values = list(range(1, cfg["p_max"] + 1))
    curve_rows, dim_rows, report = [], [], {"variants": []}
    for variant in cfg["variants"]:
        try:
            s = preprocess(series, variant)
            results = estimate_dimension(s, p_values, window=window, max_points=cfg["max_points"],
                                         seed=cfg["seed"], workers=cfg["workers"])
        except InvalidInputError as exc:
            if variant == cfg["variants"][0]:
                raise
            report["variants"].append({"variant": variant, "error": str(exc)})
            continue
        for curve, est in results:
            for lr, lc in zip(curve.log_r, curve.log_c):
                if np.isfinite(lc):
                    curve_rows.append([variant, curve.embedding_dim, float(lr), float(lc)])
            dim_rows.append([variant, est.embedding_dim, est.slope, est.fit_window[0],
                             est.fit_window[1], est.fit_residual])
        sat = detect_saturation([e for _, e in results])
        report["variants"].append({
            "variant": variant,
            "slopes": {str(e.embedding_dim): e.slope for _, e in results},
            "saturated": sat.saturated,
            "plateau_value": sat.plateau_value,
            "first_saturating_p": sat.first_saturating_p,
            "recommended_p": sat.recommended_p,
            "plateaus": [vars(pl) for pl in sat.plateaus],
        })
        run.figure(f"correlation_{variant}.png", _plotting().correlation_figure,
                   [c for c, _ in results], [e for _, e in results], title=f"series variant: {variant}")
    run.table("curves.csv", ["variant", "embedding_dim", "ln_r", "ln_C"], curve_rows)
    run.table("dimensions.csv", ["variant", "embedding_dim", "slope", "ln_r_low", "ln_r_high",
                                 "fit_residual"], dim_rows)
    run.json("saturation.json", report)
    return report


def cmd_crossval(run, series):
    cfg = run.cfg
    grid = config_grid(cfg["n1"], cfg["n2"], cfg["d"], cfg["preprocessing"])
    report = cross_validate(
        series, grid, cfg["repetitions"], cfg["seed"], p=cfg["p"], n_gaps=cfg["n_gaps"],
        gap_len=cfg["gap_len"], n_sims=cfg["n_sims"], schedule=schedule_from(cfg),
        workers=cfg["workers"],
    )
    if report.best is None:
        raise DvqError("every configuration failed to fit")
    run.text("crossval_summary.csv", report.summary_csv(run.provenance))
    run.text("crossval_detail.csv", report.detail_csv(run.provenance))
    run.json("crossval.json", report.to_dict())
    run.figure("crossval.png", _plotting().validation_figure, report)
    return report


def _write_ensemble(run, series, ens, name="forecast"):
    n = len(series)
    levels = list(ens.quantile_levels)
    qs = ens.quantiles
    header = ["step", "time", "mean", "std"] + [f"q{q:g}" for q in levels]
    rows = [
        [k + 1, n + k + 1, float(ens.mean[k]), float(ens.std[k])] + [float(qs[q][k]) for q in levels]
        for k in range(ens.horizon)
    ]
    run.table(f"{name}.csv", header, rows)
    run.figure(f"{name}.png", _plotting().forecast_figure, series, ens)


def _fit_from(run, series):
    cfg = run.cfg
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(series, cfg["p"], cfg["d"], cfg["n1"], cfg["n2"], cfg["preprocessing"],
                   schedule_from(cfg), cfg["seed"])


def _model_seeds(seed):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(2)]


def cmd_forecast(run, series):
    cfg = run.cfg
    model = _fit_from(run, series)
    ens = forecast(model, series, cfg["horizon"], cfg["n_sims"], _model_seeds(cfg["seed"])[1],
                   workers=cfg["workers"], quantile_levels=cfg["quantiles"])
    _write_ensemble(run, series, ens)
    return ens


def cmd_train(run, series):
    model = _fit_from(run, series)
    path = run.out / run.cfg["model_out"]
    model.save(path)
    run.written.append(path)
    return model


def cmd_predict(run, series):
    cfg = run.cfg
    try:
        model = DvqModel.load(cfg["model"])
    except (OSError, ValueError, KeyError) as exc:
        raise InvalidInputError(f"cannot load model {cfg['model']}: {exc}")
    ens = forecast(model, series, cfg["horizon"], cfg["n_sims"], _model_seeds(cfg["seed"])[1],
                   workers=cfg["workers"], quantile_levels=cfg["quantiles"])
    _write_ensemble(run, series, ens)
    return ens


def cmd_fill_gaps(run, series):
    cfg = run.cfg
    if not series.gaps():
        raise InvalidInputError("the input series has no missing values")
    result = fill_all(
        series, Config(cfg["n1"], cfg["n2"], cfg["d"], cfg["preprocessing"]), p=cfg["p"],
        n_sims=cfg["n_sims"], restarts=cfg["restarts"], seed=cfg["seed"],
        schedule=schedule_from(cfg), backward=cfg["backward"], workers=cfg["workers"],
        n_validation_sets=cfg["validation_sets"],
    )
    rows = []
    for gid, pred in enumerate(result.predictions, start=1):
        start, h = pred.gap
        for k in range(h):
            def at(v):
                return math.nan if v is None else float(v[k])

            rows.append([start + k + 1, gid, float(pred.final[k]), at(pred.forward_mean),
                         at(pred.backward_mean), at(pred.forward_corrected),
                         at(pred.backward_corrected), int(pred.forward_correction_applied),
                         int(pred.backward_correction_applied)])
        run.figure(f"gap_{gid}.png", _plotting().gap_figure, series, pred)
    run.table("gapfill.csv", ["time", "gap", "final", "forward_mean", "backward_mean",
                              "forward_corrected", "backward_corrected", "forward_correction",
                              "backward_correction"], rows)
    run.table("completed.csv", ["time", "value"],
              [[t + 1, float(v)] for t, v in enumerate(result.completed.values)])
    return result


HANDLERS = {
    "analyze": cmd_analyze,
    "crossval": cmd_crossval,
    "forecast": cmd_forecast,
    "fill-gaps": cmd_fill_gaps,
    "train": cmd_train,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
    except (ConfigError, OSError) as exc:
        print(f"dvq: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        series = read_csv(args.input)
        run = Run(args, cfg)
        HANDLERS[args.command](run, series)
    except ConfigError as exc:
        print(f"dvq: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, OSError) as exc:
        print(f"dvq: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DvqError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dvq: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for path in run.written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
