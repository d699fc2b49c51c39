"""Command-line experiment runner.

Every subcommand accepts ``--config`` (a JSON file of experiment settings),
``--seed``, ``--out-dir`` and ``--data`` (a speed CSV; synthetic data is
generated when omitted). Flags override values from the config file.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .data import SynthParams, inject_missing, save_csv, split_shuffle, synth_generate, window
from .exceptions import ConfigurationError
from .metrics import evaluate, persistence_baseline
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("sbulstm")

# flag -> (config section or None, key, type)
OVERRIDES = {
    "locations": ("data", "locations", int),
    "timesteps": ("data", "timesteps", int),
    "data_seed": ("data", "seed", int),
    "hidden": ("model", "hidden", int),
    "n_middle": ("model", "n_middle", int),
    "middle_kind": ("model", "middle_kind", str),
    "last_hidden": ("model", "last_hidden", int),
    "merge": ("model", "merge", str),
    "batch_size": ("train", "batch_size", int),
    "learning_rate": ("train", "learning_rate", float),
    "max_epochs": ("train", "max_epochs", int),
    "patience": ("train", "patience", int),
    "time_lags": (None, "time_lags", int),
    "normalization": (None, "normalization", str),
    "norm_range": (None, "norm_range", tuple),
    "split": (None, "split", str),
    "split_seed": (None, "split_seed", int),
    "repetitions": (None, "repetitions", int),
}


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _common(p):
    p.add_argument("--config", help="JSON file with experiment settings")
    p.add_argument("--seed", type=int, help="base seed for model init and batch order")
    p.add_argument("--out-dir", help="directory for reports and artifacts")
    p.add_argument("--data", help="speed CSV (timestamp column then one column per location)")
    p.add_argument("-v", "--verbose", action="store_true")


def _experiment_flags(p):
    g = p.add_argument_group("experiment overrides")
    g.add_argument("--locations", type=int)
    g.add_argument("--timesteps", type=int)
    g.add_argument("--data-seed", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--n-middle", type=int)
    g.add_argument("--middle-kind", choices=("BDLSTM", "LSTM"))
    g.add_argument("--last-hidden", type=int)
    g.add_argument("--merge", choices=("concat", "sum", "average", "multiply"))
    g.add_argument("--batch-size", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--time-lags", type=int)
    g.add_argument("--normalization", choices=("none", "minmax", "zscore"))
    g.add_argument("--norm-range", type=_floats, metavar="LO,HI", help="min-max target interval")
    g.add_argument("--split", choices=("shuffle", "chronological"))
    g.add_argument("--split-seed", type=int)
    g.add_argument("--repetitions", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="sbulstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help, experiment=True):
        p = sub.add_parser(name, help=help)
        _common(p)
        if experiment:
            _experiment_flags(p)
        return p

    p = add("generate", "write a synthetic speed CSV")
    p.add_argument("--output", help="CSV path (default OUT_DIR/series.csv)")
    p.add_argument("--missing", type=float, default=0.0, help="proportion of entries to hide")

    add("train", "train one model and save a checkpoint")

    p = add("evaluate", "score a checkpoint against persistence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("test", "all"), default="test")

    p = add("predict", "predict the step after the end of the data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="CSV path (default OUT_DIR/predictions.csv)")

    p = add("gradcheck", "compare backprop against central differences")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds per shape")
    p.add_argument("--shapes", help=f"comma list from {','.join(harness.GRADCHECK_SHAPES)}")
    p.add_argument("--tol", type=float, default=1e-5)

    p = add("sweep-layers", "layer-count sweep over model families")
    p.add_argument("--layer-counts", type=_ints)
    p.add_argument("--families", help=f"comma list from {','.join(harness.FAMILIES)}")

    p = add("sweep-lags", "time-lag sweep")
    p.add_argument("--lags", type=_ints)

    p = add("sweep-width", "last-layer width sweep")
    p.add_argument("--multipliers", type=_floats)

    p = add("sweep-missing", "missing-value robustness sweep")
    p.add_argument("--proportions", type=_floats)
    p.add_argument("--missing-in-training", action="store_true",
                   help="also corrupt the training data at each proportion")

    p = add("perm-test", "location permutation test")
    p.add_argument("--permutation", type=_ints, help="comma list, e.g. 3,0,2,1 (random by default)")
    p.add_argument("--trials", type=int)

    p = add("export-heatmap", "write actual and predicted location x time CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start-day", type=float, default=0)
    p.add_argument("--end-day", type=float, default=1)
    return parser


def resolve_config(args):
    base = harness.ExperimentConfig.from_file(args.config).to_dict() if args.config else \
        harness.ExperimentConfig().to_dict()
    for flag, (section, key, _) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            (base[section] if section else base)[key] = value
    if args.seed is not None:
        base["seed"] = args.seed
    if args.out_dir is not None:
        base["out_dir"] = args.out_dir
    if args.data is not None:
        base["data"]["source"] = "csv"
        base["data"]["path"] = args.data
    extra = {"layer_counts": "layer_counts", "lags": "lags", "multipliers": "width_multipliers",
             "proportions": "missing_proportions", "trials": "permutation_trials"}
    for flag, key in extra.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    if getattr(args, "families", None):
        base["families"] = [f.strip() for f in args.families.split(",")]
    if getattr(args, "missing_in_training", False):
        base["missing_in_training"] = True
    return harness.ExperimentConfig.from_dict(base)


def _write(report, cfg):
    paths = report.write(cfg.out_dir)
    print(report.full_text())
    print(f"wrote {paths[0]} and {paths[1]}")


def _load_for_checkpoint(cfg, path):
    model = load_checkpoint(path)
    if model.norm is None:
        raise ConfigurationError(f"{path} carries no normalization statistics")
    series = harness.load_series(cfg)
    if series.n_locations * series.n_channels != model.spec.input_width:
        raise ConfigurationError(
            f"data has {series.n_locations} locations x {series.n_channels} channels, "
            f"checkpoint expects input width {model.spec.input_width}")
    return model, series


def cmd_generate(args, cfg):
    d = cfg.data
    series = synth_generate(d.locations, d.timesteps, SynthParams(**d.synth), seed=d.seed)
    if args.missing:
        series = inject_missing(series, args.missing, seed=d.seed)
    path = args.output or os.path.join(cfg.out_dir, "series.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_csv(series, path)
    print(f"wrote {path} ({series.n_timesteps} steps x {series.n_locations} locations)")


def cmd_train(args, cfg):
    model, history, report = harness.run_train(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(cfg.out_dir, "model.ckpt"))
    history.to_csv(os.path.join(cfg.out_dir, "history.csv"), include_timing=False)
    _write(report, cfg)


def cmd_evaluate(args, cfg):
    model, series = _load_for_checkpoint(cfg, args.checkpoint)
    n = model.spec.time_lags
    samples = window(series, n)
    if args.subset == "test":
        split_seed = model.meta.get("split_seed", cfg.split_seed)
        shuffle = model.meta.get("split", cfg.split) == "shuffle"
        samples = split_shuffle(samples, seed=split_seed, shuffle=shuffle).test
    rep = evaluate(samples.y, harness.predict_raw(model, model.norm, samples), "model")
    base = evaluate(samples.y, persistence_baseline(samples.X, samples.mask, series.n_channels), "persistence")
    resolved = cfg.to_dict()
    resolved.update(checkpoint=os.path.abspath(args.checkpoint), subset=args.subset, time_lags=n)
    report = harness.Report("evaluate", list(rep.FIELDS), [rep.row(), base.row()], resolved,
                            f"{rep.to_text()}\n{base.to_text()}",
                            {"relative_improvement": 1.0 - rep.mae / base.mae})
    _write(report, cfg)


def cmd_predict(args, cfg):
    model, series = _load_for_checkpoint(cfg, args.checkpoint)
    n = model.spec.time_lags
    T = series.n_timesteps
    if T < n:
        raise ConfigurationError(f"need at least {n} timesteps, data has {T}")
    # append a dummy target step so the last n observed steps form one window
    P, F = series.n_locations, series.n_channels
    pad = np.concatenate([series.values[T - n:], np.zeros((1, P, F))])
    obs = np.concatenate([series.observed[T - n:], np.ones((1, P, F), dtype=bool)])
    samples = window(series.with_values(pad, obs), n)
    if len(samples) != 1:
        raise ConfigurationError("the last time step is entirely missing; prediction is undefined")
    pred = harness.predict_raw(model, model.norm, samples)[0]
    path = args.output or os.path.join(cfg.out_dir, "predictions.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "predicted_speed"])
        for loc, v in zip(series.location_ids, pred):
            w.writerow([loc, repr(float(v))])
    print(f"wrote {path}")


def cmd_gradcheck(args, cfg):
    shapes = args.shapes.split(",") if args.shapes else None
    base = cfg.seed
    report = harness.run_gradcheck(range(base, base + args.seeds), shapes, args.tol)
    _write(report, cfg)
    if not report.summary["passed"]:
        print(f"gradcheck failed: max relative error {report.summary['max_rel_error']:.3e}", file=sys.stderr)
        return 1
    return 0


def cmd_perm_test(args, cfg):
    perm = args.permutation
    if perm is not None:
        P = harness.load_series(cfg).n_locations
        if sorted(perm) != list(range(P)):
            raise ConfigurationError(f"--permutation must be a permutation of 0..{P - 1}")
    _write(harness.run_perm_test(cfg, perm=perm), cfg)


def cmd_export_heatmap(args, cfg):
    model, series = _load_for_checkpoint(cfg, args.checkpoint)
    _, _, paths = harness.export_heatmap(model, series, args.start_day, args.end_day, cfg.out_dir)
    print(f"wrote {paths[0]} and {paths[1]}")


def _sweep(fn):
    def run(args, cfg):
        _write(fn(cfg), cfg)
    return run


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "sweep-layers": _sweep(harness.run_sweep_layers),
    "sweep-lags": _sweep(harness.run_sweep_lags),
    "sweep-width": _sweep(harness.run_sweep_width),
    "sweep-missing": _sweep(harness.run_sweep_missing),
    "perm-test": cmd_perm_test,
    "export-heatmap": cmd_export_heatmap,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg) or 0
    except (ValueError, OSError, FloatingPointError, TypeError) as exc:
        print(f"sbulstm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
