"""Experiment runner: data preparation, repeated training and the ablation sweeps.

Every sweep returns a :class:`Report` that writes a CSV table and a text
rendering, both headed by the fully resolved configuration. Reports contain
no timings, so reruns with the same config produce byte-identical files.
"""

import copy
import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import (
    DatasetSplit,
    NormStats,
    SynthParams,
    calendar_features,
    inject_missing,
    load_csv,
    split_shuffle,
    synth_generate,
    window,
)
from .exceptions import ConfigurationError, TrainingDivergedError
from .layers import SeqInput
from .metrics import aggregate, evaluate, persistence_baseline
from .model import BDLSTM, LSTM, LayerSpec, ModelSpec, build_model, model_forward, permute_locations
from .training import TrainConfig, gradient_check, predict_batched, train

log = logging.getLogger(__name__)

FAMILIES = ("LSTM", "LSTM_DNN", "LSTM_CAL", "BDLSTM", "SBU")
FAMILY_LABELS = {
    "LSTM": "N-layers LSTM",
    "LSTM_DNN": "N-layers LSTM + 1-layer DNN",
    "LSTM_CAL": "N-layers LSTM + Hour of Day + Day of Week",
    "BDLSTM": "N-layers BDLSTM",
    "SBU": "SBU-LSTMs: 1-layer BDLSTM + N middle BDLSTM layers + 1-layer LSTM",
}


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str = None
    locations: int = 16
    timesteps: int = 5760
    seed: int = 0
    interval_minutes: float = 5.0
    synth: dict = field(default_factory=dict)


@dataclass
class ModelConfig:
    hidden: int = 16
    n_middle: int = 0
    middle_kind: str = BDLSTM
    last_hidden: int = None
    merge: str = "concat"
    use_mask: bool = True


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    time_lags: int = 10
    normalization: str = "minmax"
    # tanh-bounded outputs sit more comfortably on a range centred at 0
    norm_range: tuple = (-1.0, 1.0)
    split: str = "shuffle"
    split_seed: int = 0
    repetitions: int = 5
    seed: int = 0
    out_dir: str = "runs"
    layer_counts: tuple = (0, 1, 2, 3, 4)
    families: tuple = FAMILIES
    lags: tuple = (6, 8, 10, 12)
    width_multipliers: tuple = (0.25, 0.5, 1, 2, 4)
    missing_proportions: tuple = (0.0, 0.05, 0.10, 0.15, 0.20, 0.30)
    missing_in_training: bool = False
    permutation_trials: int = 50
    heatmap_days: tuple = (0, 1)

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        for name in ("layer_counts", "families", "lags", "width_multipliers",
                     "missing_proportions", "heatmap_days"):
            setattr(self, name, tuple(getattr(self, name)))
        self.norm_range = tuple(float(v) for v in self.norm_range)
        if len(self.norm_range) != 2 or not self.norm_range[1] > self.norm_range[0]:
            raise ConfigurationError(f"norm_range must be an increasing pair, got {self.norm_range!r}")
        if self.split not in ("shuffle", "chronological"):
            raise ConfigurationError(f"split must be 'shuffle' or 'chronological', got {self.split!r}")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        for name in ("layer_counts", "families", "lags", "width_multipliers", "missing_proportions"):
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must not be empty")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ConfigurationError(f"unknown families {bad}; choose from {FAMILIES}")

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --- reports ---------------------------------------------------------------


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


@dataclass
class Report:
    name: str
    columns: list
    rows: list
    config: dict
    text: str = ""
    summary: dict = field(default_factory=dict)

    def csv_text(self):
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(self.config, sort_keys=True) + "\n")
        for k in sorted(self.summary):
            buf.write(f"# {k}={_cell(self.summary[k])}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def full_text(self):
        head = "config: " + json.dumps(self.config, sort_keys=True)
        summ = "".join(f"{k}: {_cell(v)}\n" for k, v in sorted(self.summary.items()))
        return f"{head}\n\n{self.text.rstrip()}\n\n{summ}"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = (os.path.join(out_dir, self.name + ".csv"), os.path.join(out_dir, self.name + ".txt"))
        with open(paths[0], "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(self.full_text())
        return paths


# --- data preparation ------------------------------------------------------


def load_series(cfg):
    d = cfg.data
    if d.source == "synthetic":
        return synth_generate(d.locations, d.timesteps, SynthParams(**d.synth), seed=d.seed)
    if d.source == "csv":
        if not d.path or not os.path.exists(d.path):
            raise ConfigurationError(f"data file not found: {d.path!r}")
        return load_csv(d.path, d.interval_minutes)
    raise ConfigurationError(f"data.source must be 'synthetic' or 'csv', got {d.source!r}")


@dataclass
class Prepared:
    """Raw and normalized splits plus the statistics fitted on the training split."""

    raw: DatasetSplit
    scaled: DatasetSplit
    norm: NormStats
    n: int
    locations: int
    channels: int
    steps_per_day: int


def prepare(series, n, cfg, min_origin=None):
    samples = window(series, n)
    if min_origin is not None:
        samples = samples[np.flatnonzero(samples.origin >= min_origin)]
    raw = split_shuffle(samples, seed=cfg.split_seed, shuffle=cfg.split == "shuffle")
    norm = NormStats.fit(raw.train.X, cfg.normalization, series.n_channels, cfg.norm_range)
    scaled = DatasetSplit(norm.apply(raw.train), norm.apply(raw.validation), norm.apply(raw.test), raw.seed)
    return Prepared(raw, scaled, norm, n, series.n_locations, series.n_channels, series.steps_per_day)


def family_spec(family, n_layers, prep, mcfg, seed, last_hidden=None):
    """ModelSpec for one baseline family with ``n_layers`` (middle layers for SBU)."""
    P, W = prep.locations, prep.locations * prep.channels
    h = mcfg.hidden
    last = h if last_hidden is None else last_hidden
    common = dict(seed=seed, use_mask=mcfg.use_mask)
    if family == "SBU":
        return ModelSpec.sbu(W, prep.n, P, hidden=h, n_middle=n_layers, middle_kind=mcfg.middle_kind,
                             last_hidden=last, merge=mcfg.merge, **common)
    if n_layers < 1:
        raise ConfigurationError(f"{family} needs at least one layer")
    kind = BDLSTM if family == "BDLSTM" else LSTM
    layers = tuple(LayerSpec(kind, h, mcfg.merge) for _ in range(n_layers - 1)) + (LayerSpec(kind, last, mcfg.merge),)
    width = W + 2 if family == "LSTM_CAL" else W
    return ModelSpec(width, prep.n, layers, P, family=kind, dense_head=family == "LSTM_DNN", **common)


def _family_data(family, prep):
    if family != "LSTM_CAL":
        return prep.scaled

    def add(s):
        return s.add_features(calendar_features(s.origin, prep.n, prep.steps_per_day))
    sc = prep.scaled
    return DatasetSplit(add(sc.train), add(sc.validation), add(sc.test), sc.seed)


def predict_raw(model, norm, samples):
    """Predict in original units for unnormalized samples."""
    return norm.denormalize(predict_batched(model, norm.apply(samples)))


def run_once(prep, spec, train_cfg, family="SBU", label=""):
    """Train one model and score it on the test split in original units."""
    data = _family_data(family, prep)
    model, history = train(build_model(spec), data, train_cfg)
    model.norm = prep.norm
    pred = prep.norm.denormalize(predict_batched(model, data.test))
    return model, history, evaluate(prep.raw.test.y, pred, label)


def persistence_report(prep, label="persistence"):
    test = prep.raw.test
    return evaluate(test.y, persistence_baseline(test.X, test.mask, prep.channels), label)


def _rep_seeds(cfg, r):
    return cfg.seed + r


def repeated(prep, make_spec, cfg, family="SBU", label=""):
    """Train ``cfg.repetitions`` seeded replicas; returns (aggregate report, per-run reports)."""
    runs = []
    for r in range(cfg.repetitions):
        seed = _rep_seeds(cfg, r)
        spec = make_spec(seed)
        tcfg = replace(cfg.train, seed=seed)
        _, _, rep = run_once(prep, spec, tcfg, family, label)
        runs.append(rep)
    return aggregate(runs, label), runs


# --- sweeps ----------------------------------------------------------------


def run_train(cfg, series=None):
    """Train one model (first repetition seed); returns (model, history, report)."""
    series = load_series(cfg) if series is None else series
    prep = prepare(series, cfg.time_lags, cfg)
    spec = family_spec("SBU", cfg.model.n_middle, prep, cfg.model, cfg.seed, cfg.model.last_hidden)
    model, history, rep = run_once(prep, spec, replace(cfg.train, seed=cfg.seed), label="SBU-LSTM")
    model.meta.update(time_lags=cfg.time_lags, split_seed=cfg.split_seed, split=cfg.split)
    base = persistence_report(prep)
    rows = [rep.row(), base.row()]
    text = f"{rep.to_text()}\n{base.to_text()}\nepochs run: {len(history)} (best {history.best_epoch + 1})"
    report = Report("train", list(rep.FIELDS), rows, cfg.to_dict(), text,
                    {"relative_improvement": 1.0 - rep.mae / base.mae})
    return model, history, report


def run_sweep_layers(cfg, series=None):
    series = load_series(cfg) if series is None else series
    prep = prepare(series, cfg.time_lags, cfg)
    rows = []
    table = {}
    for fam in cfg.families:
        for N in cfg.layer_counts:
            row = {"family": fam, "N": N}
            if fam != "SBU" and N < 1:
                row["status"] = "n/a"
                rows.append(row)
                continue
            try:
                agg, runs = repeated(
                    prep, lambda s: family_spec(fam, N, prep, cfg.model, s), cfg, fam, f"{fam} N={N}")
            except TrainingDivergedError as exc:
                row.update(status="diverged", note=str(exc))
            else:
                depth = len(family_spec(fam, N, prep, cfg.model, 0).layers)
                row.update(status="ok", layers=depth, mae=agg.mae, mape=agg.mape, mae_std=agg.mae_std)
                table[fam, N] = agg
            rows.append(row)
    base = persistence_report(prep)
    lines = ["Model".ljust(44) + "".join(f"N = {N}".center(18) for N in cfg.layer_counts),
             " " * 44 + "".join("MAE     MAPE".center(18) for _ in cfg.layer_counts)]
    for fam in cfg.families:
        cells = []
        for N in cfg.layer_counts:
            r = table.get((fam, N))
            cells.append((f"{r.mae:7.3f} {r.mape:7.3f}" if r else "").center(18))
        lines.append(fam.ljust(44) + "".join(cells))
    lines.append(f"\npersistence baseline: {base.to_text()}")
    cols = ["family", "N", "layers", "status", "mae", "mape", "mae_std", "note"]
    return Report("sweep_layers", cols, rows, cfg.to_dict(), "\n".join(lines),
                  {"persistence_mae": base.mae, "persistence_mape": base.mape})


def run_sweep_lags(cfg, series=None):
    series = load_series(cfg) if series is None else series
    T = series.n_timesteps
    lags = [n for n in cfg.lags if n < T]
    skipped = [n for n in cfg.lags if n >= T]
    if not lags:
        raise ConfigurationError(f"every lag in {list(cfg.lags)} is >= T={T}")
    # common target indices so every lag is scored on the same test samples
    floor = max(lags)
    rows, lines, summary = [], [], {}
    for n in lags:
        prep = prepare(series, n, cfg, min_origin=floor)
        agg, runs = repeated(
            prep, lambda s: family_spec("SBU", cfg.model.n_middle, prep, cfg.model, s, cfg.model.last_hidden),
            cfg, "SBU", f"n={n}")
        for r, rep in enumerate(runs):
            rows.append({"lag": n, "repetition": r, "seed": _rep_seeds(cfg, r), "mae": rep.mae, "mape": rep.mape})
        summary[f"mean_mae_lag_{n}"] = agg.mae
        summary[f"std_mae_lag_{n}"] = agg.mae_std
        maes = [rep.mae for rep in runs]
        lines.append(f"n={n:3d}  mean MAE {agg.mae:.3f}  std {agg.mae_std:.3f}  "
                     f"min {min(maes):.3f}  median {float(np.median(maes)):.3f}  max {max(maes):.3f}")
    if skipped:
        summary["skipped_lags"] = " ".join(map(str, skipped))
        lines.append(f"skipped lags >= T: {skipped}")
    return Report("sweep_lags", ["lag", "repetition", "seed", "mae", "mape"], rows, cfg.to_dict(),
                  "\n".join(lines), summary)


def width_for(multiplier, P):
    w = math.ceil(multiplier * P)
    if w < 1:
        raise ConfigurationError(f"width multiplier {multiplier} gives zero hidden units for P={P}")
    return w


def run_sweep_width(cfg, series=None):
    series = load_series(cfg) if series is None else series
    prep = prepare(series, cfg.time_lags, cfg)
    P = prep.locations
    widths = [width_for(m, P) for m in cfg.width_multipliers]
    rows, lines = [], ["last-layer width    MAE      MAPE     STD"]
    for m, w in zip(cfg.width_multipliers, widths):
        agg, _ = repeated(
            prep, lambda s: family_spec("SBU", cfg.model.n_middle, prep, cfg.model, s, last_hidden=w),
            cfg, "SBU", f"{m}P")
        rows.append({"multiplier": m, "width": w, "projection": w != P, "mae": agg.mae,
                     "mape": agg.mape, "mae_std": agg.mae_std})
        lines.append(f"{m:>5g}P = {w:<6d}     {agg.mae:7.3f}  {agg.mape:7.3f}  {agg.mae_std:6.3f}")
    return Report("sweep_width", ["multiplier", "width", "projection", "mae", "mape", "mae_std"],
                  rows, cfg.to_dict(), "\n".join(lines))


def equivariance_error(model, perm, seq):
    """Max |f_perm(x[perm]) - f(x)[perm]| for one permutation."""
    F = model.spec.input_width // model.spec.output_width
    cols = (np.asarray(perm)[:, None] * F + np.arange(F)).ravel()
    base, _ = model_forward(model, seq)
    pm = permute_locations(model, perm, F)
    out, _ = model_forward(pm, SeqInput(seq.values[..., cols], seq.mask))
    return float(np.max(np.abs(out - base[:, perm])))


def run_perm_test(cfg, series=None, perm=None, tol=1e-12):
    series = load_series(cfg) if series is None else series
    prep = prepare(series, cfg.time_lags, cfg)
    P = prep.locations
    rng = np.random.default_rng(cfg.seed)
    spec = family_spec("SBU", cfg.model.n_middle, prep, cfg.model, cfg.seed, cfg.model.last_hidden)
    model = build_model(spec)
    seq = prep.scaled.test[np.arange(min(32, len(prep.scaled.test)))].seq()
    errs = [equivariance_error(model, rng.permutation(P), seq) for _ in range(cfg.permutation_trials)]
    worst = max(errs) if errs else 0.0

    if perm is None:
        perm = rng.permutation(P)
    perm = np.asarray(perm)
    tcfg = replace(cfg.train, seed=cfg.seed)
    _, _, original = run_once(prep, spec, tcfg, label="original order")
    pprep = prepare(series.permute_locations(perm), cfg.time_lags, cfg)
    _, _, permuted = run_once(pprep, spec, tcfg, label="permuted order")
    rows = [
        {"check": "equivariance", "trials": len(errs), "max_abs_error": worst,
         "result": "PASS" if worst <= tol else "FAIL"},
        {"check": "retrain_original", "mae": original.mae, "mape": original.mape},
        {"check": "retrain_permuted", "mae": permuted.mae, "mape": permuted.mape,
         "permutation": " ".join(map(str, perm.tolist()))},
    ]
    text = (f"forward-pass equivariance over {len(errs)} permutations: max error {worst:.3g} "
            f"-> {'PASS' if worst <= tol else 'FAIL'} (tol {tol:g})\n"
            f"{original.to_text()}\n{permuted.to_text()}")
    cols = ["check", "trials", "max_abs_error", "result", "mae", "mape", "permutation"]
    return Report("perm_test", cols, rows, cfg.to_dict(), text,
                  {"equivariance_pass": worst <= tol, "mae_original": original.mae,
                   "mae_permuted": permuted.mae})


def _missing_seed(cfg, r, k):
    return cfg.data.seed * 7919 + 1000 * (r + 1) + k


def run_sweep_missing(cfg, series=None):
    """Inject missing entries into evaluation inputs and score a clean-trained model.

    With ``missing_in_training`` a separate model is trained per proportion on a
    series corrupted the same way.
    """
    series = load_series(cfg) if series is None else series
    prep = prepare(series, cfg.time_lags, cfg)
    test_origins = set(prep.raw.test.origin.tolist())
    per_prop = {p: [] for p in cfg.missing_proportions}
    for r in range(cfg.repetitions):
        seed = _rep_seeds(cfg, r)
        tcfg = replace(cfg.train, seed=seed)
        spec = family_spec("SBU", cfg.model.n_middle, prep, cfg.model, seed, cfg.model.last_hidden)
        clean_model = None
        for k, p in enumerate(cfg.missing_proportions):
            corrupted = inject_missing(series, p, seed=_missing_seed(cfg, r, k))
            if cfg.missing_in_training:
                cprep = prepare(corrupted, cfg.time_lags, cfg)
                model, _, _ = run_once(cprep, spec, tcfg)
                norm = cprep.norm
            else:
                if clean_model is None:
                    clean_model, _, _ = run_once(prep, spec, tcfg)
                model, norm = clean_model, prep.norm
            samples = window(corrupted, cfg.time_lags, target_series=series)
            keep = np.flatnonzero([o in test_origins for o in samples.origin.tolist()])
            samples = samples[keep]
            per_prop[p].append(evaluate(samples.y, predict_raw(model, norm, samples), f"{p:.0%}"))
    rows, lines = [], ["missing   MAE      MAPE     STD     n"]
    for p in cfg.missing_proportions:
        agg = aggregate(per_prop[p], f"{p:.0%}")
        n_eval = per_prop[p][0].n_samples
        rows.append({"proportion": p, "mae": agg.mae, "mape": agg.mape, "mae_std": agg.mae_std,
                     "n_samples": n_eval})
        lines.append(f"{p:6.0%}  {agg.mae:7.3f}  {agg.mape:7.3f}  {agg.mae_std:6.3f}  {n_eval}")
    maes = [row["mae"] for row in rows]
    inversions = sum(b < a for a, b in zip(maes, maes[1:]))
    summary = {"accuracy_decreases": maes[-1] > maes[0], "inversions": inversions}
    return Report("sweep_missing", ["proportion", "mae", "mape", "mae_std", "n_samples"], rows,
                  cfg.to_dict(), "\n".join(lines), summary)


def export_heatmap(model, series, start_day, end_day, out_dir, prefix="heatmap"):
    """Write location x time CSVs of actual and predicted speeds for ``[start_day, end_day)``."""
    spd = series.steps_per_day
    lo, hi = int(start_day * spd), int(end_day * spd)
    T = series.n_timesteps
    if not 0 <= lo < hi <= T:
        raise ConfigurationError(f"day range [{start_day}, {end_day}) is outside the series ({T} steps)")
    n = model.spec.time_lags
    actual = series.values[lo:hi, :, 0].T
    predicted = np.full_like(actual, np.nan)
    if hi > n:
        samples = window(series, n)
        sel = np.flatnonzero((samples.origin >= lo) & (samples.origin < hi))
        if sel.size:
            sub = samples[sel]
            norm = model.norm or NormStats.fit(sub.X, "none", series.n_channels)
            predicted[:, sub.origin - lo] = predict_raw(model, norm, sub).T
    os.makedirs(out_dir, exist_ok=True)
    stamps = series.stamps()[lo:hi]
    paths = []
    for name, mat in (("actual", actual), ("predicted", predicted)):
        path = os.path.join(out_dir, f"{prefix}_{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["location"] + list(stamps))
            for loc, vals in zip(series.location_ids, mat):
                w.writerow([loc] + ["" if np.isnan(v) else repr(float(v)) for v in vals])
        paths.append(path)
    return actual, predicted, paths


# --- gradient check --------------------------------------------------------

# tiny models keep the extended-precision finite differences fast
GRADCHECK_SHAPES = {
    "no_middle": dict(kw=dict(hidden=3), mask=(1, 1, 1, 1)),
    "bdlstm_middle": dict(kw=dict(hidden=3, n_middle=1, merge="sum"), mask=(1, 1, 1, 1)),
    "lstm_middle": dict(kw=dict(hidden=3, n_middle=1, middle_kind=LSTM, merge="average"), mask=(1, 1, 1, 1)),
    "projection": dict(kw=dict(hidden=3, last_hidden=2), mask=(1, 1, 1, 1)),
    "masked_steps": dict(kw=dict(hidden=3), mask=(1, 0, 0, 1)),
    "multiply_merge": dict(kw=dict(hidden=3, merge="multiply"), mask=(1, 0, 1, 1)),
}
GRADCHECK_P, GRADCHECK_N = 3, 4


def gradcheck_case(shape, seed):
    case = GRADCHECK_SHAPES[shape]
    rng = np.random.default_rng(seed)
    model = build_model(ModelSpec.sbu(GRADCHECK_P, GRADCHECK_N, GRADCHECK_P, seed=seed, **case["kw"]))
    mask = np.array([case["mask"]], dtype=bool)
    seq = SeqInput(rng.normal(size=(1, GRADCHECK_N, GRADCHECK_P)), mask)
    return gradient_check(model, seq, rng.normal(size=(1, GRADCHECK_P)), return_worst=True)


def run_gradcheck(seeds=range(20), shapes=None, tol=1e-5, config=None):
    shapes = list(GRADCHECK_SHAPES) if shapes is None else list(shapes)
    unknown = [s for s in shapes if s not in GRADCHECK_SHAPES]
    if unknown:
        raise ConfigurationError(f"unknown gradcheck shapes {unknown}; choose from {list(GRADCHECK_SHAPES)}")
    rows, lines = [], []
    for shape in shapes:
        errs = []
        for seed in seeds:
            err, where = gradcheck_case(shape, seed)
            errs.append(err)
            rows.append({"shape": shape, "seed": seed, "max_rel_error": err,
                         "worst_param": where[0] if where else "", "result": "PASS" if err < tol else "FAIL"})
        lines.append(f"{shape:16s} seeds={len(errs):3d}  max rel error {max(errs):.3e}  "
                     f"failures {sum(e >= tol for e in errs)}")
    worst = max(r["max_rel_error"] for r in rows)
    summary = {"max_rel_error": worst, "checks": len(rows), "passed": worst < tol}
    cfg = {"shapes": {s: GRADCHECK_SHAPES[s] for s in shapes}, "seeds": list(seeds), "tolerance": tol,
           "epsilon": 1e-6, "locations": GRADCHECK_P, "time_lags": GRADCHECK_N}
    cfg = json.loads(json.dumps(cfg))
    if config is not None:
        cfg["experiment"] = config
    return Report("gradcheck", ["shape", "seed", "max_rel_error", "worst_param", "result"], rows, cfg,
                  "\n".join(lines), summary)
