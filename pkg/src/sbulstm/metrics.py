"""MAE / MAPE, the persistence baseline and evaluation reports."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .exceptions import PredictionUndefinedError, ShapeError, UndefinedMetricError


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.shape != p.shape:
        raise ShapeError(f"actual has {a.size} values, predicted has {p.size}")
    if a.size == 0:
        raise UndefinedMetricError("metric of an empty sequence is undefined")
    return a, p


def mae(actual, predicted):
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def mape(actual, predicted, return_excluded=False):
    """Mean absolute percentage error; pairs with a zero actual are excluded."""
    a, p = _pair(actual, predicted)
    keep = a != 0
    excluded = int(a.size - keep.sum())
    if not keep.any():
        raise UndefinedMetricError("MAPE undefined: every actual value is zero")
    value = float(100.0 / keep.sum() * np.sum(np.abs((a[keep] - p[keep]) / a[keep])))
    return (value, excluded) if return_excluded else value


def persistence_baseline(X, mask=None, channels=1):
    """Repeat the most recent observed speed vector of each window.

    ``X`` is one window ``(n, P*F)`` or a batch ``(N, n, P*F)``; masked steps are
    all-NaN rows unless ``mask`` is given.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
        mask = None if mask is None else np.asarray(mask)[None]
    if mask is None:
        mask = ~np.all(np.isnan(X), axis=-1)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise PredictionUndefinedError("window has no observed step to persist")
    n = X.shape[1]
    last = n - 1 - np.argmax(mask[:, ::-1], axis=1)
    out = X[np.arange(X.shape[0]), last][:, ::channels]
    return out[0] if single else out


@dataclass
class EvalReport:
    mae: float
    mape: float
    per_location_mae: np.ndarray
    n_samples: int
    mape_excluded: int = 0
    mae_std: float = None
    label: str = ""

    FIELDS = ("label", "mae", "mape", "mae_std", "n_samples", "mape_excluded")

    def row(self):
        return {
            "label": self.label,
            "mae": self.mae,
            "mape": self.mape,
            "mae_std": "" if self.mae_std is None else self.mae_std,
            "n_samples": self.n_samples,
            "mape_excluded": self.mape_excluded,
        }

    def to_csv_row(self, header=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.FIELDS)
        w.writerow([_fmt(self.row()[k]) for k in self.FIELDS])
        return buf.getvalue()

    def to_text(self):
        std = "" if self.mae_std is None else f"  STD {self.mae_std:.3f}"
        name = f"{self.label}: " if self.label else ""
        return (f"{name}MAE {self.mae:.3f}  MAPE {self.mape:.3f}%{std}  "
                f"(n={self.n_samples}, mape_excluded={self.mape_excluded})")


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def evaluate(actual, predicted, label=""):
    """Score ``(N, P)`` predictions against actuals over every scalar residual."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape or actual.ndim != 2:
        raise ShapeError(f"expected matching (N, P) arrays, got {actual.shape} and {predicted.shape}")
    m = mae(actual, predicted)
    mp, excluded = mape(actual, predicted, return_excluded=True)
    per_loc = np.mean(np.abs(actual - predicted), axis=0)
    return EvalReport(m, mp, per_loc, actual.shape[0], excluded, label=label)


def aggregate(reports, label=""):
    """Mean of repeated runs; ``mae_std`` is the population std of their MAEs."""
    if not reports:
        raise UndefinedMetricError("no reports to aggregate")
    maes = np.array([r.mae for r in reports])
    return EvalReport(
        float(maes.mean()),
        float(np.mean([r.mape for r in reports])),
        np.mean([r.per_location_mae for r in reports], axis=0),
        int(sum(r.n_samples for r in reports)),
        int(sum(r.mape_excluded for r in reports)),
        float(maes.std()),
        label,
    )
