"""Mini-batch RMSProp training with early stopping, plus a finite-difference gradient check."""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ShapeError, TrainingDivergedError
from .layers import SeqInput
from .model import Model, model_backward, model_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in (0, 1), got {self.rho}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")


@dataclass
class RmsPropState:
    """Running mean of squared gradients, one array per parameter."""

    sq: dict

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def __len__(self):
        return len(self.train_mse)

    @property
    def best_val_mse(self):
        return self.val_mse[self.best_epoch] if self.val_mse else float("nan")

    def to_csv(self, path, include_timing=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"] + (["seconds"] if include_timing else []))
            for e in range(len(self)):
                row = [e + 1, repr(self.train_mse[e]), repr(self.val_mse[e])]
                if include_timing:
                    row.append(f"{self.seconds[e]:.3f}")
                w.writerow(row)


def mse_loss(pred, target):
    """Mean squared error over all entries, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    # overflow shows up as a non-finite loss, which train() reports
    with np.errstate(over="ignore", invalid="ignore"):
        diff = pred - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def rmsprop_update(params, grads, state, cfg):
    """In-place RMSProp step over every parameter. Returns ``(params, state)``."""
    rho, lr, eps = cfg.rho, cfg.learning_rate, cfg.epsilon
    for name, theta in params.items():
        g = grads[name]
        s = state.sq[name]
        if g.shape != theta.shape or s.shape != theta.shape:
            raise ShapeError(f"{name}: parameter {theta.shape}, gradient {g.shape}, state {s.shape}")
        s *= rho
        s += (1.0 - rho) * g * g
        theta -= lr * g / (np.sqrt(s) + eps)
    return params, state


def predict_batched(model, samples, batch_size=1024):
    out = []
    for start in range(0, len(samples), batch_size):
        idx = np.arange(start, min(start + batch_size, len(samples)))
        pred, _ = model_forward(model, samples.seq(idx))
        out.append(pred)
    if not out:
        return np.zeros((0, model.spec.output_width))
    return np.concatenate(out)


def evaluate_mse(model, samples):
    return mse_loss(predict_batched(model, samples), samples.y)[0]


def _diverged(what, epoch, cfg):
    return TrainingDivergedError(
        f"non-finite {what} at epoch {epoch}; training diverged "
        f"(learning_rate={cfg.learning_rate} is likely too large, try 10x smaller)"
    )


def train(model, splits, cfg):
    """Train a copy of ``model``; return ``(best_model, TrainHistory)``.

    Each epoch optionally reshuffles the training set (seeded), takes one
    RMSProp step per mini-batch on the batch-mean gradient, then scores the
    validation split. Training stops once validation MSE has not improved for
    ``cfg.patience`` epochs, and the parameters of the best validation epoch
    are returned. Without a validation split, training MSE is monitored.
    """
    train_set, val_set = splits.train, splits.validation
    if len(train_set) == 0:
        raise ConfigurationError("training split is empty")
    model = model.copy()
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    state = RmsPropState.zeros_like(model.params)
    best_params, best_val, wait = None, np.inf, 0
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle_each_epoch else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = model_forward(model, train_set.seq(idx))
            loss, grad = mse_loss(pred, train_set.y[idx])
            if not np.isfinite(loss):
                raise _diverged("training loss", epoch + 1, cfg)
            grads = model_backward(model, cache, grad)
            rmsprop_update(model.params, grads, state, cfg)
            model.version += 1
            total += loss * len(idx)
        train_mse = total / n
        val_mse = evaluate_mse(model, val_set) if len(val_set) else train_mse
        if not np.isfinite(val_mse):
            raise _diverged("validation loss", epoch + 1, cfg)
        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)
        history.seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d train_mse=%.6g val_mse=%.6g", epoch + 1, train_mse, val_mse)

        if val_mse < best_val:
            best_val, wait = val_mse, 0
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            wait += 1
            if wait >= cfg.patience:
                history.stopped_early = True
                break

    model.params = best_params
    model.version += 1
    model.meta.update(epoch=history.best_epoch + 1, val_mse=best_val)
    return model, history


def gradient_check(model, seq, target, epsilon=1e-6, extended=True, return_worst=False):
    """Max relative error between backprop and central differences.

    Every parameter is perturbed by ``+-epsilon`` and the two losses are
    differenced; the relative error uses ``max(|a|, |b|, 1e-8)`` as
    denominator. With ``extended`` the perturbed losses are evaluated in
    ``np.longdouble`` so that rounding noise in the difference (about 1e-10 in
    float64) does not swamp small gradient entries.
    """
    if seq.batch != 1:
        raise ShapeError("gradient_check expects a single sample")
    target = np.asarray(target, dtype=np.float64).reshape(1, -1)
    pred, cache = model_forward(model, seq)
    _, dpred = mse_loss(pred, target)
    analytic = model_backward(model, cache, dpred)

    dt = np.longdouble if extended else np.float64
    probe = Model(model.spec, {k: v.astype(dt) for k, v in model.params.items()})
    pseq = SeqInput(seq.values.astype(dt), seq.mask)
    ptarget = target.astype(dt)
    eps = dt(epsilon)

    def loss():
        p, _ = model_forward(probe, pseq)
        d = p - ptarget
        return np.mean(d * d)

    worst, where = 0.0, None
    for name, arr in probe.params.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            lp = loss()
            arr[idx] = orig - eps
            lm = loss()
            arr[idx] = orig
            numeric = float((lp - lm) / (2 * eps))
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst, where = err, (name, idx, a, numeric)
    return (worst, where) if return_worst else worst
