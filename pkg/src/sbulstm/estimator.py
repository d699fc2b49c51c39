"""scikit-learn style wrappers around the model and the window scaler.

Windows are ``(n_samples, n_steps, n_features)`` float arrays; a step whose
features are all NaN is a missing (masked) step. Targets are
``(n_samples, n_outputs)``.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import DatasetSplit, NormStats, SampleSet
from .layers import SeqInput
from .model import LayerSpec, ModelSpec, build_model
from .training import TrainConfig, predict_batched, train


def check_windows(X):
    """Validate a 3-D window batch and return ``(X, mask)``."""
    X = check_array(X, allow_nd=True, ensure_all_finite="allow-nan", dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n_samples, n_steps, n_features), got {X.shape}")
    nan = np.isnan(X)
    mask = ~nan.all(axis=-1)
    partial = nan.any(axis=-1) & mask
    if partial.any():
        s, t = np.argwhere(partial)[0]
        raise ValueError(
            f"sample {s}, step {t} is partially missing; complete it (e.g. with "
            "sbulstm.data.window, which carries last observations forward) or mask the whole step"
        )
    return X, mask


def _check_targets(y, n_samples):
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != n_samples:
        raise ValueError(f"X has {n_samples} samples but y has {y.shape[0]}")
    return y


class WindowScaler(TransformerMixin, BaseEstimator):
    """Per-column min-max or z-score scaling of window batches (NaN-aware)."""

    def __init__(self, scheme="minmax", channels=1, feature_range=(0.0, 1.0)):
        self.scheme = scheme
        self.channels = channels
        self.feature_range = feature_range

    def fit(self, X, y=None):
        X, _ = check_windows(X)
        self.stats_ = NormStats.fit(X, self.scheme, self.channels, self.feature_range)
        self.n_features_in_ = X.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X, _ = check_windows(X)
        return self.stats_.transform(X)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return self.stats_.inverse_transform(np.asarray(X, dtype=np.float64))

    def transform_target(self, y):
        check_is_fitted(self, "stats_")
        return self.stats_.transform_target(np.asarray(y, dtype=np.float64))

    def inverse_transform_target(self, y):
        check_is_fitted(self, "stats_")
        return self.stats_.denormalize(np.asarray(y, dtype=np.float64))


class SBULSTMRegressor(RegressorMixin, BaseEstimator):
    """Stacked bidirectional/unidirectional LSTM regressor.

    Parameters mirror :class:`ModelSpec` and :class:`TrainConfig`. ``hidden=None``
    uses the number of outputs; ``last_hidden=None`` uses ``hidden``. If
    ``fit`` gets no ``validation_data``, ``validation_fraction`` of the
    training windows is held out for early stopping.
    """

    def __init__(self, hidden=None, n_middle=0, middle_kind="BDLSTM", last_hidden=None,
                 merge="concat", family="SBU", use_mask=True, dense_head=False,
                 learning_rate=1e-3, rho=0.9, epsilon=1e-8, batch_size=64, max_epochs=200,
                 patience=5, validation_fraction=0.2, random_state=0):
        self.hidden = hidden
        self.n_middle = n_middle
        self.middle_kind = middle_kind
        self.last_hidden = last_hidden
        self.merge = merge
        self.family = family
        self.use_mask = use_mask
        self.dense_head = dense_head
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_spec(self, n_steps, n_features, n_outputs):
        hidden = n_outputs if self.hidden is None else self.hidden
        if self.family == "SBU":
            return ModelSpec.sbu(n_features, n_steps, n_outputs, hidden=hidden,
                                 n_middle=self.n_middle, middle_kind=self.middle_kind,
                                 last_hidden=self.last_hidden, merge=self.merge,
                                 seed=self.random_state, use_mask=self.use_mask,
                                 dense_head=self.dense_head)
        sizes = [hidden] * self.n_middle + [hidden if self.last_hidden is None else self.last_hidden]
        layers = tuple(LayerSpec(self.family, h, self.merge) for h in sizes)
        return ModelSpec(n_features, n_steps, layers, n_outputs, self.random_state,
                         self.use_mask, self.family, self.dense_head)

    def _train_config(self):
        return TrainConfig(self.batch_size, self.learning_rate, self.rho, self.epsilon,
                           self.max_epochs, self.patience, self.random_state)

    def fit(self, X, y, validation_data=None):
        X, mask = check_windows(X)
        y = _check_targets(y, X.shape[0])
        samples = SampleSet(X, mask, y, np.arange(X.shape[0]))
        if validation_data is not None:
            Xv, mv = check_windows(validation_data[0])
            yv = _check_targets(validation_data[1], Xv.shape[0])
            val = SampleSet(Xv, mv, yv, np.arange(Xv.shape[0]))
            tr = samples
        elif self.validation_fraction and X.shape[0] >= 2:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
            order = np.random.default_rng(self.random_state).permutation(X.shape[0])
            k = min(max(1, int(self.validation_fraction * X.shape[0])), X.shape[0] - 1)
            tr, val = samples[np.sort(order[k:])], samples[np.sort(order[:k])]
        else:
            tr, val = samples, samples[np.arange(0)]
        self.spec_ = self._model_spec(X.shape[1], X.shape[2], y.shape[1])
        self.model_, self.history_ = train(build_model(self.spec_), DatasetSplit(tr, val, val),
                                           self._train_config())
        self.n_features_in_ = X.shape[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X, mask = check_windows(X)
        if X.shape[2] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[2]} features, model was fitted with {self.n_features_in_}")
        samples = SampleSet(X, mask, np.zeros((X.shape[0], self.spec_.output_width)),
                            np.arange(X.shape[0]))
        return predict_batched(self.model_, samples)

    def forward(self, X):
        """Single-batch forward returning the raw model output (no validation)."""
        check_is_fitted(self, "model_")
        return self.model_.predict(SeqInput.from_array(X))
