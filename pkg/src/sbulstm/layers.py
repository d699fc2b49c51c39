"""Sequence layers: masked LSTM, bidirectional LSTM with merge, dense projection.

Sequences are batched: ``values`` has shape ``(batch, steps, width)`` and
``mask`` has shape ``(batch, steps)`` with ``True`` for observed steps. A masked
step is skipped: the recurrent state is carried over it unchanged and its
output is marked missing (its stored values are zeros and never read).
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cells import LstmCellParams, LstmState, lstm_step, lstm_step_backward
from .exceptions import ShapeError
from .linalg import check_shape, matvec


class MergeMode(str, Enum):
    CONCAT = "concat"
    SUM = "sum"
    AVERAGE = "average"
    MULTIPLY = "multiply"

    def output_width(self, fwd_width, bwd_width):
        if self is MergeMode.CONCAT:
            return fwd_width + bwd_width
        if fwd_width != bwd_width:
            raise ShapeError(f"{self.value} merge needs equal widths, got {fwd_width} and {bwd_width}")
        return fwd_width


@dataclass
class SeqInput:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError(f"sequence values must be (batch, steps, width), got {self.values.shape}")
        if self.mask.shape != self.values.shape[:2]:
            raise ShapeError(f"mask {self.mask.shape} does not match values {self.values.shape}")
        self.mask = self.mask.astype(bool, copy=False)

    @classmethod
    def from_array(cls, values, mask=None):
        """Build from ``(steps, width)`` or ``(batch, steps, width)`` data.

        Without an explicit mask, a step is missing iff every entry is NaN.
        """
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if values.ndim == 2:
            values = values[None]
            if mask is not None:
                mask = np.asarray(mask)[None]
        if mask is None:
            mask = ~np.all(np.isnan(values), axis=-1)
        return cls(values, np.asarray(mask, dtype=bool))

    @property
    def batch(self):
        return self.values.shape[0]

    @property
    def steps(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    def reversed(self):
        return SeqInput(self.values[:, ::-1], self.mask[:, ::-1])


@dataclass
class BdLayerParams:
    fwd: LstmCellParams
    bwd: LstmCellParams
    merge: MergeMode = MergeMode.CONCAT

    def __post_init__(self):
        self.merge = MergeMode(self.merge)
        if self.fwd.input_size != self.bwd.input_size:
            raise ShapeError(
                f"forward/backward input sizes differ: {self.fwd.input_size} vs {self.bwd.input_size}"
            )
        self.merge.output_width(self.fwd.hidden_size, self.bwd.hidden_size)

    @property
    def output_width(self):
        return self.merge.output_width(self.fwd.hidden_size, self.bwd.hidden_size)


@dataclass
class DenseParams:
    W_hy: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        if self.W_hy.ndim != 2:
            raise ShapeError(f"W_hy must be 2-D, got {self.W_hy.shape}")
        check_shape(self.b_y, (self.W_hy.shape[0],), "b_y")


@dataclass
class LstmLayerCache:
    steps: list
    mask: np.ndarray
    input_width: int


@dataclass
class BdLayerCache:
    fwd: LstmLayerCache
    bwd: LstmLayerCache
    h_fwd: np.ndarray
    h_bwd: np.ndarray
    merge: MergeMode
    mask: np.ndarray


def lstm_layer_forward(cell, seq):
    """Run one LSTM over every step of ``seq``. Returns ``(SeqInput, cache)``."""
    if seq.width != cell.input_size:
        raise ShapeError(f"sequence width {seq.width} != cell input size {cell.input_size}")
    mask = seq.mask
    x = np.where(mask[..., None], seq.values, 0.0)
    dtype = np.result_type(x, cell.W_f)
    state = LstmState.zeros(cell.hidden_size, seq.batch, dtype)
    out = np.zeros((seq.batch, seq.steps, cell.hidden_size), dtype)
    caches = []
    for t in range(seq.steps):
        new, step_cache = lstm_step(cell, x[:, t], state)
        caches.append(step_cache)
        m = mask[:, t, None]
        if m.all():
            state = new
        else:
            state = LstmState(np.where(m, new.h, state.h), np.where(m, new.C, state.C))
        out[:, t] = np.where(m, state.h, 0.0)
    return SeqInput(out, mask.copy()), LstmLayerCache(caches, mask, seq.width)


def lstm_layer_backward(cell, cache, d_out):
    """Backpropagate per-step output gradients ``d_out`` (batch, steps, hidden).

    Returns ``(LstmCellParams grads, d_input)``.
    """
    mask = cache.mask
    n = len(cache.steps)
    if d_out.shape != (mask.shape[0], n, cell.hidden_size):
        raise ShapeError(f"upstream gradient {d_out.shape} does not match layer output")
    grads = cell.zeros_like()
    d_in = np.zeros((mask.shape[0], n, cache.input_width))
    dh_next = np.zeros((mask.shape[0], cell.hidden_size))
    dC_next = np.zeros_like(dh_next)
    for t in reversed(range(n)):
        m = mask[:, t, None]
        dh = np.where(m, d_out[:, t], 0.0) + dh_next
        if m.all():
            g, dx, dh_prev, dC_prev = lstm_step_backward(cell, cache.steps[t], dh, dC_next)
            dh_next, dC_next = dh_prev, dC_prev
        else:
            g, dx, dh_prev, dC_prev = lstm_step_backward(
                cell, cache.steps[t], np.where(m, dh, 0.0), np.where(m, dC_next, 0.0)
            )
            dh_next = np.where(m, dh_prev, dh)
            dC_next = np.where(m, dC_prev, dC_next)
        grads.add_(g)
        d_in[:, t] = dx
    return grads, d_in


def merge_step(h_fwd, h_bwd, mode):
    """Combine forward and backward outputs along the last axis."""
    mode = MergeMode(mode)
    if mode is MergeMode.CONCAT:
        if h_fwd.shape[:-1] != h_bwd.shape[:-1]:
            raise ShapeError(f"cannot concat {h_fwd.shape} and {h_bwd.shape}")
        return np.concatenate([h_fwd, h_bwd], axis=-1)
    if h_fwd.shape != h_bwd.shape:
        raise ShapeError(f"{mode.value} merge needs equal shapes, got {h_fwd.shape} and {h_bwd.shape}")
    if mode is MergeMode.SUM:
        return h_fwd + h_bwd
    if mode is MergeMode.AVERAGE:
        return (h_fwd + h_bwd) / 2.0
    return h_fwd * h_bwd


def merge_backward(d_y, h_fwd, h_bwd, mode):
    mode = MergeMode(mode)
    if mode is MergeMode.CONCAT:
        k = h_fwd.shape[-1]
        return d_y[..., :k], d_y[..., k:]
    if mode is MergeMode.SUM:
        return d_y, d_y
    if mode is MergeMode.AVERAGE:
        return d_y / 2.0, d_y / 2.0
    return d_y * h_bwd, d_y * h_fwd


def bdlstm_layer_forward(params, seq):
    """Bidirectional LSTM: forward pass, reversed pass, per-step merge."""
    out_f, cache_f = lstm_layer_forward(params.fwd, seq)
    out_b, cache_b = lstm_layer_forward(params.bwd, seq.reversed())
    h_f = out_f.values
    h_b = out_b.values[:, ::-1]
    y = merge_step(h_f, h_b, params.merge)
    y = np.where(seq.mask[..., None], y, 0.0)
    cache = BdLayerCache(cache_f, cache_b, h_f, h_b, params.merge, seq.mask)
    return SeqInput(y, seq.mask.copy()), cache


def bdlstm_layer_backward(params, cache, d_out):
    d_out = np.where(cache.mask[..., None], d_out, 0.0)
    d_f, d_b = merge_backward(d_out, cache.h_fwd, cache.h_bwd, cache.merge)
    g_f, dx_f = lstm_layer_backward(params.fwd, cache.fwd, d_f)
    g_b, dx_b = lstm_layer_backward(params.bwd, cache.bwd, np.ascontiguousarray(d_b[:, ::-1]))
    return (g_f, g_b), dx_f + dx_b[:, ::-1]


def dense_forward(params, h):
    # identity output activation
    return matvec(params.W_hy, h) + params.b_y


def dense_backward(params, h, d_y):
    """Returns ``(DenseParams grads, d_h)`` for batched or single ``h``."""
    if h.ndim == 1:
        grads = DenseParams(np.outer(d_y, h), d_y.copy())
    else:
        grads = DenseParams(d_y.T @ h, d_y.sum(axis=0))
    return grads, d_y @ params.W_hy
