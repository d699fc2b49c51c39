"""Single-timestep RNN and LSTM cells with hand-derived backward passes.

All functions accept either one vector per argument or a batch (leading axis);
the parameter gradients returned by :func:`lstm_step_backward` are summed over
the batch.
"""

from dataclasses import dataclass, fields

import numpy as np

from .exceptions import ShapeError
from .linalg import check_shape, hadamard, matvec, sigmoid, tanh_vec

GATES = ("f", "i", "o", "C")


@dataclass
class RnnCellParams:
    W_xh: np.ndarray
    W_hh: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden = self.b_h.shape[0]
        check_shape(self.W_hh, (hidden, hidden), "W_hh")
        if self.W_xh.ndim != 2 or self.W_xh.shape[0] != hidden:
            raise ShapeError(f"W_xh: expected {hidden} rows, got shape {self.W_xh.shape}")


@dataclass
class LstmCellParams:
    """Weights of one LSTM cell.

    ``W_*`` map the step input (hidden x input), ``U_*`` map the previous
    output (hidden x hidden), ``b_*`` are the biases. The same dataclass
    holds parameter gradients.
    """

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_C: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_o: np.ndarray
    U_C: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_C: np.ndarray

    def __post_init__(self):
        hidden, n_in = self.W_f.shape
        for g in GATES:
            check_shape(getattr(self, "W_" + g), (hidden, n_in), "W_" + g)
            check_shape(getattr(self, "U_" + g), (hidden, hidden), "U_" + g)
            check_shape(getattr(self, "b_" + g), (hidden,), "b_" + g)

    @property
    def hidden_size(self):
        return self.W_f.shape[0]

    @property
    def input_size(self):
        return self.W_f.shape[1]

    @classmethod
    def zeros(cls, input_size, hidden_size):
        kw = {}
        for g in GATES:
            kw["W_" + g] = np.zeros((hidden_size, input_size))
            kw["U_" + g] = np.zeros((hidden_size, hidden_size))
            kw["b_" + g] = np.zeros(hidden_size)
        return cls(**kw)

    @classmethod
    def random(cls, input_size, hidden_size, rng, scale=0.5):
        kw = {}
        for g in GATES:
            kw["W_" + g] = rng.uniform(-scale, scale, (hidden_size, input_size))
            kw["U_" + g] = rng.uniform(-scale, scale, (hidden_size, hidden_size))
            kw["b_" + g] = rng.uniform(-scale, scale, hidden_size)
        return cls(**kw)

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.items()})

    def add_(self, other):
        for k, v in self.items():
            v += getattr(other, k)
        return self


@dataclass
class LstmState:
    h: np.ndarray
    C: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, batch=None, dtype=np.float64):
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))


@dataclass
class StepCache:
    x_t: np.ndarray
    h_prev: np.ndarray
    C_prev: np.ndarray
    f_t: np.ndarray
    i_t: np.ndarray
    o_t: np.ndarray
    Ctilde_t: np.ndarray
    C_t: np.ndarray
    tanh_C_t: np.ndarray


def _identity(v):
    return v


RNN_ACTIVATIONS = {"tanh": tanh_vec, "sigmoid": sigmoid, "identity": _identity}


def rnn_step(params, x_t, h_prev, act="tanh"):
    """Plain recurrent update ``act(W_xh x + W_hh h_prev + b_h)``."""
    try:
        fn = RNN_ACTIVATIONS[act]
    except KeyError:
        raise ValueError(f"unknown activation {act!r}; choose from {sorted(RNN_ACTIVATIONS)}")
    return fn(matvec(params.W_xh, x_t) + matvec(params.W_hh, h_prev) + params.b_h)


def _gate(params, g, x_t, h_prev):
    return (
        matvec(getattr(params, "W_" + g), x_t)
        + matvec(getattr(params, "U_" + g), h_prev)
        + getattr(params, "b_" + g)
    )


def lstm_step(params, x_t, prev):
    """Advance one LSTM step. Returns ``(LstmState, StepCache)``."""
    if prev.h.shape != prev.C.shape:
        raise ShapeError(f"state h {prev.h.shape} and C {prev.C.shape} differ")
    if prev.h.shape[-1] != params.hidden_size:
        raise ShapeError(f"state width {prev.h.shape[-1]} != hidden size {params.hidden_size}")
    if x_t.shape[:-1] != prev.h.shape[:-1]:
        raise ShapeError(f"input batch {x_t.shape} does not match state batch {prev.h.shape}")

    f_t = sigmoid(_gate(params, "f", x_t, prev.h))
    i_t = sigmoid(_gate(params, "i", x_t, prev.h))
    o_t = sigmoid(_gate(params, "o", x_t, prev.h))
    Ctilde_t = tanh_vec(_gate(params, "C", x_t, prev.h))
    C_t = hadamard(f_t, prev.C) + hadamard(i_t, Ctilde_t)
    tanh_C_t = tanh_vec(C_t)
    h_t = hadamard(o_t, tanh_C_t)
    cache = StepCache(x_t, prev.h, prev.C, f_t, i_t, o_t, Ctilde_t, C_t, tanh_C_t)
    return LstmState(h_t, C_t), cache


def _outer_sum(d, v):
    # sum over batch of outer(d[b], v[b])
    if d.ndim == 1:
        return np.outer(d, v)
    return d.T @ v


def lstm_step_backward(params, cache, dh_t, dC_t):
    """Backpropagate through one :func:`lstm_step`.

    ``dh_t`` is the loss gradient w.r.t. ``h_t``; ``dC_t`` the gradient reaching
    ``C_t`` from later steps only. Returns ``(grads, dx_t, dh_prev, dC_prev)``
    where ``grads`` is an :class:`LstmCellParams` of parameter gradients.
    """
    if dh_t.shape != cache.C_t.shape or dC_t.shape != cache.C_t.shape:
        raise ShapeError(
            f"upstream grads {dh_t.shape}/{dC_t.shape} do not match cache {cache.C_t.shape}"
        )
    f, i, o, Ct = cache.f_t, cache.i_t, cache.o_t, cache.Ctilde_t
    tC = cache.tanh_C_t

    d_o = dh_t * tC
    dC = dC_t + dh_t * o * (1.0 - tC * tC)
    pre = {
        "f": dC * cache.C_prev * f * (1.0 - f),
        "i": dC * Ct * i * (1.0 - i),
        "o": d_o * o * (1.0 - o),
        "C": dC * i * (1.0 - Ct * Ct),
    }
    dC_prev = dC * f

    kw = {}
    dx = np.zeros_like(cache.x_t)
    dh_prev = np.zeros_like(cache.h_prev)
    for g in GATES:
        da = pre[g]
        kw["W_" + g] = _outer_sum(da, cache.x_t)
        kw["U_" + g] = _outer_sum(da, cache.h_prev)
        kw["b_" + g] = da if da.ndim == 1 else da.sum(axis=0)
        dx += da @ getattr(params, "W_" + g)
        dh_prev += da @ getattr(params, "U_" + g)
    return LstmCellParams(**kw), dx, dh_prev, dC_prev
