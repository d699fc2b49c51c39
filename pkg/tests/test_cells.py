import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from sbulstm.cells import LstmCellParams, LstmState, RnnCellParams, lstm_step, lstm_step_backward, rnn_step
from sbulstm.exceptions import ShapeError


def scalar_cell(w=1.0):
    p = LstmCellParams.zeros(1, 1)
    for name, arr in p.items():
        if not name.startswith("b_"):
            arr[...] = w
    return p


def mp_scalar_oracle():
    # the standard LSTM step evaluated at 50 digits with W = U = 1, b = 0, x = 1, h = C = 0
    mpmath.mp.dps = 50
    s = 1 / (1 + mpmath.e ** -1)
    ct = mpmath.tanh(1)
    C = s * 0 + s * ct
    return float(s), float(ct), float(C), float(s * mpmath.tanh(C))


def test_rnn_step_examples():
    p = RnnCellParams(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros(2))
    assert rnn_step(p, np.ones(3), np.ones(2)).tolist() == [0, 0]
    p = RnnCellParams(np.eye(1), np.zeros((1, 1)), np.zeros(1))
    assert rnn_step(p, np.array([0.3]), np.zeros(1), act="identity").tolist() == [0.3]
    p = RnnCellParams(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))
    assert abs(rnn_step(p, np.array([1.0]), np.array([0.5]))[0] - 0.9051482536448664) < 1e-12


def test_rnn_step_errors():
    p = RnnCellParams(np.ones((1, 2)), np.ones((1, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        rnn_step(p, np.ones(3), np.zeros(1))
    with pytest.raises(ValueError, match="activation"):
        rnn_step(p, np.ones(2), np.zeros(1), act="relu")


def test_lstm_zero_params():
    state, cache = lstm_step(LstmCellParams.zeros(3, 2), np.ones(3), LstmState.zeros(2))
    assert state.h.tolist() == [0, 0] and state.C.tolist() == [0, 0]
    assert np.all(cache.f_t == 0.5) and np.all(cache.Ctilde_t == 0)


def test_lstm_scalar_matches_oracle():
    f, ct, C, h = mp_scalar_oracle()
    state, cache = lstm_step(scalar_cell(), np.array([1.0]), LstmState.zeros(1))
    for got in (cache.f_t, cache.i_t, cache.o_t):
        assert abs(got[0] - f) < 1e-7
    assert abs(cache.Ctilde_t[0] - ct) < 1e-7
    assert abs(state.C[0] - C) < 1e-7
    assert abs(state.h[0] - h) < 1e-7


def test_forget_saturation_preserves_memory():
    p = LstmCellParams.zeros(2, 3)
    p.b_f[:] = 50
    p.b_i[:] = -50
    prev = LstmState(np.zeros(3), np.array([0.3, -1.2, 2.0]))
    state, _ = lstm_step(p, np.array([0.7, -0.1]), prev)
    np.testing.assert_allclose(state.C, prev.C, rtol=0, atol=1e-10)


def test_forget_saturation_only_bf():
    p = LstmCellParams.zeros(1, 1)
    p.b_f[:] = 50
    state, _ = lstm_step(p, np.array([0.0]), LstmState(np.zeros(1), np.array([0.8])))
    assert abs(state.C[0] - 0.8) < 1e-12


def test_lstm_shape_errors():
    p = LstmCellParams.zeros(2, 3)
    with pytest.raises(ShapeError):
        lstm_step(p, np.ones(4), LstmState.zeros(3))
    with pytest.raises(ShapeError):
        lstm_step(p, np.ones(2), LstmState.zeros(2))
    with pytest.raises(ShapeError):
        LstmCellParams(**{**dict(p.items()), "U_o": np.zeros((3, 2))})


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 5))
def test_gate_ranges(seed, hidden, n_in):
    rng = np.random.default_rng(seed)
    # pre-activations stay below ~15 so float64 does not round the gates to 0 or 1
    p = LstmCellParams.random(n_in, hidden, rng, scale=1.0)
    prev = LstmState(rng.uniform(-1, 1, hidden), rng.uniform(-10, 10, hidden))
    state, c = lstm_step(p, rng.uniform(-1, 1, n_in), prev)
    for g in (c.f_t, c.i_t, c.o_t):
        assert np.all((g > 0) & (g < 1))
    assert np.all(np.abs(c.Ctilde_t) < 1) and np.all(np.abs(state.h) < 1)


def test_backward_zero_upstream(rng):
    p = LstmCellParams.random(3, 4, rng)
    _, cache = lstm_step(p, rng.normal(size=3), LstmState(rng.normal(size=4), rng.normal(size=4)))
    g, dx, dh, dC = lstm_step_backward(p, cache, np.zeros(4), np.zeros(4))
    assert all(not v.any() for _, v in g.items())
    assert not dx.any() and not dh.any() and not dC.any()


def _fd_cell(p, x, h0, C0, dh, dC, dtype=np.longdouble):
    """Central differences of L = dh.h_t + dC.C_t w.r.t. params and inputs, in extended precision."""
    lp = LstmCellParams(**{k: v.astype(dtype) for k, v in p.items()})
    xs, hs, Cs = x.astype(dtype), h0.astype(dtype), C0.astype(dtype)

    def loss():
        s, _ = lstm_step(lp, xs, LstmState(hs, Cs))
        return np.sum(dh * s.h) + np.sum(dC * s.C)

    num = {k: central_diff(loss, v) for k, v in lp.items()}
    num["x"] = central_diff(loss, xs)
    num["h"] = central_diff(loss, hs)
    num["C"] = central_diff(loss, Cs)
    return num


def test_backward_scalar_absolute():
    p = scalar_cell()
    x, h0, C0 = np.array([1.0]), np.zeros(1), np.zeros(1)
    _, cache = lstm_step(p, x, LstmState(h0, C0))
    g, dx, dh, dC = lstm_step_backward(p, cache, np.ones(1), np.zeros(1))
    num = _fd_cell(p, x, h0, C0, np.ones(1), np.zeros(1), dtype=np.float64)
    for k, v in g.items():
        np.testing.assert_allclose(v, num[k], rtol=0, atol=1e-7)
    np.testing.assert_allclose(dx, num["x"], rtol=0, atol=1e-7)
    np.testing.assert_allclose(dh, num["h"], rtol=0, atol=1e-7)
    np.testing.assert_allclose(dC, num["C"], rtol=0, atol=1e-7)


@pytest.mark.parametrize("seed", range(100))
def test_backward_random_cell(seed):
    rng = np.random.default_rng(seed)
    p = LstmCellParams.random(3, 3, rng)
    x, h0, C0 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    up_h, up_C = rng.normal(size=3), rng.normal(size=3)
    _, cache = lstm_step(p, x, LstmState(h0, C0))
    g, dx, dh, dC = lstm_step_backward(p, cache, up_h, up_C)
    num = _fd_cell(p, x, h0, C0, up_h, up_C)
    worst = max(rel_err(v, num[k]) for k, v in g.items())
    worst = max(worst, rel_err(dx, num["x"]), rel_err(dh, num["h"]), rel_err(dC, num["C"]))
    assert worst < 1e-5


def test_backward_batch_sums(rng):
    p = LstmCellParams.random(2, 3, rng)
    X, H, C = rng.normal(size=(4, 2)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    dH, dCC = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    _, cache = lstm_step(p, X, LstmState(H, C))
    g, dx, _, _ = lstm_step_backward(p, cache, dH, dCC)
    total = p.zeros_like()
    for b in range(4):
        _, cb = lstm_step(p, X[b], LstmState(H[b], C[b]))
        gb, dxb, _, _ = lstm_step_backward(p, cb, dH[b], dCC[b])
        total.add_(gb)
        np.testing.assert_allclose(dx[b], dxb, atol=1e-14)
    for k, v in g.items():
        np.testing.assert_allclose(v, getattr(total, k), atol=1e-13)


def test_step_deterministic(rng):
    p = LstmCellParams.random(3, 2, rng)
    x, prev = rng.normal(size=3), LstmState(rng.normal(size=2), rng.normal(size=2))
    a, ca = lstm_step(p, x, prev)
    b, cb = lstm_step(p, x, prev)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.C, b.C)
    ga = lstm_step_backward(p, ca, np.ones(2), np.ones(2))
    gb = lstm_step_backward(p, cb, np.ones(2), np.ones(2))
    assert all(np.array_equal(v, getattr(gb[0], k)) for k, v in ga[0].items())
