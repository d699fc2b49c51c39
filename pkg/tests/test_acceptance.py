"""End-to-end acceptance checks.

Each test prints one ``CRITERION k PASS|FAIL`` line (also collected into the
terminal summary) and then asserts the criterion at its stated tolerance.
The three training criteria are marked ``slow``; ``-m "not slow"`` skips them.
"""

import time

import mpmath
import numpy as np
import pytest

from conftest import ACCEPTANCE
from sbulstm.cells import LstmCellParams, LstmState, lstm_step
from sbulstm.data import SpeedSeries, SynthParams, split_shuffle, window
from sbulstm.harness import ExperimentConfig, equivariance_error, run_gradcheck, run_sweep_lags, \
    run_sweep_missing, run_train
from sbulstm.layers import BdLayerParams, SeqInput, bdlstm_layer_forward, lstm_layer_forward
from sbulstm.metrics import mae, mape
from sbulstm.model import ModelSpec, build_model, load_checkpoint, save_checkpoint


def verdict(k, ok, detail, elapsed=None, budget=None):
    in_time = budget is None or elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    timing = "" if elapsed is None else f" [{elapsed:.1f}s" + (f" / budget {budget:g}s]" if budget else "]")
    line = f"CRITERION {k}: {status}  {detail}{timing}"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line
    assert in_time, line


def seq(values, mask):
    return SeqInput(np.asarray(values, float)[None], np.asarray(mask, bool)[None])


def test_criterion_01_gradient_oracle():
    t0 = time.perf_counter()
    rep = run_gradcheck(seeds=range(20), tol=1e-5)
    shapes = {r["shape"] for r in rep.rows}
    ok = rep.summary["passed"] and len(shapes) >= 6 and rep.summary["checks"] >= 120
    verdict(1, ok, f"{rep.summary['checks']} checks over {len(shapes)} shapes, "
            f"max rel error {rep.summary['max_rel_error']:.3e} (tol 1e-5)",
            time.perf_counter() - t0, 120)


def test_criterion_02_scalar_cell():
    t0 = time.perf_counter()
    mpmath.mp.dps = 50
    s = 1 / (1 + mpmath.e ** -1)
    C = s * mpmath.tanh(1)
    h = s * mpmath.tanh(C)
    p = LstmCellParams.zeros(1, 1)
    for name, arr in p.items():
        if not name.startswith("b_"):
            arr[...] = 1.0
    out, cache = lstm_step(p, np.array([1.0]), LstmState.zeros(1))
    gates = max(abs(g[0] - float(s)) for g in (cache.f_t, cache.i_t, cache.o_t))
    err = max(gates, abs(out.C[0] - float(C)), abs(out.h[0] - float(h)))
    verdict(2, err < 1e-7, f"C_t={out.C[0]:.10f} h_t={out.h[0]:.10f} vs oracle, max error {err:.1e}",
            time.perf_counter() - t0, 1)


def test_criterion_03_mask_skip():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n, w, h = int(rng.integers(2, 12)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        mask = rng.random(n) < 0.6
        mask[rng.integers(n)] = True
        x = rng.normal(size=(n, w))
        cell = LstmCellParams.random(w, h, rng)
        out, _ = lstm_layer_forward(cell, seq(np.where(mask[:, None], x, np.nan), mask))
        ref, _ = lstm_layer_forward(cell, seq(x[mask], np.ones(mask.sum())))
        worst = max(worst, float(np.max(np.abs(out.values[0, mask] - ref.values[0]))))
        bdp = BdLayerParams(LstmCellParams.random(w, h, rng), LstmCellParams.random(w, h, rng), "concat")
        bout, _ = bdlstm_layer_forward(bdp, seq(np.where(mask[:, None], x, np.nan), mask))
        bref, _ = bdlstm_layer_forward(bdp, seq(x[mask], np.ones(mask.sum())))
        worst = max(worst, float(np.max(np.abs(bout.values[0, mask] - bref.values[0]))))
    verdict(3, worst <= 1e-12, f"100 sequences, max deviation {worst:.1e} (tol 1e-12)",
            time.perf_counter() - t0, 10)


def test_criterion_04_reversal_symmetry():
    t0 = time.perf_counter()
    worst = 0.0
    for merge in ("concat", "sum", "average", "multiply"):
        for trial in range(100):
            rng = np.random.default_rng(5000 + trial)
            n, w, h = int(rng.integers(1, 10)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
            p = BdLayerParams(LstmCellParams.random(w, h, rng), LstmCellParams.random(w, h, rng), merge)
            mask = rng.random(n) < 0.8
            x = np.where(mask[:, None], rng.normal(size=(n, w)), np.nan)
            out, _ = bdlstm_layer_forward(p, seq(x, mask))
            rev, _ = bdlstm_layer_forward(BdLayerParams(p.bwd, p.fwd, merge), seq(x[::-1], mask[::-1]))
            expect = out.values[0, ::-1]
            if merge == "concat":
                expect = np.concatenate([expect[:, h:], expect[:, :h]], axis=1)
            worst = max(worst, float(np.max(np.abs(rev.values[0] - expect))))
    verdict(4, worst <= 1e-12, f"4 merges x 100 trials, max deviation {worst:.1e} (tol 1e-12)",
            time.perf_counter() - t0, 10)


def test_criterion_05_permutation_equivariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for kw in (dict(hidden=16), dict(hidden=8, n_middle=1, last_hidden=12)):
        model = build_model(ModelSpec.sbu(16, 10, 16, seed=3, **kw))
        mask = rng.random((8, 10)) < 0.9
        mask[:, -1] = True
        s = SeqInput(np.where(mask[..., None], rng.normal(size=(8, 10, 16)), np.nan), mask)
        for _ in range(50):
            worst = max(worst, equivariance_error(model, rng.permutation(16), s))
    verdict(5, worst <= 1e-12, f"2 shapes x 50 permutations, max deviation {worst:.1e} (tol 1e-12)",
            time.perf_counter() - t0, 10)


@pytest.mark.slow
def test_criterion_06_beats_persistence():
    t0 = time.perf_counter()
    gains = []
    for seed in range(3):
        _, _, rep = run_train(ExperimentConfig(seed=seed))
        gains.append(rep.summary["relative_improvement"])
    ok = min(gains) >= 0.20
    verdict(6, ok, "relative MAE improvement over persistence per seed: "
            + ", ".join(f"{g:.1%}" for g in gains) + " (need >= 20% each)",
            time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_criterion_07_time_lag_trend():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(lags=(6, 10), repetitions=5)
    assert SynthParams(**cfg.data.synth).wave_lag > 6
    rep = run_sweep_lags(cfg)
    m6, m10 = rep.summary["mean_mae_lag_6"], rep.summary["mean_mae_lag_10"]
    verdict(7, m6 > m10, f"mean MAE n=6 {m6:.4f} vs n=10 {m10:.4f} over 5 seeds",
            time.perf_counter() - t0, 1200)


@pytest.mark.slow
def test_criterion_08_missing_trend():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(repetitions=3, missing_proportions=(0.0, 0.05, 0.10, 0.15, 0.20, 0.30))
    rep = run_sweep_missing(cfg)
    maes = [r["mae"] for r in rep.rows]
    sweep = maes[1:]
    inversions = sum(b < a for a, b in zip(sweep, sweep[1:]))
    ok = maes[-1] > maes[0] and inversions <= 1
    verdict(8, ok, "mean MAE by proportion " + " ".join(f"{m:.3f}" for m in maes)
            + f"; 30% > 0%: {maes[-1] > maes[0]}, inversions in 5-point sweep: {inversions}",
            time.perf_counter() - t0, 900)


def test_criterion_09_metrics():
    a, p = [60.0, 30.0], [58.0, 33.0]
    got_mae, got_mape = mae(a, p), mape(a, p)
    want_mape = (100 / 2) * (2 / 60 + 3 / 30)
    ok = abs(got_mae - 2.5) <= 1e-12 and abs(got_mape - want_mape) <= 1e-12 and mae(a, a) == 0 and mape(a, a) == 0
    verdict(9, ok, f"MAE {got_mae!r} (want 2.5), MAPE {got_mape!r} (want {want_mape!r})")


def test_criterion_10_determinism(tmp_path):
    def tiny():
        cfg = ExperimentConfig.from_dict({"data": {"locations": 4, "timesteps": 400, "seed": 2},
                                          "train": {"max_epochs": 3}, "time_lags": 6, "seed": 5})
        return run_train(cfg)

    (m1, _, r1), (_, _, r2) = tiny(), tiny()
    paths1, paths2 = r1.write(tmp_path / "a"), r2.write(tmp_path / "b")
    same_reports = all(open(x, "rb").read() == open(y, "rb").read() for x, y in zip(paths1, paths2))
    save_checkpoint(m1, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    rng = np.random.default_rng(10)
    mask = rng.random((100, 6)) < 0.9
    mask[:, -1] = True
    s = SeqInput(np.where(mask[..., None], rng.normal(size=(100, 6, 4)), np.nan), mask)
    same_pred = np.array_equal(back.predict(s), m1.predict(s))
    verdict(10, same_reports and same_pred,
            f"byte-identical reports: {same_reports}, round-trip predictions identical on 100 inputs: {same_pred}")


def test_criterion_11_windowing():
    t0 = time.perf_counter()
    series = SpeedSeries(np.full((105120, 1), 60.0))
    n_windows = len(window(series, 10))
    split = split_shuffle(window(SpeedSeries(np.full((110, 1), 60.0)), 10), seed=0)
    sizes = (len(split.train), len(split.validation), len(split.test))
    verdict(11, n_windows == 105110 and sizes == (70, 20, 10),
            f"T=105120 n=10 -> {n_windows} samples (want 105110); 100-sample split -> {sizes} (want (70, 20, 10))",
            time.perf_counter() - t0)
