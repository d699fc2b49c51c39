import csv
import json

import numpy as np
import pytest

from sbulstm import harness
from sbulstm.cli import build_parser, main, resolve_config
from sbulstm.data import load_csv

TINY = {
    "data": {"locations": 3, "timesteps": 600, "seed": 4},
    "model": {"hidden": 3},
    "train": {"max_epochs": 2, "batch_size": 32},
    "time_lags": 4,
    "repetitions": 1,
    "permutation_trials": 5,
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture
def trained(tmp_path, cfg_file):
    out = tmp_path / "train"
    assert main(["train", "--config", cfg_file, "--out-dir", str(out)]) == 0
    return out


def run(args, capsys):
    code = main(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_generate_writes_csv(tmp_path, cfg_file, capsys):
    path = tmp_path / "s.csv"
    code, out, _ = run(["generate", "--config", cfg_file, "--output", str(path), "--missing", "0.1"], capsys)
    assert code == 0 and "wrote" in out
    s = load_csv(path)
    assert s.shape == (600, 3, 1)
    assert abs((~s.observed).mean() - 0.1) < 1e-9


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"model.ckpt", "history.csv", "train.csv", "train.txt"} <= names
    rows = list(csv.reader(open(trained / "history.csv")))
    assert rows[0][:3] == ["epoch", "train_mse", "val_mse"] and len(rows) == 3


def test_reports_byte_identical_across_runs(tmp_path, cfg_file):
    # the resolved config (out_dir included) is part of the report, so rerun in place
    names = ("train.csv", "train.txt", "model.ckpt", "history.csv")
    runs = []
    for _ in range(2):
        assert main(["train", "--config", cfg_file, "--out-dir", str(tmp_path)]) == 0
        runs.append([(tmp_path / n).read_bytes() for n in names])
    assert runs[0] == runs[1]


def test_evaluate_and_predict(trained, cfg_file, tmp_path, capsys):
    ckpt = str(trained / "model.ckpt")
    code, out, _ = run(["evaluate", "--config", cfg_file, "--checkpoint", ckpt,
                        "--out-dir", str(tmp_path / "ev")], capsys)
    assert code == 0 and "persistence" in out
    pred = tmp_path / "p.csv"
    code, _, _ = run(["predict", "--config", cfg_file, "--checkpoint", ckpt, "--output", str(pred)], capsys)
    assert code == 0
    rows = list(csv.reader(open(pred)))
    assert rows[0] == ["location", "predicted_speed"] and len(rows) == 4
    assert all(np.isfinite(float(r[1])) for r in rows[1:])


def test_evaluate_test_subset_matches_train_report(trained, cfg_file, tmp_path):
    assert main(["evaluate", "--config", cfg_file, "--checkpoint", str(trained / "model.ckpt"),
                 "--out-dir", str(tmp_path / "ev")]) == 0
    train_rows = list(csv.DictReader(l for l in open(trained / "train.csv") if not l.startswith("#")))
    ev_rows = list(csv.DictReader(l for l in open(tmp_path / "ev" / "evaluate.csv") if not l.startswith("#")))
    assert float(ev_rows[0]["mae"]) == pytest.approx(float(train_rows[0]["mae"]), abs=1e-12)


def test_export_heatmap_one_day(trained, cfg_file, tmp_path, capsys):
    out = tmp_path / "hm"
    code, _, _ = run(["export-heatmap", "--config", cfg_file, "--checkpoint", str(trained / "model.ckpt"),
                      "--start-day", "0", "--end-day", "1", "--out-dir", str(out)], capsys)
    assert code == 0
    for name in ("heatmap_actual.csv", "heatmap_predicted.csv"):
        rows = list(csv.reader(open(out / name)))
        assert len(rows) == 4 and all(len(r) == 1 + 288 for r in rows)
    pred = list(csv.reader(open(out / "heatmap_predicted.csv")))
    # the first n steps have no full window behind them
    assert pred[1][1:5] == [""] * 4 and pred[1][5] != ""


def test_export_heatmap_out_of_range(trained, cfg_file, tmp_path, capsys):
    code, _, err = run(["export-heatmap", "--config", cfg_file, "--checkpoint", str(trained / "model.ckpt"),
                        "--start-day", "1", "--end-day", "5", "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "outside the series" in err


def test_gradcheck_subset(tmp_path, capsys):
    code, out, _ = run(["gradcheck", "--seeds", "2", "--shapes", "no_middle,masked_steps",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and "passed: True" in out
    assert (tmp_path / "gradcheck.csv").exists()


def test_gradcheck_impossible_tolerance_fails(tmp_path, capsys):
    code, _, err = run(["gradcheck", "--seeds", "1", "--shapes", "no_middle", "--tol", "0",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "gradcheck failed" in err


def test_sweep_layers(tmp_path, cfg_file, capsys):
    code, out, _ = run(["sweep-layers", "--config", cfg_file, "--layer-counts", "0,1",
                        "--families", "LSTM,SBU", "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and "persistence baseline" in out
    rows = list(csv.DictReader(l for l in open(tmp_path / "sweep_layers.csv") if not l.startswith("#")))
    status = {(r["family"], r["N"]): r["status"] for r in rows}
    assert status == {("LSTM", "0"): "n/a", ("LSTM", "1"): "ok", ("SBU", "0"): "ok", ("SBU", "1"): "ok"}


def test_sweep_lags_skips_long_lags(tmp_path, cfg_file, capsys):
    code, out, _ = run(["sweep-lags", "--config", cfg_file, "--lags", "3,4,1000",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and "skipped lags >= T: [1000]" in out


def test_sweep_lags_all_too_long(tmp_path, cfg_file, capsys):
    code, _, err = run(["sweep-lags", "--config", cfg_file, "--lags", "600,700", "--out-dir", str(tmp_path)],
                       capsys)
    assert code == 1 and "error" in err


def test_sweep_width(tmp_path, cfg_file, capsys):
    code, _, _ = run(["sweep-width", "--config", cfg_file, "--multipliers", "0.5,1",
                      "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(l for l in open(tmp_path / "sweep_width.csv") if not l.startswith("#")))
    assert [(r["width"], r["projection"]) for r in rows] == [("2", "True"), ("3", "False")]


def test_sweep_width_zero_is_error(tmp_path, cfg_file, capsys):
    code, _, err = run(["sweep-width", "--config", cfg_file, "--multipliers", "0,1",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "zero hidden units" in err
    assert not (tmp_path / "sweep_width.csv").exists()


def test_sweep_missing(tmp_path, cfg_file, capsys):
    code, _, _ = run(["sweep-missing", "--config", cfg_file, "--proportions", "0,0.3",
                      "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    text = (tmp_path / "sweep_missing.csv").read_text()
    assert "# accuracy_decreases=" in text and "# inversions=" in text


def test_sweep_missing_zero_row_equals_plain_evaluation(cfg_file):
    cfg = harness.ExperimentConfig.from_file(cfg_file)
    cfg.missing_proportions = (0.0,)
    rep = harness.run_sweep_missing(cfg)
    _, _, train_rep = harness.run_train(cfg)
    # same residuals, summed in a different order
    assert rep.rows[0]["mae"] == pytest.approx(train_rep.rows[0]["mae"], rel=1e-12)


def test_perm_test(tmp_path, cfg_file, capsys):
    code, out, _ = run(["perm-test", "--config", cfg_file, "--permutation", "2,0,1",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and "-> PASS" in out


def test_perm_test_identity_bit_exact(cfg_file):
    cfg = harness.ExperimentConfig.from_file(cfg_file)
    rep = harness.run_perm_test(cfg, perm=[0, 1, 2])
    assert rep.summary["mae_original"] == rep.summary["mae_permuted"]


def test_perm_test_bad_permutation(tmp_path, cfg_file, capsys):
    code, _, err = run(["perm-test", "--config", cfg_file, "--permutation", "0,0,1",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "permutation" in err


def test_csv_data_flag(tmp_path, cfg_file, capsys):
    path = tmp_path / "s.csv"
    assert main(["generate", "--config", cfg_file, "--output", str(path)]) == 0
    code, _, _ = run(["train", "--config", cfg_file, "--data", str(path), "--out-dir", str(tmp_path / "t")],
                     capsys)
    assert code == 0
    assert json.loads((tmp_path / "t" / "train.txt").read_text().splitlines()[0][len("config: "):])[
        "data"]["source"] == "csv"


def test_missing_data_file(tmp_path, capsys):
    code, _, err = run(["train", "--data", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "not found" in err


def test_bad_config_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"learning_rat": 0.1}))
    code, _, err = run(["train", "--config", str(path)], capsys)
    assert code == 1 and "unknown config keys" in err


def test_missing_checkpoint(tmp_path, cfg_file, capsys):
    code, _, err = run(["evaluate", "--config", cfg_file, "--checkpoint", str(tmp_path / "x.ckpt")], capsys)
    assert code == 1 and err.startswith("sbulstm evaluate: error:")


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code != 0


def test_flags_override_config(cfg_file):
    args = build_parser().parse_args(["train", "--config", cfg_file, "--hidden", "7", "--seed", "9",
                                      "--norm-range", "0,1", "--time-lags", "5"])
    cfg = resolve_config(args)
    assert (cfg.model.hidden, cfg.seed, cfg.norm_range, cfg.time_lags) == (7, 9, (0.0, 1.0), 5)
    assert cfg.data.locations == 3
