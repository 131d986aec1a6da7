import csv

import numpy as np
import pytest

from tgtod import cli
from tgtod.cli import DataSource, ExperimentSpec, main, run_experiment, summarize, write_reports
from tgtod.model import ModelConfig
from tgtod.trainer import TrainConfig

SRC = DataSource(nodes=100, timestamps=3, outlier_rate=0.1, data_seed=1)
MCFG = ModelConfig(num_clusters=2, hidden_dim=8, random_features=8)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def spec(**kw):
    return ExperimentSpec(SRC, MCFG, TrainConfig(epochs=2, seed=1), **kw)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(repeats=0)
    with pytest.raises(ValueError):
        spec(repeats=2, seeds=(1,))
    with pytest.raises(ValueError):
        spec(sweep_param="nonsense", sweep_values=(1,))
    with pytest.raises(ValueError):
        spec(sweep_param="alpha")


def test_single_repeat_has_zero_std():
    res = run_experiment(spec())
    assert res.complete
    for row in res.summary:
        assert row["std"] == 0.0 and row["n"] == 1
        assert row["mean"] == res.per_seed[0][f"test_{row['metric']}"]


def test_identical_seeds_give_zero_std():
    res = run_experiment(spec(repeats=3, seeds=(5, 5, 5)))
    assert all(r["std"] == 0.0 for r in res.summary)


def test_summary_is_recomputable_from_per_seed_csv(tmp_path):
    res = run_experiment(spec(repeats=3, seeds=(1, 2, 3)))
    write_reports(res, tmp_path)
    per_seed = read_csv(tmp_path / "per_seed.csv")
    summary = read_csv(tmp_path / "summary.csv")
    for row in summary:
        vals = [float(r[f"test_{row['metric']}"]) for r in per_seed]
        assert float(row["mean"]) == pytest.approx(sum(vals) / 3, abs=1e-15)
        assert float(row["std"]) == pytest.approx(np.std(vals), abs=1e-15)


def test_failed_seed_marks_report_incomplete(monkeypatch):
    real = cli.train

    def flaky(g, mcfg, tcfg, split=None, prep=None):
        if tcfg.seed == 2:
            raise ValueError("boom")
        return real(g, mcfg, tcfg, split, prep)

    monkeypatch.setattr(cli, "train", flaky)
    res = run_experiment(spec(repeats=2))
    assert not res.complete
    assert [r["status"] for r in res.per_seed] == ["ok", "failed: ValueError"]
    assert all(r["complete"] == 0 and r["n"] == 1 for r in res.summary)


def test_summarize_handles_missing_metrics():
    rows = [{"param": "", "value": "", "seed": 0, "status": "ok", "best_epoch": 1,
             "test_auc": None, "test_ap": None, "test_recall_at_k": None}]
    assert all(r["mean"] is None and r["n"] == 0 for r in summarize(rows))


def test_config_file_precedence(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("# settings\nalpha = 0.3\nhidden_dim=8\nepochs=7\nrepeats=2\n")
    args = cli.make_parser().parse_args(["train", "--profile", "dgraph", "--config", str(conf),
                                         "--alpha", "0.6", "--out", "x"])
    s = cli.build_spec(args)
    assert s.model.alpha == 0.6  # flag beats file
    assert s.model.hidden_dim == 8  # file beats profile
    assert s.model.interval == 10 and s.model.num_clusters == 64  # profile beats defaults
    assert s.train.epochs == 7 and s.repeats == 2


def test_bad_config_line(tmp_path, capsys):
    conf = tmp_path / "c.txt"
    conf.write_text("alpha\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "o")]) == 2
    assert "c.txt:1" in capsys.readouterr().err


def test_complexity_command(capsys):
    assert main(["complexity", "--nodes", "9", "--timestamps", "6", "--clusters", "3", "--dt", "2"]) == 0
    out = capsys.readouterr().out
    values = [line.split("=")[1].strip() for line in out.splitlines() if line.startswith("tgtod")]
    assert values == ["48", "21"]  # M + C^2 + T^2 over timestamps, then over slots
    assert "slots=3" in out


def test_gen_train_eval_round_trip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["gen", "--nodes", "100", "--timestamps", "3", "--outlier-rate", "0.2", "--seed", "2",
                 "--out", str(data)]) == 0
    files = ["--edges", str(data / "edges.csv"), "--features", str(data / "features.csv"),
             "--labels", str(data / "labels.csv")]
    run = tmp_path / "run"
    rc = main(["train", *files, "--clusters", "2", "--hidden", "8", "--rf", "8", "--epochs", "2",
               "--seed", "3", "--out", str(run), "--clusters-out", str(tmp_path / "cl.csv")])
    assert rc == 0
    assert {p.name for p in run.iterdir()} >= {"summary.csv", "per_seed.csv", "checkpoint-seed3",
                                               "history-seed3.csv"}
    capsys.readouterr()
    assert main(["eval", *files, "--checkpoint", str(run / "checkpoint-seed3"), "--seed", "3",
                 "--out", str(tmp_path / "m.csv")]) == 0
    per_seed = read_csv(run / "per_seed.csv")[0]
    metrics = read_csv(tmp_path / "m.csv")[0]
    assert float(metrics["auc"]) == float(per_seed["test_auc"])
    # reusing the written assignment reproduces the run
    rc = main(["train", *files, "--clusters", "2", "--hidden", "8", "--rf", "8", "--epochs", "2",
               "--seed", "3", "--out", str(tmp_path / "run2"), "--clusters-in", str(tmp_path / "cl.csv")])
    assert rc == 0
    assert (tmp_path / "run2" / "summary.csv").read_bytes() == (run / "summary.csv").read_bytes()


def test_sweep_writes_plot_data(tmp_path):
    rc = main(["sweep", "--nodes", "100", "--timestamps", "3", "--outlier-rate", "0.1", "--data-seed", "1",
               "--clusters", "2", "--hidden", "8", "--rf", "8", "--epochs", "1",
               "--param", "alpha", "--values", "0.1,0.9", "--out", str(tmp_path)])
    assert rc == 0
    plot = read_csv(tmp_path / "plot.csv")
    assert [r["x"] for r in plot] == ["0.1", "0.9"]
    per_seed = read_csv(tmp_path / "per_seed.csv")
    assert [r["value"] for r in per_seed] == ["0.1", "0.9"]
