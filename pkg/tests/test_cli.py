import csv
import json

import pytest

from qosched.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, aggregate, main, run_stem

SMALL = """\
n_ue: 9
sim_ttis: 120
explore_ttis: 60
hidden_layers: [16, 16]
candidates: 10
scheduler: PF
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def test_run_writes_outputs(cfg, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--seed", "3", "--out", str(out)]) == EXIT_OK
    assert (out / "PF_seed3.csv").is_file() and (out / "PF_seed3.json").is_file()
    first = (out / "PF_seed3.csv").read_bytes(), (out / "PF_seed3.json").read_bytes()
    assert main(["run", "--config", cfg, "--seed", "3", "--out", str(out)]) == EXIT_OK
    assert ((out / "PF_seed3.csv").read_bytes(), (out / "PF_seed3.json").read_bytes()) == first


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["run", "--config", str(missing)]) == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_bad_config_value(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("mobile_fraction: 1.5\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == EXIT_USAGE


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["run", "--seed", "notanint"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_scheduler_flag(cfg, tmp_path):
    assert main(["run", "--config", cfg, "--scheduler", "CQA", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "CQA_seed0.json").read_text())["scheduler"] == "CQA"
    assert main(["run", "--config", cfg, "--scheduler", "XYZ", "--out", str(tmp_path)]) == EXIT_USAGE


def test_sweep_shape_and_repeatability(cfg, tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--config", cfg, "--axis", "n_ue", "--values", "6", "9", "--seeds", "0", "1",
            "--scheduler", "PF", "--out", str(out)]
    assert main(args) == EXIT_OK
    rows = list(csv.DictReader((out / "aggregate.csv").open()))
    assert len(rows) == 2 * 3  # one row per (value, class)
    assert {r["value"] for r in rows} == {"6", "9"}
    assert all(r["n_seeds"] == "2" for r in rows)
    for v in (6, 9):
        for s in (0, 1):
            assert (out / f"{run_stem('PF', s, 'n_ue', v)}.csv").is_file()
    before = (out / "aggregate.csv").read_bytes()
    assert main(args) == EXIT_OK
    assert (out / "aggregate.csv").read_bytes() == before
    # the aggregate is a pure function of the per-run CSV files
    again = aggregate(out, "n_ue", [6, 9], [0, 1], ["PF"])
    assert [r["mean_delivery_ratio"] for r in again] == [float(r["mean_delivery_ratio"]) for r in rows]


def test_sweep_rejects_duplicate_seeds(cfg, tmp_path):
    assert main(["sweep", "--config", cfg, "--values", "6", "--seeds", "1", "1",
                 "--out", str(tmp_path)]) == EXIT_USAGE


def test_sweep_records_partial_failure(cfg, tmp_path, monkeypatch):
    from qosched import engine

    real_run = engine.Simulation.run

    def flaky(self):
        if self.cfg.n_ue == 9:
            raise RuntimeError("injected")
        return real_run(self)

    monkeypatch.setattr(engine.Simulation, "run", flaky)
    out = tmp_path / "sw"
    code = main(["sweep", "--config", cfg, "--values", "6", "9", "--seeds", "0",
                 "--scheduler", "PF", "--out", str(out), "--ttis", "50"])
    assert code == EXIT_RUNTIME
    failures = json.loads((out / "failures.json").read_text())
    assert list(failures) == [run_stem("PF", 0, "n_ue", 9)]
    rows = list(csv.DictReader((out / "aggregate.csv").open()))
    assert {r["value"] for r in rows if r["n_seeds"] != "0"} == {"6"}
    assert [r["failed_seeds"] for r in rows if r["value"] == "9"] == ["0"]


def test_train_then_eval(cfg, tmp_path):
    out = str(tmp_path / "t")
    assert main(["train", "--config", cfg, "--scheduler", "DA2C", "--out", out]) == EXIT_OK
    assert (tmp_path / "t" / "DA2C_seed0.ckpt").is_file()
    trace = list(csv.DictReader((tmp_path / "t" / "DA2C_seed0_reward.csv").open()))
    assert len(trace) == 120
    assert main(["eval", "--config", cfg, "--scheduler", "DA2C", "--out", out]) == EXIT_OK
    summary = json.loads((tmp_path / "t" / "DA2C_seed0_eval.json").read_text())
    assert summary["learning"]["updates"] == 0 and summary["learning"]["final_epsilon"] == 0.0


def test_eval_rejects_missing_or_mismatched_checkpoint(cfg, tmp_path):
    out = str(tmp_path / "t")
    assert main(["eval", "--config", cfg, "--scheduler", "DA2C", "--out", out]) == EXIT_USAGE
    assert main(["train", "--config", cfg, "--scheduler", "DA2C", "--out", out, "--ttis", "20"]) == EXIT_OK
    ckpt = str(tmp_path / "t" / "DA2C_seed0.ckpt")
    other = tmp_path / "wide.yaml"
    other.write_text(SMALL.replace("[16, 16]", "[8]"))
    assert main(["eval", "--config", str(other), "--scheduler", "DA2C", "--out", out,
                 "--checkpoint", ckpt]) == EXIT_USAGE
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--config", cfg, "--scheduler", "DA2C", "--out", out,
                 "--checkpoint", str(junk)]) == EXIT_USAGE


def test_train_requires_learning_scheduler(cfg, tmp_path):
    assert main(["train", "--config", cfg, "--scheduler", "PF", "--out", str(tmp_path)]) == EXIT_USAGE


def test_runtime_failure_exit_code(cfg, tmp_path, monkeypatch):
    from qosched import engine

    def boom(self):
        raise RuntimeError("injected")

    monkeypatch.setattr(engine.Simulation, "run", boom)
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_RUNTIME
