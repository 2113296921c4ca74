import json

import pytest

from flux.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, build_parser, main
from flux.services.experiment import ExperimentService
from flux.utils import NumericalError

TINY = [
    "train_samples=4",
    "gen.frames=8",
    "gen.height=28",
    "gen.width=28",
    "gen.sprite_size=[4,8]",
    "gen.speed=[1,2]",
    "sampler.f_max=8",
    "sampler.r_min=28",
    "sampler.r_max=28",
    "sampler.pool_min=16",
    "sampler.pool_max=null",
    "model.embed_dim=16",
    "model.num_heads=2",
    "model.depth=1",
    "model.max_grid=[8,2,2]",
    "train.steps=2",
    "train.batch_size=2",
    "train.counts=[8,4]",
    "train.teacher_count=16",
    "train.groups=2",
    "eval.counts=[8,4]",
    "eval.samples=2",
    "eval.budgets=[16]",
    "tokenopt.budgets=[16,24]",
    "tokenopt.samples=2",
]


def _args(command, out, *extra):
    argv = [command, "--out", str(out), "--log-level", "WARNING"]
    for item in TINY + list(extra):
        argv += ["--set", item]
    return argv


def _summary(capsys):
    return json.loads(capsys.readouterr().out)


def test_flops_prints_report(capsys):
    assert main(["flops"]) == EXIT_OK
    report = _summary(capsys)
    assert report["n_tokens"] == 2048
    assert report["gflops"] == pytest.approx(82.7, rel=0.01)


def test_flops_accepts_several_token_counts(capsys):
    assert main(["flops", "--tokens", "512,1024", "--d-model", "768", "--heads", "12"]) == EXIT_OK
    reports = _summary(capsys)
    assert [r["n_tokens"] for r in reports] == [512, 1024]


def test_flops_writes_run_files_when_asked(tmp_path, capsys):
    assert main(["flops", "--tokens", "512,2048", "--out", str(tmp_path)]) == EXIT_OK
    printed = _summary(capsys)
    assert json.loads((tmp_path / "flops.json").read_text()) == printed
    resolved = json.loads((tmp_path / "config.resolved.json").read_text())
    assert resolved["mode"] == "flops"
    assert resolved["model"]["embed_dim"] == 384
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["summary"]["tokens"] == [512, 2048]
    assert manifest["config_hash"]


def test_flops_without_out_writes_nothing(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FLUX_RUNS_DIR", str(tmp_path / "runs"))
    assert main(["flops"]) == EXIT_OK
    assert not (tmp_path / "runs").exists()


def test_unknown_key_exits_invalid(tmp_path, capsys):
    assert main(["finetune", "--out", str(tmp_path), "--set", "train.bogus=1"]) == EXIT_INVALID
    assert "train.bogus" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


def test_bad_counts_flag_is_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["eval", "--counts", "8,x"])


def test_gen_data_is_reproducible(tmp_path, capsys):
    hashes = []
    for run in ("a", "b"):
        assert main(_args("gen-data", tmp_path / run, "seed=5")) == EXIT_OK
        summary = _summary(capsys)
        manifest = json.loads((tmp_path / run / "manifest.json").read_text())
        assert manifest["dataset_hash"] == summary["dataset_hash"]
        assert manifest["mode"] == "gen-data" and manifest["seed"] == 5
        hashes.append(summary["dataset_hash"])
        assert sum(summary["labels"]) == 4
    assert hashes[0] == hashes[1]
    assert main(_args("gen-data", tmp_path / "c", "seed=6")) == EXIT_OK
    assert _summary(capsys)["dataset_hash"] != hashes[0]


def test_finetune_then_eval_then_tokenopt(tmp_path, capsys):
    run = tmp_path / "ft"
    assert main(_args("finetune", run)) == EXIT_OK
    summary = _summary(capsys)
    assert summary["steps"] == 2 and summary["run_dir"] == str(run)
    assert (run / "metrics.csv").exists() and (run / "checkpoint" / "params.f64").exists()
    assert json.loads((run / "config.resolved.json").read_text())["train"]["steps"] == 2

    assert main(_args("eval", tmp_path / "ev", f'checkpoint="{run}"') + ["--counts", "8,4", "--to"]) == EXIT_OK
    summary = _summary(capsys)
    assert set(summary["accuracy"]) == {"4", "8"}
    assert (tmp_path / "ev" / "eval.csv").exists()
    assert (tmp_path / "ev" / "tokenopt_sweep.csv").exists()

    assert main(_args("tokenopt", tmp_path / "to", f'checkpoint="{run}"')) == EXIT_OK
    summary = _summary(capsys)
    assert summary["budgets"] == [16, 24]
    for name in ("search_16.csv", "search_24.csv", "plans.json", "pareto.csv"):
        assert (tmp_path / "to" / name).exists()


def test_checkpoint_of_another_shape_exits_invalid(tmp_path, capsys):
    run = tmp_path / "ft"
    assert main(_args("finetune", run, "train.steps=0")) == EXIT_OK
    capsys.readouterr()
    argv = _args("eval", tmp_path / "ev", f'checkpoint="{run}"', "model.embed_dim=32")
    assert main(argv) == EXIT_INVALID


def test_runtime_failures_exit_two(tmp_path, monkeypatch):
    def fail(self):
        raise NumericalError("diverged")

    monkeypatch.setattr(ExperimentService, "run", fail)
    assert main(_args("finetune", tmp_path)) == EXIT_RUNTIME

    def crash(self):
        raise RuntimeError("boom")

    monkeypatch.setattr(ExperimentService, "run", crash)
    assert main(_args("finetune", tmp_path)) == EXIT_RUNTIME


def test_default_run_directory(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FLUX_RUNS_DIR", str(tmp_path))
    assert main(["gen-data", "--log-level", "WARNING"] + [a for item in TINY for a in ("--set", item)]) == EXIT_OK
    run_dir = _summary(capsys)["run_dir"]
    assert run_dir.startswith(str(tmp_path))
    assert (tmp_path / run_dir.split("/")[-1] / "data").is_dir()


@pytest.mark.slow
def test_grad_check_command(tmp_path, capsys):
    assert main(["grad-check", "--out", str(tmp_path), "--log-level", "WARNING"]) == EXIT_OK
    assert _summary(capsys)["max_relative_error"] < 1e-4
    assert (tmp_path / "grad_check.json").exists()
