import json

import pytest

from bevloc.cli import build_parser, main
from bevloc.config import ConfigError, ExperimentConfig, dump_config, from_dict, load_config

TINY = """\
data: {n_locations: 5, n_test: 2, video_seconds: 2, n_synthetic: 3}
fit: {iters: 10, n_gaussians: 64}
stage1: {epochs: 2, batch_size: 3}
stage2: {epochs: 1, batch_size: 3, k_real: 2, k_synth: 2}
"""


def test_desk_preset():
    cfg = load_config(None)
    assert cfg == ExperimentConfig.desk()
    assert cfg.data.elevations == (45.0,) and cfg.data.fps == 2 and cfg.data.video_seconds == 12
    assert cfg.stage1.epochs <= 30 and cfg.stage2.negatives == "synthetic"
    assert cfg.eval.k == 32


def test_published_defaults_are_kept_on_dataclasses():
    full = ExperimentConfig()
    assert (full.stage1.batch_size, full.stage1.epochs) == (140, 140)
    assert (full.stage1.lr_encoder, full.stage1.lr_other) == (2e-5, 2e-4)
    assert full.data.elevations == (45.0, 30.0)


def test_yaml_overlay(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("stage1: {epochs: 3}\ndata: {elevations: [30, 45]}\nmodel: {tau_init: 1}\n")
    cfg = load_config(p)
    assert cfg.stage1.epochs == 3 and cfg.stage1.batch_size == 8
    assert cfg.data.elevations == (30.0, 45.0)
    assert isinstance(cfg.model.tau_init, float)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"stage1": {"epoch": 3}})
    with pytest.raises(ConfigError):
        from_dict({"optimizer": {}})
    p = tmp_path / "bad.yaml"
    p.write_text("stage1: [1, 2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(p)


def test_dump_round_trip(tmp_path):
    cfg = ExperimentConfig.desk().with_seed(4)
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert {cfg.data.seed, cfg.fit.seed, cfg.stage1.seed, cfg.stage2.seed} == {4}


def test_parser_surface():
    p = build_parser()
    a = p.parse_args(["eval", "--data", "d", "--checkpoint", "c.pt", "--config", "x.yaml", "--seed", "3", "--out", "o"])
    assert (a.command, a.config, a.seed, a.out, a.k) == ("eval", "x.yaml", 3, "o", None)
    a = p.parse_args(["train-stage2", "--data", "d", "--strategy", "fine_tune", "--negatives", "in-batch"])
    assert a.strategy == "fine_tune" and a.negatives == "in-batch"
    with pytest.raises(SystemExit):
        p.parse_args(["ablate", "--data", "d", "--table", "z"])


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "none.pt")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("stage9: {}\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_stage2_without_checkpoint_is_an_error(tmp_path):
    assert main(["train-stage2", "--data", str(tmp_path), "--strategy", "freeze"]) == 2


def test_train_before_reconstruct_explains(tmp_path, capsys):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    data = tmp_path / "d"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train-stage1", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 2
    assert "reconstruct" in capsys.readouterr().err


@pytest.mark.slow
def test_cli_end_to_end(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    c, data, run = str(cfg), str(tmp_path / "d"), tmp_path / "run"
    assert main(["gen-data", "--config", c, "--out", data]) == 0
    assert main(["reconstruct", "--config", c, "--out", data]) == 0
    assert main(["train-stage1", "--config", c, "--data", data, "--out", str(run)]) == 0
    assert main(["train-stage2", "--config", c, "--data", data, "--stage1", str(run / "stage1.pt"),
                 "--out", str(run)]) == 0
    assert main(["eval", "--config", c, "--data", data, "--checkpoint", str(run / "stage2.pt"),
                 "--out", str(run / "ev")]) == 0
    metrics = json.loads((run / "ev" / "metrics.json").read_text())
    assert set(metrics) == {"drone->satellite", "satellite->drone"}
    assert set(metrics["drone->satellite"]["final"]) == {"R@1", "R@5", "R@10", "AP"}
    assert main(["ablate", "--config", c, "--data", data, "--table", "c", "--n-seeds", "1", "--ks", "1", "2",
                 "--out", str(run / "ab")]) == 0
    assert main(["plot", "--config", c, "--results", str(run / "ab"), "--out", str(run / "fig")]) == 0
    assert (run / "fig" / "ablation_c.png").exists()
