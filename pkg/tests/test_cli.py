import json

import numpy as np
import pytest

from cpmr.cli import main
from cpmr.errors import ConfigError
from cpmr.runconfig import RunConfig


def write_raw_log(path, seed=0, n_users=7, n_items=7, n_days=14, per_day=5):
    rng = np.random.default_rng(seed)
    lines = []
    for day in range(n_days):
        for _ in range(per_day):
            lines.append(f"u{rng.integers(n_users)},i{rng.integers(n_items)},"
                         f"5.0,{day * 86400}")
    path.write_text("\n".join(lines) + "\n")


def write_config(path, data_path, out_dir, extra=()):
    lines = [f"data.path={data_path}",
             f"output.dir={out_dir}",
             "model.d=4", "model.s_days=3", "model.taylor_order=3",
             "train.lr=0.01", "train.n_tbptt=4", "train.n_neg=2",
             "train.max_epochs=2", "train.patience=5",
             *extra]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture()
def workspace(tmp_path):
    raw = tmp_path / "raw.csv"
    write_raw_log(raw)
    out = tmp_path / "out"
    rc = main(["preprocess", "--input", str(raw), "--format", "amazon_csv",
               "--output", str(out), "--k-core", "2"])
    assert rc == 0
    cfg = tmp_path / "run.cfg"
    write_config(cfg, out / "dataset.bin", out)
    return tmp_path, out, cfg


def test_preprocess_emits_dataset_and_summary(workspace, capsys):
    tmp_path, out, _ = workspace
    assert (out / "dataset.bin").exists()


def test_preprocess_idempotent(workspace):
    tmp_path, out, _ = workspace
    first = (out / "dataset.bin").read_bytes()
    raw = tmp_path / "raw.csv"
    rc = main(["preprocess", "--input", str(raw), "--format", "amazon_csv",
               "--output", str(out), "--k-core", "2"])
    assert rc == 0
    assert (out / "dataset.bin").read_bytes() == first


def test_preprocess_missing_input(tmp_path, capsys):
    rc = main(["preprocess", "--input", str(tmp_path / "nope.csv"),
               "--format", "amazon_csv", "--output", str(tmp_path)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_preprocess_overfiltered(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    raw.write_text("a,b,1.0,0\nc,d,1.0,86400\n")
    rc = main(["preprocess", "--input", str(raw), "--format", "amazon_csv",
               "--output", str(tmp_path), "--k-core", "5"])
    assert rc == 2


def test_train_eval_round_trip(workspace, capsys):
    tmp_path, out, cfg = workspace
    rc = main(["train", "--config", str(cfg)])
    assert rc == 0
    assert (out / "checkpoint.bin").exists()
    assert (out / "train.log").exists()
    capsys.readouterr()

    rc = main(["eval", "--config", str(cfg), "--checkpoint",
               str(out / "checkpoint.bin"), "--split", "test"])
    assert rc == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    report = json.loads(line)
    assert 0.0 < report["mrr"] <= 1.0
    assert report["config"]["split"] == "test"
    # metrics file accumulates
    assert (out / "metrics.jsonl").read_text().count("\n") == 1


def test_eval_reproduces_training_validation_metric(workspace, capsys):
    """Checkpoint round trip: eval --split val equals the trainer's best
    validation MRR for the saved parameters."""
    tmp_path, out, cfg = workspace
    main(["train", "--config", str(cfg)])
    best = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    main(["eval", "--config", str(cfg), "--checkpoint",
          str(out / "checkpoint.bin"), "--split", "val"])
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["mrr"] == pytest.approx(best["best_val_mrr"], abs=1e-12)


def test_eval_tampered_checkpoint(workspace, capsys):
    tmp_path, out, cfg = workspace
    main(["train", "--config", str(cfg)])
    ck = out / "checkpoint.bin"
    raw = bytearray(ck.read_bytes())
    raw[:4] = b"XXXX"
    ck.write_bytes(bytes(raw))
    capsys.readouterr()
    rc = main(["eval", "--config", str(cfg), "--checkpoint", str(ck)])
    assert rc == 2


def test_sweep_writes_csv(workspace, capsys):
    tmp_path, out, cfg = workspace
    rc = main(["sweep", "--config", str(cfg), "--param", "s_days",
               "--values", "2,3"])
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "s_days,mrr,recall_at_10"
    assert len(lines) == 3
    assert [json.loads(l)["s_days"] for l in
            capsys.readouterr().out.strip().splitlines()[-2:]] == [2, 3]


def test_sweep_n_tbptt(workspace):
    tmp_path, out, cfg = workspace
    rc = main(["sweep", "--config", str(cfg), "--param", "n_tbptt",
               "--values", "2"])
    assert rc == 0
    assert (out / "sweep.csv").read_text().startswith("n_tbptt,")


def test_ablate_forwards_variant(workspace, capsys):
    tmp_path, out, cfg = workspace
    rc = main(["ablate", "--config", str(cfg), "--variant", "wo_fusion"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["config"]["variant"] == "wo_fusion"
    assert report["config"]["disable_fusion"] is True


def test_unknown_config_field_exit_code(workspace, capsys):
    tmp_path, out, _ = workspace
    bad = tmp_path / "bad.cfg"
    write_config(bad, out / "dataset.bin", out, extra=["model.dd=4"])
    rc = main(["train", "--config", str(bad)])
    assert rc == 2
    assert "model.dd" in capsys.readouterr().err


def test_missing_required_config_field(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("output.dir=.\n")
    rc = main(["train", "--config", str(cfg)])
    assert rc == 2


# -- run configuration parsing ------------------------------------------------


def test_runconfig_defaults_and_echo(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data.path=ds.bin\n# comment\n\nmodel.d=8\nseeds=3,4\n")
    run = RunConfig.from_file(cfg)
    assert run.model.d == 8
    assert run.model.s_days == 5                 # untouched default
    assert run.seeds == [3, 4]
    assert run.train.seed == 3                   # first seed drives training
    echo = run.echo()
    assert "train.n_tbptt=20" in echo            # defaults echoed
    assert "model.d=8" in echo
    assert "eval.split=test" in echo


def test_runconfig_bad_line(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data.path=x\nnot a kv line\n")
    with pytest.raises(ConfigError, match="line|kv|key=value"):
        RunConfig.from_file(cfg)


def test_runconfig_bool_coercion(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data.path=x\nmodel.literal_update=true\n"
                   "eval.filter_interacted=no\n")
    run = RunConfig.from_file(cfg)
    assert run.model.literal_update is True
    assert run.eval_filter is False
    cfg.write_text("data.path=x\nmodel.literal_update=maybe\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(cfg)


def test_runconfig_with_seed(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data.path=x\nseeds=1,2\n")
    run = RunConfig.from_file(cfg)
    other = run.with_seed(9)
    assert other.train.seed == 9 and run.train.seed == 1
    assert other.model is run.model
