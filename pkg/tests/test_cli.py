import csv
import json

import pytest

from vinet import cli, formats
from vinet.config import ConfigError, RunConfig, dump_config, load_config, parse_value

TINY = """\
# small enough for a test run
sim.duration = 1.2
sim.image_size = 8, 8
sim.n_landmarks = 300
sim.world_extent = 6
model.image_size = 8, 8
model.conv_channels = 2, 3
model.imu_hidden = 3
model.core_hidden = 4
train.epochs = 2
train.window = 4
data.n_sequences = 3
eval.segments = 0.5, 1.0
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    assert cli.main(["generate", "--config", str(d / "tiny.cfg"), "--out", str(d / "data")]) == 0
    return d


def test_generate_layout(workdir):
    data = workdir / "data"
    for split in ("train", "val", "test"):
        assert len(list((data / split).iterdir())) == 1
    cfg = load_config(data / "config.txt")
    assert cfg.sim.duration == 1.2 and cfg.model.core_hidden == 4


def test_train_eval_robustness_pipeline(workdir):
    d, cfg = workdir, str(workdir / "tiny.cfg")
    ckpt = d / "m.ckpt"
    assert cli.main(["train", str(d / "data"), "--config", cfg, "--out", str(ckpt)]) == 0
    assert formats.load_checkpoint(ckpt).epoch == 2
    rows = list(csv.DictReader(open(f"{ckpt}.curve.csv")))
    assert [r["epoch"] for r in rows] == ["0", "1", "2"]

    test_seq = next((d / "data" / "test").iterdir())
    out = d / "metrics.json"
    traj = d / "pred.txt"
    assert cli.main(["eval", str(ckpt), str(test_seq), "--config", cfg, "--out", str(out),
                     "--trajectory", str(traj)]) == 0
    metrics = json.loads(out.read_text())
    assert metrics["ate_m"] >= 0 and metrics["path_length_m"] > 0
    assert len(formats.read_trajectory(traj)) == 12

    rob = d / "rob.csv"
    assert cli.main(["robustness", str(ckpt), "--sequence", str(test_seq), "--out", str(rob),
                     "--values", "0", "10"]) == 0
    assert len(rob.read_text().splitlines()) == 3
    assert cli.main(["robustness", str(ckpt), "--sequence", str(test_seq), "--out", str(rob), "--sync",
                     "--values", "0", "100"]) == 0


def test_train_is_reproducible(workdir):
    d, cfg = workdir, str(workdir / "tiny.cfg")
    for name in ("a.ckpt", "b.ckpt"):
        assert cli.main(["train", str(d / "data"), "--config", cfg, "--out", str(d / name), "--seed", "3"]) == 0
    assert (d / "a.ckpt").read_bytes() == (d / "b.ckpt").read_bytes()


def test_modes_command(workdir):
    d = workdir
    out = d / "modes.csv"
    assert cli.main(["modes", str(d / "data"), "--config", str(d / "tiny.cfg"), "--set", "train.epochs=1",
                     "--out", str(out)]) == 0
    modes = [r["mode"] for r in csv.DictReader(open(out))]
    assert sorted(set(modes)) == ["SE3", "joint", "se3"]


def test_missing_path_exit_code(tmp_path):
    assert cli.main(["eval", str(tmp_path / "none.ckpt"), str(tmp_path), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["train", str(tmp_path / "nodata"), "--out", str(tmp_path / "m")]) == 2


def test_bad_config_exit_code(tmp_path):
    assert cli.main(["generate", "--set", "train.nope=1", "--out", str(tmp_path / "d")]) == 3
    assert cli.main(["generate", "--set", "sim.duration=abc", "--out", str(tmp_path / "d")]) == 3
    assert cli.main(["generate", "--set", "sim.image_size=16,16", "--out", str(tmp_path / "d")]) == 3
    assert not (tmp_path / "d").exists()


def test_malformed_checkpoint_exit_code(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    assert cli.main(["eval", str(tmp_path / "bad.ckpt"), str(tmp_path), "--out", str(tmp_path / "x")]) == 6


def test_gradcheck_command():
    assert cli.main(["gradcheck", "--repeats", "1"]) == 0


def test_config_text_round_trip(tmp_path):
    cfg = load_config(None, ["data.augment_deg=0,10", "train.lr_final=1e-5", "train.clip_norm=none"])
    assert cfg.data.augment_deg == (0.0, 10.0)
    assert cfg.train.clip_norm is None
    path = tmp_path / "c.txt"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert load_config(None) == RunConfig()


def test_config_errors_are_located(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("sim.duration = 3\nthis is wrong\n")
    with pytest.raises(ConfigError, match=":2"):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(None, ["train.window=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["nosuch.key=1"])


def test_parse_value():
    assert parse_value("1, 2", (0, 0)) == (1, 2)
    assert parse_value("none", None) is None
    assert parse_value("yes", False) is True


def test_nested_tuple_values():
    cfg = load_config(None, ["train.ratio_schedule=0.5, 50; 1, 0.5"])
    assert cfg.train.ratio_schedule == ((0.5, 50.0), (1.0, 0.5))
