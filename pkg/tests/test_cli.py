import subprocess
import sys

import numpy as np
import pytest

from mgml.cli import main
from mgml.io import load_tensor

SMALL = """\
backbone.preset = tiny
num_classes = 8
crop.strategy = 7crop
optimizer.lr = 0.01
schedule.epochs = 2
schedule.batch_size = 16
schedule.milestones = 1
train.runs = 1
train.eval_every_epoch = true
data.per_class = 4
data.noise_std = 0.1
data.jitter = 2
"""


@pytest.fixture()
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["train", "--config", str(cfg), "--out", str(root / "a")]) == 0
    return cfg, root / "a"


def test_inspect_anchors_prints_seven_lines(capsys):
    assert main(["inspect-anchors", "--h", "8", "--w", "8", "--sigma", "0.5", "--strategy", "7crop"]) == 0
    assert capsys.readouterr().out.split() == ["0,0,4,4", "0,4,4,8", "4,0,8,4", "4,4,8,8", "2,2,6,6", "0,2,8,6",
                                               "2,0,6,8"]


def test_inspect_grid(capsys):
    assert main(["inspect-anchors", "--h", "8", "--w", "8", "--strategy", "grid", "--k", "1"]) == 0
    assert len(capsys.readouterr().out.split()) == 4


def test_degenerate_anchors_exit_2(capsys):
    assert main(["inspect-anchors", "--h", "2", "--w", "2", "--sigma", "0.3"]) == 2
    assert "larger sigma" in capsys.readouterr().err


def test_missing_key_exits_2_naming_it(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL.replace("optimizer.lr = 0.01\n", ""))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "optimizer.lr" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_key_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(SMALL + "optimizer.nesterov = true\n")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "optimizer.nesterov" in capsys.readouterr().err


def test_missing_checkpoint_exits_2(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.mgc")]) == 2
    assert main(["dump-features", "--checkpoint", str(tmp_path / "nope.mgc"), "--out", str(tmp_path / "d")]) == 2


def test_corrupt_checkpoint_exits_2(tmp_path):
    p = tmp_path / "bad.mgc"
    p.write_bytes(b"MGC1\x00")
    assert main(["eval", "--checkpoint", str(p)]) == 2


def test_train_writes_artifacts(trained):
    _, out = trained
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("epoch,lr,train_loss")
    assert len(rows) == 3
    assert (out / "checkpoint.mgc").read_bytes()[:4] == b"MGC1"
    assert "oa_mean" in (out / "summary.txt").read_text()


def test_same_seed_gives_identical_artifacts(trained, tmp_path):
    cfg, first = trained
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "checkpoint.mgc", "summary.txt"):
        assert (first / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_seed_override_changes_checkpoint(trained, tmp_path):
    cfg, first = trained
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "1"]) == 0
    assert (first / "checkpoint.mgc").read_bytes() != (tmp_path / "c" / "checkpoint.mgc").read_bytes()


def test_eval_reproduces_training_summary(trained, tmp_path, capsys):
    _, out = trained
    assert main(["eval", "--checkpoint", str(out / "checkpoint.mgc"), "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert printed == (tmp_path / "eval.txt").read_text()
    assert printed in (out / "summary.txt").read_text()


def test_dump_features_writes_thirteen_files(trained, tmp_path):
    _, out = trained
    dump = tmp_path / "dump"
    assert main(["dump-features", "--checkpoint", str(out / "checkpoint.mgc"), "--index", "3", "--out",
                 str(dump)]) == 0
    files = sorted(p.name for p in dump.iterdir())
    assert len(files) == 13 and "probabilities.txt" in files
    shapes = {"F0": (16, 16, 16), "F1": (16, 16, 16), "F2": (32, 8, 8), "F3": (64, 4, 4), "F4": (128, 2, 2),
              "G0": (16, 8, 8), "G1": (16, 8, 8), "G2": (32, 4, 4), "G3": (64, 2, 2), "G4": (128, 1, 1),
              "v3": (448, 1, 1), "v4": (896, 1, 1)}
    for name, shape in shapes.items():
        assert tuple(load_tensor(dump / f"{name}.mgt").shape) == (1,) + shape
    rows = {line.split()[0]: np.array([float(v) for v in line.split()[1:]])
            for line in (dump / "probabilities.txt").read_text().splitlines()[2:]}
    for name in ("p_mb", "p_ffb", "p_fem3", "p_fem4"):
        assert abs(rows[name].sum() - 1.0) < 1e-12
    assert abs(rows["p_sum"].sum() - 4.0) < 1e-12

    again = tmp_path / "again"
    main(["dump-features", "--checkpoint", str(out / "checkpoint.mgc"), "--index", "3", "--out", str(again)])
    for name in files:
        assert (dump / name).read_bytes() == (again / name).read_bytes(), name


def test_dump_index_out_of_range_exits_2(trained, tmp_path):
    _, out = trained
    assert main(["dump-features", "--checkpoint", str(out / "checkpoint.mgc"), "--index", "999", "--out",
                 str(tmp_path)]) == 2


def test_ablate_emits_four_rows(cfg, tmp_path, capsys):
    cfg.write_text(SMALL.replace("schedule.epochs = 2", "schedule.epochs = 1"))
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    table = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in table] == ["model", "baseline", "+FFB", "+FEM", "full"]
    assert (tmp_path / "ablation.csv").read_text().count("\n") == 5


def test_compare_crops_emits_two_rows(cfg, tmp_path, capsys):
    cfg.write_text(SMALL.replace("schedule.epochs = 2", "schedule.epochs = 1"))
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path), "--compare-crops"]) == 0
    rows = [line.split()[0] for line in capsys.readouterr().out.splitlines()[1:]]
    assert rows == ["MGML-FENet(tiny)-7crop", "MGML-FENet(tiny)-9crop"]
    assert (tmp_path / "crops.txt").exists()


def test_generated_images_train_from_directory(cfg, tmp_path):
    data = tmp_path / "scenes"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    dir_cfg = tmp_path / "dir.cfg"
    dir_cfg.write_text(SMALL.replace("schedule.epochs = 2", "schedule.epochs = 1")
                       + f"data.source = directory\ndata.dir = {data}\n")
    assert main(["train", "--config", str(dir_cfg), "--out", str(tmp_path / "o")]) == 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mgml", "inspect-anchors", "--h", "4", "--w", "4"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.splitlines()[4] == "1,1,3,3"
