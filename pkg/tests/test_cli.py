import csv
import json

import pytest

from airfi.checkpoint import load_checkpoint
from airfi.cli import main
from airfi.csi_core import load_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    from conftest import TINY_FLAT

    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--envs", "3", "--classes", "4", "--per-class", "3", "--seed", "5",
                 "--out", str(root / "data")]) == 0
    (root / "cfg.json").write_text(json.dumps(TINY_FLAT))
    return root


def test_generate_writes_dataset(workspace):
    data = load_dataset(workspace / "data")
    assert len(data) == 36 and data.num_classes == 4 and data.env_ids == {0, 1, 2}


def test_train_evaluate_export_fewshot(workspace, capsys):
    w = workspace
    assert main(["train", "--data", str(w / "data"), "--holdout-env", "2", "--config", str(w / "cfg.json"),
                 "--out", str(w / "m.ckpt")]) == 0
    model = load_checkpoint(w / "m.ckpt")
    assert model.source_envs == (0, 1)
    with open(str(w / "m.ckpt") + ".losses.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "L_ce", "L_re", "L_ad", "L_MMD", "total"] and len(rows) == 4

    assert main(["evaluate", "--ckpt", str(w / "m.ckpt"), "--data", str(w / "data"), "--env", "2",
                 "--out", str(w / "t.json")]) == 0
    table = json.loads((w / "t.json").read_text())
    assert table["env_index_label"] == "AB-C"
    assert set(table) == {"per_class", "overall", "env_index_label", "n_per_class"}
    assert "AB-C" in capsys.readouterr().out

    assert main(["export-features", "--ckpt", str(w / "m.ckpt"), "--data", str(w / "data"),
                 "--out", str(w / "f.csv")]) == 0
    with open(w / "f.csv") as fh:
        assert len(list(csv.reader(fh))) == 37

    target = load_dataset(w / "data").filter_envs([2])
    from airfi.csi_core import save_dataset
    save_dataset(target, w / "target")
    assert main(["fewshot", "--ckpt", str(w / "m.ckpt"), "--target-samples", str(w / "target"), "--k", "4",
                 "--out", str(w / "m2.ckpt")]) == 0
    adapted = load_checkpoint(w / "m2.ckpt")
    assert adapted.fingerprint == model.fingerprint


def test_errors_exit_nonzero(workspace, capsys):
    assert main(["evaluate", "--ckpt", str(workspace / "missing.ckpt"), "--data", str(workspace / "data")]) == 2
    assert "missing.ckpt" in capsys.readouterr().err
    (workspace / "bad.json").write_text(json.dumps({"train.nope": 1}))
    assert main(["train", "--data", str(workspace / "data"), "--holdout-env", "2",
                 "--config", str(workspace / "bad.json"), "--out", str(workspace / "x.ckpt")]) == 2
    with pytest.raises(SystemExit):
        main(["train"])
