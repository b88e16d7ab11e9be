import numpy as np
import pytest

from vehnet.cli import main
from vehnet.formats import (read_image, read_instances, write_image, write_instances, write_label_png,
                            write_probmap, InstanceRecord)
from vehnet.synthdata import SCENE_CLASSES


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().err


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """A tiny dataset and both models, trained for one epoch each."""
    root = tmp_path_factory.mktemp("chain")
    data = root / "data"
    steps = [
        ["synth", "--seed", 5, "--scenes", 10, "--out", data, "--size", "96x96",
         "--vehicles", "2,5"],
        ["train-seg", "--data", data, "--epochs", 1, "--batch", 10, "--lr", 0.1, "--lr-drops", "3,8",
         "--out", root / "seg.vnw", "--window", 32, "--stride", 32, "--channels", "4,8"],
        ["train-cls", "--data", data, "--epochs", 1, "--batch", 32, "--lr", 0.001, "--lr-drops", 30,
         "--out", root / "cls.vnw"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return root


def test_full_chain(chain, capsys):
    data, out = chain / "data", chain / "out"
    out.mkdir()
    tile = sorted((data / "test").glob("*_label.png"))[0]
    image = tile.with_name(tile.name.replace("_label", ""))
    gt_csv = tile.with_name(tile.name.replace("_label.png", "_gt.csv"))
    steps = [
        ["segment", "--model", chain / "seg.vnw", "--tile", image, "--window", 32, "--stride", 16,
         "--out", out / "pm"],
        ["extract", "--probmap", out / "pm", "--image", image, "--min-area", 32, "--context", 16,
         "--se", 3, "--connectivity", 8, "--out", out / "inst.csv"],
        ["classify", "--model", chain / "cls.vnw", "--image", image, "--instances", out / "inst.csv",
         "--out", out / "lab.csv"],
        ["count", "--instances", out / "lab.csv", "--gt", gt_csv, "--out", out / "report.txt"],
        ["heatmap", "--instances", out / "lab.csv", "--size", "96x96", "--sigma", 48,
         "--out", out / "heat.png"],
        ["eval", "--pred", out / "pm" / "labels.png", "--gt", tile, "--ignore", "clutter", "--erode", 3,
         "--out", out / "metrics.txt"],
    ]
    for argv in steps:
        code, err = run(capsys, *argv)
        assert code == 0, err
    for name in ["pm/manifest.txt", "pm/prob_car.png", "pm/labels.png", "inst.csv", "lab.csv",
                 "report.txt", "heat.png", "metrics.txt"]:
        assert (out / name).is_file(), name
    assert read_image(out / "heat.png").shape == (96, 96)
    assert "mean_rel_error=" in (out / "report.txt").read_text()
    assert "overall_accuracy=" in (out / "metrics.txt").read_text()


def test_dataset_layout(chain):
    data = chain / "data"
    assert [len(list((data / s).glob("*_label.png"))) for s in ("train", "val", "test")] == [7, 1, 2]


def test_training_is_byte_identical(chain, tmp_path):
    again = tmp_path / "seg.vnw"
    assert main(["train-seg", "--data", str(chain / "data"), "--epochs", "1", "--batch", "10",
                 "--lr", "0.1", "--lr-drops", "3,8", "--out", str(again), "--window", "32",
                 "--stride", "32", "--channels", "4,8"]) == 0
    assert again.read_bytes() == (chain / "seg.vnw").read_bytes()


def test_eval_identity(tmp_path, capsys):
    labels = np.random.default_rng(0).integers(0, 6, (40, 40)).astype(np.uint8)
    write_label_png(tmp_path / "gt.png", labels, SCENE_CLASSES)
    code, _ = run(capsys, "eval", "--pred", tmp_path / "gt.png", "--gt", tmp_path / "gt.png",
                  "--ignore", "clutter", "--erode", 0, "--out", tmp_path / "m.txt")
    assert code == 0
    assert "overall_accuracy=1.000000" in (tmp_path / "m.txt").read_text().splitlines()


def _one_blob_probmap(path):
    prob = np.zeros((5, 30, 30))
    prob[0] = 1.0
    prob[0, 10:14, 10:13] = 0.0
    prob[4, 10:14, 10:13] = 1.0
    write_probmap(path, prob, ("impervious_surface", "building", "tree", "low_vegetation", "car"))


def test_extract_single_blob(tmp_path, capsys):
    _one_blob_probmap(tmp_path / "pm")
    write_image(tmp_path / "img.png", np.zeros((30, 30, 3), np.uint8))
    argv = ["extract", "--probmap", tmp_path / "pm", "--image", tmp_path / "img.png", "--min-area", 1,
            "--se", 1, "--out"]
    assert run(capsys, *argv, tmp_path / "a.csv")[0] == 0
    recs = read_instances(tmp_path / "a.csv")
    assert len(recs) == 1 and recs[0].area_px == 12 and recs[0].tile_id == "img"
    assert run(capsys, *argv, tmp_path / "b.csv")[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_count_without_gt(tmp_path, capsys):
    recs = [InstanceRecord("t1", i, c, 0.9, 50, 5.0, 5.0, 0, 0, 9, 9)
            for i, c in enumerate(["car", "van", "rejected"])]
    write_instances(tmp_path / "lab.csv", recs)
    assert run(capsys, "count", "--instances", tmp_path / "lab.csv", "--out", tmp_path / "r.txt")[0] == 0
    assert (tmp_path / "r.txt").read_text() == "tile_id,pred\nt1,2\ntotal_pred=2\n"


@pytest.mark.parametrize("argv,code", [
    (["count", "--out", "x.txt"], 2),
    (["frobnicate"], 2),
    (["eval", "--pred", "missing.png", "--gt", "missing.png", "--out", "m.txt"], 1),
    (["extract", "--probmap", "nowhere", "--image", "x.png", "--out", "i.csv"], 1),
])
def test_errors_are_one_line(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    got, err = run(capsys, *argv)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("vehnet: error: ")
