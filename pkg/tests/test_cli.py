import json

import numpy as np
import pytest

from guidedflow import checkpoint as ckpt
from guidedflow import cli
from guidedflow.dataset import read_manifest
from guidedflow.flo import read_flo


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["make-data", "--kind", "occluder_box", "--count", "4", "--out", str(root / "data"),
                     "--height", "32", "--width", "32", "--seed", "1"]) == 0
    (root / "small.ini").write_text(
        "[model]\ndepth = 1\nfeat_channels = 8\nmax_disp = 2\n"
        "[train]\niterations = 3\nbatch_size = 2\nlr = 1e-3\nlog_every = 1\n"
        "data = data/manifest.txt\ncheckpoint = out/model.gfck\n"
    )
    (root / "out").mkdir()
    return root


def test_make_data_writes_manifest(workspace):
    entries = read_manifest(workspace / "data" / "manifest.txt")
    assert len(entries) == 4


def test_train_evaluate_infer(workspace, capsys):
    cfg = str(workspace / "small.ini")
    assert cli.main(["train", "--config", cfg]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    assert [r["iteration"] for r in lines] == [0, 1, 2]
    assert all(np.isfinite(r["total"]) for r in lines)
    model = workspace / "out" / "model.gfck"
    assert model.is_file()

    assert cli.main(["evaluate", "--checkpoint", str(model), "--data",
                     str(workspace / "data" / "manifest.txt")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["samples"] == 4
    for key in ("epe_all", "epe_noc", "epe_occ", "epe_boundary", "f1_all", "occ_iou", "per_level_epe"):
        assert key in report

    e = read_manifest(workspace / "data" / "manifest.txt")[0]
    out = workspace / "infer"
    assert cli.main(["infer", "--checkpoint", str(model), "--img1", str(e.img1), "--img2", str(e.img2),
                     "--out", str(out), "--dump-sgu"]) == 0
    flow = read_flo(out / "flow.flo")
    assert flow.shape == (2, 32, 32)
    assert (out / "flow.png").is_file()
    assert sorted(p.name for p in out.glob("interp_map_level*.png")) == ["interp_map_level1.png"]


def test_train_is_deterministic(workspace, tmp_path):
    cfg = str(workspace / "small.ini")
    a, b = tmp_path / "a.gfck", tmp_path / "b.gfck"
    assert cli.main(["train", "--config", cfg, "--checkpoint", str(a), "--quiet"]) == 0
    assert cli.main(["train", "--config", cfg, "--checkpoint", str(b), "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli.main(["train", "--config", cfg, "--checkpoint", str(b), "--quiet", "--seed", "5"]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_resume_starts_from_checkpoint(workspace, tmp_path):
    cfg = str(workspace / "small.ini")
    a, b = tmp_path / "a.gfck", tmp_path / "b.gfck"
    assert cli.main(["train", "--config", cfg, "--checkpoint", str(a), "--quiet", "--iterations", "0"]) == 0
    assert cli.main(["train", "--config", cfg, "--checkpoint", str(b), "--quiet", "--iterations", "0",
                     "--resume", str(a), "--seed", "9"]) == 0
    assert ckpt.load(a).keys() == ckpt.load(b).keys()
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv, tag", [
    (["train", "--config", "missing.ini"], "missing_file"),
    (["evaluate", "--checkpoint", "nope.gfck", "--data", "nope.txt"], "missing_file"),
])
def test_errors_are_tagged(argv, tag, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith(f"error: {tag}: ")
    assert len(err.splitlines()) == 1


def test_bad_config_is_tagged(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[train]\nlearning_rate = 1\n")
    assert cli.main(["train", "--config", str(p)]) != 0
    assert capsys.readouterr().err.startswith("error: config_error: unknown config key")


def test_corrupt_checkpoint_is_tagged(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.gfck"
    bad.write_bytes(b"GFCK\x01\x00")
    assert cli.main(["evaluate", "--checkpoint", str(bad), "--data",
                     str(workspace / "data" / "manifest.txt")]) != 0
    assert capsys.readouterr().err.startswith("error: checkpoint_error: ")


def test_bad_image_size_is_tagged(workspace, tmp_path, capsys):
    from guidedflow.dataset import write_png

    img = tmp_path / "odd.png"
    write_png(np.zeros((3, 30, 32)), img)
    model = workspace / "out" / "model.gfck"
    if not model.is_file():
        assert cli.main(["train", "--config", str(workspace / "small.ini"), "--quiet"]) == 0
    assert cli.main(["infer", "--checkpoint", str(model), "--img1", str(img), "--img2", str(img),
                     "--out", str(tmp_path / "o")]) != 0
    assert "pad by 2 rows" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as e:
        cli.main(["train"])
    assert e.value.code == 2
