import subprocess
import sys

import numpy as np
import pytest

from trace_forge.cli import main
from trace_forge.geometry import write_rig
from trace_forge.synthgen import Dataset, export_masks
from trace_forge.trace import read_trace


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    assert main(["generate", "--scenes", "20", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture
def mask_dir(small_dataset, tmp_path):
    ds = Dataset(small_dataset)
    s = ds.load(ds.ids("test")[0])
    export_masks(s, tmp_path / "masks")
    write_rig(ds.rig, tmp_path / "rig.txt")
    return tmp_path, s


def test_generate_twenty_scenes(generated):
    ds = Dataset(generated)
    assert len(ds) == 40
    assert ds.manifest.header["seed"] == "1"
    assert [len(ds.ids(k)) for k in ("train", "val", "test")] == [32, 4, 4]


def test_validate(generated, capsys):
    assert main(["validate", str(generated)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_broken(generated, tmp_path, capsys):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(generated, bad)
    victim = next((bad / "samples").iterdir())
    victim.write_bytes(victim.read_bytes()[:100])
    assert main(["validate", str(bad)]) == 2
    assert "problem" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "absent")]) == 1


def test_usage_errors(capsys, tmp_path):
    assert main(["generate", "--scenes", "20", "--out", str(tmp_path), "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["generate", "--scenes", "3", "--out", str(tmp_path / "x")]) == 1
    assert main(["--help"]) == 0


def test_trace_geometric(mask_dir, capsys):
    root, s = mask_dir
    out = root / "out"
    args = ["trace-geometric", "--masks", str(root / "masks"), "--rig", str(root / "rig.txt"),
            "--out", str(out), "--eye", s.eye]
    assert main(args) == 0
    path = out / f"trace_{s.eye}.txt"
    tr = read_trace(path)
    assert tr.eye == s.eye
    assert np.mean(np.abs(tr.radii_mm - s.truth.radii_mm)) < 0.1
    first = path.read_bytes()
    assert main(args) == 0
    assert path.read_bytes() == first
    assert sorted(p.name for p in root.iterdir()) == ["masks", "out", "rig.txt"]


def test_trace_geometric_both_eyes(small_dataset, tmp_path):
    ds = Dataset(small_dataset)
    scene = ds.manifest.entry(ds.ids("test")[0]).scene
    for e in ds.manifest.entries:
        if e.scene == scene:
            export_masks(ds.load(e.sample_id), tmp_path / "m" / e.eye)
    write_rig(ds.rig, tmp_path / "rig.txt")
    assert main(["trace-geometric", "--masks", str(tmp_path / "m"), "--rig", str(tmp_path / "rig.txt"),
                 "--out", str(tmp_path / "o")]) == 0
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"trace_left.txt", "trace_right.txt"}


def test_trace_geometric_missing_mask(mask_dir):
    root, _ = mask_dir
    (root / "masks" / "mask_2.png").unlink()
    assert main(["trace-geometric", "--masks", str(root / "masks"), "--rig", str(root / "rig.txt"),
                 "--out", str(root / "out")]) == 1


def test_trace_geometric_degenerate(mask_dir, capsys):
    from PIL import Image

    root, _ = mask_dir
    for k in range(4):
        Image.fromarray(np.zeros((64, 64), np.uint8)).save(root / "masks" / f"mask_{k}.png")
    assert main(["trace-geometric", "--masks", str(root / "masks"), "--rig", str(root / "rig.txt"),
                 "--out", str(root / "out")]) == 2
    assert "degenerate" in capsys.readouterr().err


def test_plot(small_dataset, tmp_path):
    ds = Dataset(small_dataset)
    trace = small_dataset / ds.manifest.entries[0].trace_path
    out = tmp_path / "p" / "x.svg"
    assert main(["plot", "--truth", str(trace), "--pred", str(trace), "--out", str(out), "--title", "t"]) == 0
    first = out.read_bytes()
    assert main(["plot", "--truth", str(trace), "--pred", str(trace), "--out", str(out), "--title", "t"]) == 0
    assert out.read_bytes() == first
    assert main(["plot", "--truth", str(tmp_path / "none.txt"), "--out", str(out)]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("TRACE 1\n")
    assert main(["plot", "--truth", str(bad), "--out", str(out)]) == 2


def test_train_and_config_override(small_dataset, tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"data = {small_dataset}\nepochs = 50\ninput_size = 32\nmodality = gray_depth\n")
    out = tmp_path / "m.tfck"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--epochs", "1"]) == 0
    from trace_forge.fusionnet import load_checkpoint

    model = load_checkpoint(out)
    assert model.spec.input_size == 32 and model.modality == "gray_depth"
    cfg.write_text("colour = red\n")
    assert main(["train", "--config", str(cfg), "--data", str(small_dataset), "--out", str(out)]) == 1
    assert main(["train", "--data", str(tmp_path / "nothing"), "--out", str(out)]) == 1


def test_env_seed(monkeypatch):
    from trace_forge.cli import parse_args

    monkeypatch.setenv("TRACE_FORGE_SEED", "7")
    from trace_forge.cli import _default_seed

    assert _default_seed() == 7
    assert parse_args(["validate", "x"], _default_seed()).seed == 7
    assert parse_args(["validate", "x", "--seed", "3"], _default_seed()).seed == 3
    monkeypatch.delenv("TRACE_FORGE_SEED")
    assert _default_seed() == 42


def test_evaluate(generated, tmp_path):
    grid = tmp_path / "grid.txt"
    grid.write_text("modalities = gray_depth\nfusions = late_max\nepochs = 1\ninput_size = 32\n")
    out = tmp_path / "ev"
    assert main(["evaluate", "--grid", str(grid), "--data", str(generated), "--out", str(out), "--geometric"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"report.json", "table.tsv", "checkpoints", "geometric.tsv"} <= names
    assert {"case_best.svg", "case_median.svg", "case_worst.svg"} <= names
    from trace_forge.evalharness import read_report

    rep = read_report(out / "report.json")
    assert rep.config["seeds"] == [42]
    assert len(rep.test_ids) == 4


def test_evaluate_small_test_split(small_dataset, tmp_path, capsys):
    grid = tmp_path / "grid.txt"
    grid.write_text(f"data = {small_dataset}\nepochs = 1\ninput_size = 32\nseeds = 5\n")
    out = tmp_path / "ev"
    assert main(["evaluate", "--grid", str(grid), "--out", str(out)]) == 0
    assert "skipping case plots" in capsys.readouterr().err
    assert not any(p.name.startswith("case_") for p in out.iterdir())
    assert main(["evaluate", "--grid", str(tmp_path / "none.txt"), "--out", str(out)]) == 1


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "trace_forge.cli", "validate", str(tmp_path / "none")],
                       capture_output=True, text=True)
    assert r.returncode == 1 and "not found" in r.stderr and r.stdout == ""
