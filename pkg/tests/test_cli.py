import subprocess
import sys

import numpy as np
import pytest

from spem.cli import main
from spem.dataset_io import read_dataset, read_pgm

TINY_MODEL = """\
# a small extractor keeps the command-line runs fast
model.stem_width = 2
model.stage_widths = 2,3
model.blocks = 1,1
model.strides = 1,2
model.fusion_width = 4
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    path = workdir / "p.spem"
    assert main(["gen", "--task", "posture", "--per-class", "5", "--seed", "2",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def tiny_cfg(workdir):
    path = workdir / "tiny.cfg"
    path.write_text(TINY_MODEL)
    return path


@pytest.fixture(scope="module")
def trained(workdir, dataset, tiny_cfg):
    out = workdir / "m.spnn"
    code = main(["train", "--dataset", str(dataset), "--config", str(tiny_cfg), "--epochs", "2",
                 "--threads", "1", "--out", str(out), "-q"])
    assert code == 0
    return out


def test_gen_output(dataset, capsys):
    ds = read_dataset(dataset)
    assert len(ds) == 20 and list(ds.class_counts()) == [5] * 4


def test_gen_byte_identical(workdir, dataset, capsys):
    again = workdir / "p2.spem"
    assert main(["gen", "--task", "posture", "--per-class", "5", "--seed", "2",
                 "--out", str(again)]) == 0
    out = capsys.readouterr().out
    assert "20 posture streams" in out and "mat 27x27" in out
    assert again.read_bytes() == dataset.read_bytes()


def test_gen_usage_errors(workdir, capsys):
    assert main(["gen", "--task", "posture", "--per-class", "0", "--out", str(workdir / "x")]) == 2
    assert main(["gen", "--task", "dance", "--per-class", "1", "--out", str(workdir / "x")]) == 2
    assert main([]) == 2
    bad = workdir / "bad.cfg"
    bad.write_text("velostat.nope = 1\n")
    assert main(["gen", "--task", "posture", "--per-class", "1", "--config", str(bad),
                 "--out", str(workdir / "x")]) == 2


def test_gen_unwritable(workdir):
    assert main(["gen", "--task", "posture", "--per-class", "1",
                 "--out", str(workdir / "missing" / "dir" / "x.spem")]) == 3


def test_train_history(trained, capsys):
    lines = trained.with_name("m.spnn.history").read_text().splitlines()
    assert len(lines) == 2
    epoch, loss, tr, va = lines[0].split(",")
    assert epoch == "1" and float(loss) > 0 and 0 <= float(tr) <= 1 and 0 <= float(va) <= 1


def test_train_reproducible(workdir, dataset, tiny_cfg, trained, capsys):
    capsys.readouterr()
    out = workdir / "m2.spnn"
    args = ["train", "--dataset", str(dataset), "--config", str(tiny_cfg), "--epochs", "2",
            "--threads", "1", "-q"]
    assert main(args + ["--out", str(out)]) == 0
    first = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("final loss")]
    assert main(args + ["--out", str(workdir / "m3.spnn")]) == 0
    second = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("final loss")]
    assert first == second
    assert out.read_bytes() == trained.read_bytes()


def test_train_errors(workdir, dataset, capsys):
    assert main(["train", "--dataset", str(workdir / "none.spem"), "--out", str(workdir / "o")]) == 3
    junk = workdir / "junk.spem"
    junk.write_bytes(b"SPEM\x01\x00")
    assert main(["train", "--dataset", str(junk), "--out", str(workdir / "o")]) == 4
    assert main(["train", "--dataset", str(dataset), "--epochs", "0", "--out", str(workdir / "o")]) == 2


def test_eval(workdir, dataset, trained, capsys):
    capsys.readouterr()
    conf = workdir / "c.csv"
    assert main(["eval", "--model", str(trained), "--dataset", str(dataset),
                 "--confusion", str(conf)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ")
    rows = [list(map(int, r.split(","))) for r in conf.read_text().splitlines()]
    assert np.array(rows).sum(axis=1).tolist() == [5] * 4


def test_eval_partitions(workdir, dataset, trained, capsys):
    capsys.readouterr()
    conf = workdir / "part.csv"
    assert main(["eval", "--model", str(trained), "--dataset", str(dataset), "-q",
                 "--partitions", "train,test", "--confusion", str(conf)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("train accuracy") and out[1].startswith("test accuracy")
    assert (workdir / "part_train.csv").exists() and (workdir / "part_test.csv").exists()
    assert main(["eval", "--model", str(trained), "--dataset", str(dataset),
                 "--partitions", "bogus"]) == 2


def test_eval_mismatch(workdir, trained):
    act = workdir / "a.spem"
    assert main(["gen", "--task", "activity", "--per-class", "1", "--out", str(act)]) == 0
    assert main(["eval", "--model", str(trained), "--dataset", str(act)]) == 4
    bad = workdir / "bad.spnn"
    bad.write_bytes(b"SPNNxx")
    assert main(["eval", "--model", str(bad), "--dataset", str(act)]) == 4


def test_render(workdir, dataset, capsys):
    outdir = workdir / "frames"
    assert main(["render", "--dataset", str(dataset), "--sample", "3", "--outdir", str(outdir),
                 "--montage", str(workdir / "m.png")]) == 0
    files = sorted(outdir.glob("*.pgm"))
    assert [f.name for f in files] == [f"frame_{k:02d}.pgm" for k in range(10)]
    ds = read_dataset(dataset)
    assert np.array_equal(read_pgm(files[4]), ds.pixels[3, 4, ..., 0])
    assert (workdir / "m.png").stat().st_size > 0
    assert main(["render", "--dataset", str(dataset), "--sample", "99",
                 "--outdir", str(outdir)]) == 2


def test_verify_passes(capsys):
    assert main(["verify", "--suite", "formats", "--suite", "velostat_dynamics"]) == 0
    assert "2/2 suites passed" in capsys.readouterr().out


def test_verify_fault_fails(capsys):
    assert main(["verify", "--suite", "gradcheck", "--inject-fault", "backward"]) == 4
    out = capsys.readouterr().out
    assert "failed: gradcheck" in out
    assert main(["verify", "--suite", "nope"]) == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "spem.cli", "--help"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "verify" in proc.stdout
